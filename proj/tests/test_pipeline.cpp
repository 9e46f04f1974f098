#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "prefalign/pipeline.hpp"
#include "test_util.hpp"

using namespace prefalign;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return nlohmann::json::parse(is);
}

const std::vector<std::string> kAllStages{"extract",  "build-pairs", "pretrain",
                                          "train",    "generate",    "eval",
                                          "stats",    "report"};

LMConfig tiny_lm() {
  LMConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.n_kv_heads = 1;
  c.d_ff = 16;
  c.max_seq_len = 32;
  return c;
}

ModelParameters flat_scorer() {
  ModelParameters m = init_params(tiny_lm());
  std::fill(m.tok_embed.data.begin(), m.tok_embed.data.end(), 0.0);
  std::fill(m.head.data.begin(), m.head.data.end(), 0.0);
  return m;
}

}  // namespace

TEST_CASE("FNV-1a checksum known vectors") {
  CHECK(fnv1a64(nullptr, 0) == 14695981039346656037ull);
  CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar", 6) == 0x85944171f73967e8ull);

  const std::string dir = scratch_dir("checksum");
  write_file(dir + "/f.txt", "foobar");
  CHECK(file_checksum(dir + "/f.txt") == 0x85944171f73967e8ull);
  CHECK_THROWS_AS((void)file_checksum(dir + "/missing"), std::runtime_error);
}

TEST_CASE("stage seeds derive from the global seed and stage name") {
  const std::string name = "train";
  CHECK(stage_seed(42, name) == (42ull ^ fnv1a64(name.data(), name.size())));
  CHECK(stage_seed(42, "train") != stage_seed(42, "generate"));
  CHECK(stage_seed(42, "train") != stage_seed(43, "train"));
}

TEST_CASE("atomic_write leaves no temporary behind and replaces the target") {
  const std::string dir = scratch_dir("atomic");
  const std::string path = dir + "/out.txt";
  atomic_write(path, [](const std::string& p) { write_file(p, "first"); });
  CHECK(read_file(path) == "first");
  CHECK_FALSE(fs::exists(path + ".tmp"));
  atomic_write(path, [](const std::string& p) { write_file(p, "second"); });
  CHECK(read_file(path) == "second");
}

TEST_CASE("pipeline config parsing") {
  SUBCASE("all sections round-trip") {
    const PipelineConfig c = parse_pipeline_config_text(
        "# top comment\n"
        "[paths]\n"
        "notes_csv = /tmp/n.csv\n"
        "diagnoses_csv = /tmp/d.csv  # trailing comment\n"
        "gold = g.jsonl\nmid = m.jsonl\norig = o.jsonl\n"
        "workdir = /tmp/wd\n"
        "[extract]\nmin_words = 10\ncategory = Nursing/other\n"
        "[lm]\nd_model = 24\nn_layers = 2\nn_heads = 4\nn_kv_heads = 2\n"
        "d_ff = 48\nmax_seq_len = 128\nrope_base = 500\n"
        "[dpo]\nbeta = 0.25\nlearning_rate = 1e-4\nper_device_batch = 2\n"
        "grad_accum_steps = 4\nepochs = 3\n"
        "[metrics]\nlowercase = false\nembed_dim = 32\ncontext_mix = on\n"
        "[run]\nseed = 99\nholdout_fraction = 0.25\ngenerate_max_new = 16\n");
    CHECK(c.notes_csv == "/tmp/n.csv");
    CHECK(c.diagnoses_csv == "/tmp/d.csv");
    CHECK(c.workdir == "/tmp/wd");
    CHECK(c.min_words == 10);
    CHECK(c.lm.d_model == 24);
    CHECK(c.lm.rope_base == 500.0);
    CHECK(c.dpo.beta == 0.25);
    CHECK(c.dpo.grad_accum_steps == 4);
    CHECK_FALSE(c.metric_tok.lowercase);
    CHECK(c.metric_tok.strip_punct);  // untouched default
    CHECK(c.embed_dim == 32);
    CHECK(c.embed_context_mix);
    CHECK(c.seed == 99);
    CHECK(c.holdout_fraction == 0.25);
    CHECK(c.generate_max_new == 16);
  }
  SUBCASE("errors carry line numbers") {
    CHECK_THROWS_WITH_AS((void)parse_pipeline_config_text("[paths]\nbogus = x\n"),
                         doctest::Contains("config line 2"), std::runtime_error);
    CHECK_THROWS_WITH_AS((void)parse_pipeline_config_text("[nosuch]\nkey = 1\n"),
                         doctest::Contains("unknown section"), std::runtime_error);
    CHECK_THROWS_WITH_AS((void)parse_pipeline_config_text("[paths\n"),
                         doctest::Contains("malformed section"), std::runtime_error);
    CHECK_THROWS_WITH_AS((void)parse_pipeline_config_text("[run]\njust-a-token\n"),
                         doctest::Contains("key=value"), std::runtime_error);
    CHECK_THROWS_WITH_AS((void)parse_pipeline_config_text("[run]\nseed = abc\n"),
                         doctest::Contains("bad value"), std::runtime_error);
  }
  SUBCASE("load_pipeline_config") {
    const std::string dir = scratch_dir("cfg");
    write_file(dir + "/p.cfg", "[run]\nseed = 7\n");
    CHECK(load_pipeline_config(dir + "/p.cfg").seed == 7);
    CHECK_THROWS_AS((void)load_pipeline_config(dir + "/absent.cfg"),
                    std::runtime_error);
  }
}

TEST_CASE("validation collects every problem before failing") {
  PipelineConfig c;  // no paths at all
  c.holdout_fraction = 1.5;
  c.embed_dim = 0;
  try {
    run_pipeline(c);
    FAIL("expected PipelineValidationError");
  } catch (const PipelineValidationError& e) {
    CHECK(e.errors.size() >= 8);
    bool saw_notes = false, saw_holdout = false, saw_embed = false;
    for (const auto& err : e.errors) {
      if (err.find("notes_csv") != std::string::npos) saw_notes = true;
      if (err.find("holdout_fraction") != std::string::npos) saw_holdout = true;
      if (err.find("embed_dim") != std::string::npos) saw_embed = true;
    }
    CHECK(saw_notes);
    CHECK(saw_holdout);
    CHECK(saw_embed);
  }
}

TEST_CASE("full pipeline run, staleness skipping and manifest verification") {
  const std::string dir = scratch_dir("pipe");
  const SynthWorkspace ws = write_synth_workspace(dir + "/data", 10, 5);
  const PipelineConfig config =
      parse_pipeline_config_text(pipeline_config_text(ws, dir + "/work", 7));

  const RunSummary first = run_pipeline(config);
  CHECK(first.stages_run == kAllStages);
  CHECK(first.stages_skipped.empty());

  const std::vector<std::string> artifacts{
      "corpus.jsonl", "corpus_stats.json", "pairs.jsonl",  "base.ckpt",
      "dpo.ckpt",     "train_log.csv",     "candidates_dpo.jsonl",
      "candidates_base.jsonl",             "references.jsonl",
      "eval_report.csv", "per_pair.json",  "stats.json",   "report.csv",
      "report.txt",   "manifest.json"};
  for (const auto& name : artifacts) {
    CAPTURE(name);
    CHECK(fs::exists(dir + "/work/" + name));
  }

  // sequential sections rather than subcases: the expensive first run above
  // should happen exactly once

  {
    INFO("manifest contents");
    const nlohmann::json manifest = read_json(first.manifest_path);
    CHECK(manifest.at("seed").get<std::uint64_t>() == 7);
    CHECK(manifest.at("config_hash").get<std::string>().size() == 16);
    CHECK(manifest.at("artifacts").size() == 14);  // everything except itself
    CHECK(verify_manifest(dir + "/work").empty());
  }

  {
    INFO("a fresh workdir is fully skipped on the second run");
    const RunSummary second = run_pipeline(config);
    CHECK(second.stages_run.empty());
    CHECK(second.stages_skipped == kAllStages);
  }

  {
    INFO("deleting an intermediate re-runs it and everything downstream");
    fs::remove(dir + "/work/pairs.jsonl");
    const RunSummary rerun = run_pipeline(config);
    CHECK(rerun.stages_skipped == std::vector<std::string>{"extract"});
    CHECK(rerun.stages_run ==
          std::vector<std::string>{"build-pairs", "pretrain", "train", "generate",
                                   "eval", "stats", "report"});
  }

  {
    INFO("stats and per-pair artifacts are structurally sound");
    const nlohmann::json stats = read_json(dir + "/work/stats.json");
    REQUIRE(stats.is_array());
    REQUIRE(stats.size() == kMetricOrder.size());
    for (std::size_t i = 0; i < stats.size(); ++i) {
      CHECK(stats[i].at("metric").get<std::string>() == kMetricOrder[i]);
      const double p = stats[i].at("p_raw").get<double>();
      const double q = stats[i].at("p_adjusted").get<double>();
      CHECK(p >= 0.0);
      CHECK(q <= 1.0);
      CHECK(q >= p - 1e-15);  // BH never lowers a p-value
      CHECK(stats[i].at("adjustment").get<std::string>() == "benjamini_hochberg");
    }
    const nlohmann::json per_pair = read_json(dir + "/work/per_pair.json");
    const auto ids = per_pair.at("pair_ids").get<std::vector<std::string>>();
    CHECK_FALSE(ids.empty());
    for (const auto& name : kMetricOrder) {
      CHECK(per_pair.at("metrics").at(name).at("dpo").size() == ids.size());
      CHECK(per_pair.at("metrics").at(name).at("base").size() == ids.size());
    }
    const std::string table = read_file(dir + "/work/report.txt");
    CHECK(table.find("Metric") != std::string::npos);
    CHECK(table.find("Base") != std::string::npos);
    CHECK(table.find("DPO") != std::string::npos);
    CHECK(table.find("+/-") != std::string::npos);
  }

  {
    INFO("tampering is caught by verification");
    std::ofstream os(dir + "/work/report.csv", std::ios::app);
    os << "tampered\n";
    os.close();
    CHECK(verify_manifest(dir + "/work") == std::vector<std::string>{"report.csv"});
    fs::remove(dir + "/work/train_log.csv");
    CHECK(sorted(verify_manifest(dir + "/work")) ==
          std::vector<std::string>{"report.csv", "train_log.csv"});
  }

  {
    INFO("force re-runs every stage");
    const RunSummary forced = run_pipeline(config, /*force=*/true);
    CHECK(forced.stages_run == kAllStages);
    CHECK(verify_manifest(dir + "/work").empty());  // manifest rewritten
  }
}

TEST_CASE("two runs from identical configs are byte-identical") {
  const std::string dir = scratch_dir("repro");
  const SynthWorkspace ws = write_synth_workspace(dir + "/data", 8, 11);

  auto run_into = [&](const std::string& workdir) {
    PipelineConfig c =
        parse_pipeline_config_text(pipeline_config_text(ws, workdir, 21));
    return run_pipeline(c);
  };
  const RunSummary a = run_into(dir + "/work_a");
  const RunSummary b = run_into(dir + "/work_b");

  const nlohmann::json ma = read_json(a.manifest_path);
  const nlohmann::json mb = read_json(b.manifest_path);
  CHECK(ma.at("config_hash") == mb.at("config_hash"));  // workdir is excluded
  CHECK(ma.at("artifacts") == mb.at("artifacts"));
  CHECK(read_file(dir + "/work_a/report.csv") == read_file(dir + "/work_b/report.csv"));
  CHECK(read_file(dir + "/work_a/report.txt") == read_file(dir + "/work_b/report.txt"));

  // a different seed must change at least the checkpoints
  PipelineConfig c2 =
      parse_pipeline_config_text(pipeline_config_text(ws, dir + "/work_c", 22));
  const RunSummary c = run_pipeline(c2);
  const nlohmann::json mc = read_json(c.manifest_path);
  CHECK(mc.at("config_hash") != ma.at("config_hash"));
  CHECK(mc.at("artifacts").at("base.ckpt") != ma.at("artifacts").at("base.ckpt"));
}

TEST_CASE("two-system report formatting") {
  MetricReport report;
  report.metric_names = {"BLEU", "Perplexity"};
  report.has_baseline = true;
  report.aggregates["BLEU"] = {0.512, 0.08, 10};
  report.baseline_aggregates["BLEU"] = {0.401, 0.09, 10};
  report.deltas["BLEU"] = 0.111;
  report.aggregates["Perplexity"] = {12.0, 1.5, 10};
  report.baseline_aggregates["Perplexity"] = {14.25, 2.0, 10};
  report.deltas["Perplexity"] = -2.25;
  std::map<std::string, StatTestResult> stats;
  StatTestResult r;
  r.p_raw = 0.0312;
  r.p_adjusted = 0.0624;
  stats["BLEU"] = r;

  const std::string dir = scratch_dir("report");
  emit_report(report, stats, dir + "/r.csv", dir + "/r.txt", "SFT", "Aligned");

  const std::string csv = read_file(dir + "/r.csv");
  CHECK(csv.rfind("metric,mean_a,std_a,mean_b,std_b,delta,p\n", 0) == 0);
  CHECK(csv.find("\"BLEU\",0.401,0.09,0.512,0.08,0.111,0.0624") != std::string::npos);
  CHECK(csv.find("\"Perplexity\",14.25,2,12,1.5,-2.25,\n") != std::string::npos);

  const std::string table = read_file(dir + "/r.txt");
  CHECK(table.find("SFT") != std::string::npos);
  CHECK(table.find("Aligned") != std::string::npos);
  CHECK(table.find("0.401 +/- 0.090") != std::string::npos);
  CHECK(table.find("0.512 +/- 0.080") != std::string::npos);
  CHECK(table.find("+0.111") != std::string::npos);
  CHECK(table.find("-2.250") != std::string::npos);
  CHECK(table.find("0.0624") != std::string::npos);
  CHECK(table.find("--") != std::string::npos);  // metric without a test

  MetricReport empty;
  CHECK_THROWS_AS(emit_report(empty, {}, dir + "/x.csv", dir + "/x.txt"),
                  std::invalid_argument);
}

TEST_CASE("beta sweep rows and report") {
  const ModelParameters baseline = flat_scorer();
  const std::vector<std::string> texts{"alpha note", "second text", "third!",
                                       "one more sample"};

  // a randomly initialized policy: per-text perplexities vary, so the
  // paired t against the flat baseline is defined
  LMConfig vc = tiny_lm();
  vc.seed = 404;
  const ModelParameters varied = init_params(vc);

  std::vector<BetaSweepEntry> entries;
  entries.push_back({0.05, varied, {}});
  entries.push_back({0.1, baseline, {}});  // identical -> degenerate differences

  const auto rows = beta_sweep_rows(baseline, entries, texts, 0.05);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].configuration == "SFT");
  CHECK(rows[0].ppl.mean == doctest::Approx(259.0).epsilon(1e-9));
  CHECK(rows[0].ppl.stddev == doctest::Approx(0.0));
  CHECK(rows[1].configuration == "DPO (beta=0.05)");
  CHECK(rows[1].has_p);
  CHECK(rows[1].delta_vs_baseline ==
        doctest::Approx(rows[1].ppl.mean - rows[0].ppl.mean).epsilon(1e-12));
  CHECK(rows[2].configuration == "DPO (beta=0.1)");
  CHECK_FALSE(rows[2].has_p);  // zero-variance differences
  CHECK(rows[2].delta_vs_baseline == doctest::Approx(0.0));

  const std::string dir = scratch_dir("sweep");
  write_beta_sweep_report(rows, bonferroni_threshold(0.05, 2), dir + "/sweep.txt");
  const std::string body = read_file(dir + "/sweep.txt");
  CHECK(body.find("Configuration") != std::string::npos);
  CHECK(body.find("PPL (mean +/- std)") != std::string::npos);
  CHECK(body.find("Delta vs SFT") != std::string::npos);
  CHECK(body.find("SFT") != std::string::npos);
  CHECK(body.find("DPO (beta=0.05)") != std::string::npos);
  CHECK(body.find("n/a") != std::string::npos);
  CHECK(body.find("* p < 0.0250 (statistically significant after Bonferroni "
                  "correction)") != std::string::npos);

  CHECK_THROWS_AS((void)beta_sweep_rows(baseline, entries, {}, 0.05),
                  std::invalid_argument);
}
