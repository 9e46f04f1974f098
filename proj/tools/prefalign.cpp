// prefalign: preference-alignment toolkit CLI.
//
// Staged subcommands (extract, build-pairs, init-lm, pretrain, train,
// beta-sweep, generate, eval, stats, adjust, verify) plus `run`, which
// executes the whole pipeline from a config file with staleness skipping.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "prefalign/corpus.hpp"
#include "prefalign/dpo.hpp"
#include "prefalign/lm.hpp"
#include "prefalign/metrics.hpp"
#include "prefalign/pairs.hpp"
#include "prefalign/pipeline.hpp"
#include "prefalign/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prefalign;

namespace {

std::vector<std::pair<std::string, std::string>> read_id_text_jsonl(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ": malformed JSON on line " +
                               std::to_string(lineno));
    }
    out.emplace_back(j.at("pair_id").get<std::string>(),
                     j.at("text").get<std::string>());
  }
  return out;
}

std::vector<double> read_column_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::vector<double> values;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    try {
      std::size_t used = 0;
      const double v = std::stod(line, &used);
      if (used != line.size()) throw std::invalid_argument("trailing");
      values.push_back(v);
    } catch (const std::exception&) {
      if (lineno == 1) continue;  // tolerate a header row
      throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                               " is not a number");
    }
  }
  if (values.empty()) throw std::runtime_error(path + ": no numeric values");
  return values;
}

std::vector<int> prompt_ids(const std::string& text) {
  std::vector<int> ids{kBosId};
  const std::vector<int> bytes = tokenize(text);
  ids.insert(ids.end(), bytes.begin(), bytes.end());
  return ids;
}

json stat_to_json(const StatTestResult& r) {
  json j{{"statistic", r.statistic}, {"p_raw", r.p_raw},
         {"method", r.method},      {"adjustment", r.adjustment},
         {"n_effective", r.n_effective}, {"degenerate", r.degenerate}};
  if (r.p_adjusted) j["p_adjusted"] = *r.p_adjusted;
  return j;
}

void write_synthetic_workspace(const std::string& dir, std::size_t triples,
                               std::uint64_t seed) {
  fs::create_directories(dir);
  const auto in = [&](const std::string& name) {
    return (fs::path(dir) / name).string();
  };
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len_dist(6, 10);
  std::uniform_int_distribution<int> digit(0, 9);

  std::ofstream notes(in("notes.csv"), std::ios::binary);
  std::ofstream diags(in("diagnoses.csv"), std::ios::binary);
  notes << "ROW_ID,HADM_ID,CATEGORY,TEXT\n";
  diags << "HADM_ID,ICD9_CODE\n";
  std::vector<std::pair<std::string, std::string>> gold, mid, orig;
  for (std::size_t i = 0; i < triples; ++i) {
    std::string digits;
    do {
      digits.clear();
      const int len = len_dist(rng);
      for (int k = 0; k < len; ++k) digits.push_back(static_cast<char>('0' + digit(rng)));
    } while (std::all_of(digits.begin(), digits.end(),
                         [&](char c) { return c == digits[0]; }));
    std::string sorted = digits;
    std::sort(sorted.begin(), sorted.end());
    std::string rotated = sorted.substr(1) + sorted.substr(0, 1);
    const long row_id = static_cast<long>(i) + 1;
    const long hadm_id = 1000 + static_cast<long>(i);
    notes << row_id << ',' << hadm_id << ",Nursing/other," << digits << '\n';
    diags << hadm_id << ",4280\n";
    const std::string note_id = std::to_string(row_id);
    orig.emplace_back(note_id, digits);
    gold.emplace_back(note_id, sorted);
    mid.emplace_back(note_id, rotated);
  }
  // decoys the extraction filters must reject
  notes << triples + 1 << ',' << 9000 << ",Radiology,should be filtered out\n";
  notes << triples + 2 << ',' << 9001 << ",Nursing/other,wrong diagnosis code\n";
  diags << 9000 << ",4280\n";
  diags << 9001 << ",V428\n";
  notes.close();
  diags.close();
  write_tier_file(gold, in("gold.jsonl"));
  write_tier_file(mid, in("mid.jsonl"));
  write_tier_file(orig, in("orig.jsonl"));

  std::ofstream cfg(in("pipeline.cfg"), std::ios::binary);
  cfg << "[paths]\n"
      << "notes_csv = " << in("notes.csv") << "\n"
      << "diagnoses_csv = " << in("diagnoses.csv") << "\n"
      << "gold = " << in("gold.jsonl") << "\n"
      << "mid = " << in("mid.jsonl") << "\n"
      << "orig = " << in("orig.jsonl") << "\n"
      << "workdir = " << in("work") << "\n\n"
      << "[extract]\n"
      << "min_words = 1\n"
      << "category = Nursing/other\n\n"
      << "[lm]\n"
      << "d_model = 16\nn_layers = 1\nn_heads = 2\nn_kv_heads = 1\n"
      << "d_ff = 32\nmax_seq_len = 640\n\n"
      << "[dpo]\n"
      << "beta = 0.1\nlearning_rate = 1e-3\nper_device_batch = 4\n"
      << "grad_accum_steps = 1\nepochs = 1\nmax_prompt_tokens = 512\n\n"
      << "[metrics]\n"
      << "embed_dim = 16\n\n"
      << "[run]\n"
      << "seed = " << seed << "\nholdout_fraction = 0.2\n"
      << "generate_max_new = 12\n";
}

int run_cli(int argc, char** argv) {
  CLI::App app{"preference-alignment toolkit for clinical-note summarization"};
  app.require_subcommand(1);

  // ---- extract -------------------------------------------------------------
  auto* extract = app.add_subcommand("extract", "build the note corpus from CSVs");
  std::string x_notes, x_diags, x_out, x_stats_out, x_category = "Nursing/other";
  std::size_t x_min_words = 50;
  extract->add_option("--notes", x_notes, "notes CSV")->required();
  extract->add_option("--diagnoses", x_diags, "diagnoses CSV")->required();
  extract->add_option("--category", x_category, "category filter");
  extract->add_option("--min-words", x_min_words, "minimum word count");
  extract->add_option("--out", x_out, "output corpus JSONL")->required();
  extract->add_option("--stats-out", x_stats_out, "output stats JSON");
  extract->callback([&] {
    const auto notes = load_notes(x_notes);
    const auto diags = load_diagnoses(x_diags);
    const auto [survivors, stats] = extract_corpus(notes, diags, x_category, x_min_words);
    write_corpus_jsonl(survivors, x_out);
    if (!x_stats_out.empty()) write_corpus_stats_json(stats, x_stats_out);
    std::printf("input=%zu join=%zu category=%zu quality=%zu final=%zu\n",
                stats.input_count, stats.after_join, stats.after_category,
                stats.after_quality, stats.final_count);
  });

  // ---- build-pairs ---------------------------------------------------------
  auto* bp = app.add_subcommand("build-pairs", "build preference pairs from tier files");
  std::string bp_gold, bp_mid, bp_orig, bp_triples, bp_out, bp_skip_log;
  bp->add_option("--gold", bp_gold, "gold tier JSONL");
  bp->add_option("--mid", bp_mid, "mid tier JSONL");
  bp->add_option("--orig", bp_orig, "original tier JSONL");
  bp->add_option("--triples", bp_triples, "combined triples JSONL (alternative)");
  bp->add_option("--out", bp_out, "output pairs JSONL")->required();
  bp->add_option("--skip-log", bp_skip_log, "write skipped-pair log here");
  bp->callback([&] {
    std::vector<QualityTriple> triples;
    if (!bp_triples.empty()) {
      triples = read_triples_jsonl(bp_triples);
    } else if (!bp_gold.empty() && !bp_mid.empty() && !bp_orig.empty()) {
      triples = read_tier_files(bp_gold, bp_mid, bp_orig);
    } else {
      throw CLI::ValidationError("build-pairs",
                                 "need --triples or all of --gold/--mid/--orig");
    }
    const PairBuildResult built = build_pairs(triples);
    write_pairs_jsonl(built.examples, bp_out);
    if (!bp_skip_log.empty()) {
      std::ofstream os(bp_skip_log, std::ios::binary);
      for (const auto& line : built.skip_log) os << line << '\n';
    }
    std::printf("triples=%zu pairs=%zu skipped=%zu\n", triples.size(),
                built.examples.size(), built.skipped);
  });

  // ---- init-lm -------------------------------------------------------------
  auto* init = app.add_subcommand("init-lm", "initialize a model checkpoint");
  LMConfig init_cfg;
  std::string init_out;
  init->add_option("--vocab", init_cfg.vocab_size, "vocabulary size");
  init->add_option("--d-model", init_cfg.d_model, "model width");
  init->add_option("--layers", init_cfg.n_layers, "transformer layers");
  init->add_option("--heads", init_cfg.n_heads, "attention heads");
  init->add_option("--kv-heads", init_cfg.n_kv_heads, "key/value heads");
  init->add_option("--d-ff", init_cfg.d_ff, "feed-forward width");
  init->add_option("--max-seq", init_cfg.max_seq_len, "maximum sequence length");
  init->add_option("--rope-base", init_cfg.rope_base, "rotary base");
  init->add_option("--seed", init_cfg.seed, "init seed");
  init->add_option("--out", init_out, "output checkpoint")->required();
  init->callback([&] {
    const ModelParameters params = init_params(init_cfg);
    save_checkpoint(params, init_out);
    std::printf("params=%zu checksum=%016llx\n", params.param_count(),
                static_cast<unsigned long long>(parameters_checksum(params)));
  });

  // ---- pretrain ------------------------------------------------------------
  auto* pre = app.add_subcommand("pretrain", "likelihood pretraining on chosen texts");
  std::string pre_ckpt, pre_pairs, pre_out;
  int pre_epochs = 1, pre_max_prompt = 512;
  double pre_lr = 1e-3;
  std::uint64_t pre_seed = 0;
  pre->add_option("--ckpt", pre_ckpt, "input checkpoint")->required();
  pre->add_option("--pairs", pre_pairs, "pairs JSONL")->required();
  pre->add_option("--epochs", pre_epochs, "epochs");
  pre->add_option("--lr", pre_lr, "learning rate");
  pre->add_option("--max-prompt", pre_max_prompt, "prompt token budget");
  pre->add_option("--seed", pre_seed, "shuffle seed");
  pre->add_option("--out", pre_out, "output checkpoint")->required();
  pre->callback([&] {
    ModelParameters params = load_checkpoint(pre_ckpt);
    const auto examples = read_pairs_jsonl(pre_pairs);
    std::vector<std::vector<int>> sequences;
    for (const auto& e : examples) {
      const TokenizedExample t = tokenize_example(e, pre_max_prompt);
      std::vector<int> seq{kBosId};
      seq.insert(seq.end(), t.chosen.begin(), t.chosen.end());
      sequences.push_back(std::move(seq));
    }
    params = pretrain_lm(std::move(params), sequences, pre_epochs, pre_lr, pre_seed);
    save_checkpoint(params, pre_out);
  });

  // ---- train ---------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "preference-train a policy against a frozen reference");
  std::string tr_base, tr_pairs, tr_out, tr_log, tr_cfg;
  DPOConfig tr_dpo;
  tr->add_option("--base", tr_base, "base checkpoint (policy init and reference)")->required();
  tr->add_option("--pairs", tr_pairs, "pairs JSONL")->required();
  tr->add_option("--config", tr_cfg, "key=value training config file");
  auto* tr_beta = tr->add_option("--beta", tr_dpo.beta, "preference temperature");
  auto* tr_lr = tr->add_option("--lr", tr_dpo.learning_rate, "peak learning rate");
  auto* tr_epochs = tr->add_option("--epochs", tr_dpo.epochs, "epochs");
  auto* tr_batch = tr->add_option("--batch", tr_dpo.per_device_batch, "micro-batch size");
  auto* tr_accum = tr->add_option("--accum", tr_dpo.grad_accum_steps, "gradient accumulation steps");
  auto* tr_maxp = tr->add_option("--max-prompt", tr_dpo.max_prompt_tokens, "prompt token budget");
  auto* tr_seed = tr->add_option("--seed", tr_dpo.seed, "shuffle seed");
  tr->add_option("--out", tr_out, "output checkpoint")->required();
  tr->add_option("--log", tr_log, "training log CSV");
  tr->callback([&] {
    DPOConfig cfg = tr_cfg.empty() ? DPOConfig{} : load_dpo_config(tr_cfg);
    if (tr_beta->count()) cfg.beta = tr_dpo.beta;
    if (tr_lr->count()) cfg.learning_rate = tr_dpo.learning_rate;
    if (tr_epochs->count()) cfg.epochs = tr_dpo.epochs;
    if (tr_batch->count()) cfg.per_device_batch = tr_dpo.per_device_batch;
    if (tr_accum->count()) cfg.grad_accum_steps = tr_dpo.grad_accum_steps;
    if (tr_maxp->count()) cfg.max_prompt_tokens = tr_dpo.max_prompt_tokens;
    if (tr_seed->count()) cfg.seed = tr_dpo.seed;
    const ModelParameters base = load_checkpoint(tr_base);
    const auto examples = read_pairs_jsonl(tr_pairs);
    std::vector<TokenizedExample> dataset;
    for (const auto& e : examples) dataset.push_back(tokenize_example(e, cfg.max_prompt_tokens));
    const TrainResult result = train(PolicyPair::from_initial(base), dataset, cfg);
    save_checkpoint(result.policy, tr_out);
    if (!tr_log.empty()) write_train_log_csv(result.log, tr_log);
    if (!result.log.empty()) {
      std::printf("steps=%zu final_loss=%.6f final_margin=%.6f\n", result.log.size(),
                  result.log.back().loss, result.log.back().mean_margin);
    }
  });

  // ---- beta-sweep ----------------------------------------------------------
  auto* bs = app.add_subcommand("beta-sweep", "train one policy per beta and report perplexity");
  std::string bs_base, bs_pairs, bs_cfg, bs_report, bs_ckpt_dir;
  std::vector<double> bs_betas{0.01, 0.05, 0.1};
  double bs_alpha = 0.05;
  bs->add_option("--base", bs_base, "base checkpoint")->required();
  bs->add_option("--pairs", bs_pairs, "pairs JSONL")->required();
  bs->add_option("--config", bs_cfg, "key=value training config file");
  bs->add_option("--betas", bs_betas, "beta grid")->delimiter(',');
  bs->add_option("--alpha", bs_alpha, "family-wise significance level");
  bs->add_option("--report", bs_report, "output report table")->required();
  bs->add_option("--ckpt-dir", bs_ckpt_dir, "directory for per-beta checkpoints");
  bs->callback([&] {
    DPOConfig cfg = bs_cfg.empty() ? DPOConfig{} : load_dpo_config(bs_cfg);
    const ModelParameters base = load_checkpoint(bs_base);
    const auto examples = read_pairs_jsonl(bs_pairs);
    std::vector<TokenizedExample> dataset;
    std::vector<std::string> eval_texts;
    std::vector<std::string> seen_ids;
    for (const auto& e : examples) {
      dataset.push_back(tokenize_example(e, cfg.max_prompt_tokens));
      if (std::find(seen_ids.begin(), seen_ids.end(), e.source_note_id) == seen_ids.end()) {
        seen_ids.push_back(e.source_note_id);
        eval_texts.push_back(e.chosen);
      }
    }
    const auto entries = beta_sweep(PolicyPair::from_initial(base), dataset, bs_betas, cfg);
    if (!bs_ckpt_dir.empty()) {
      fs::create_directories(bs_ckpt_dir);
      for (const auto& entry : entries) {
        char name[64];
        std::snprintf(name, sizeof(name), "dpo_beta%g.ckpt", entry.beta);
        save_checkpoint(entry.policy, (fs::path(bs_ckpt_dir) / name).string());
      }
    }
    const auto rows = beta_sweep_rows(base, entries, eval_texts, bs_alpha);
    write_beta_sweep_report(rows, bonferroni_threshold(bs_alpha, entries.size()), bs_report);
    std::printf("configurations=%zu report=%s\n", rows.size(), bs_report.c_str());
  });

  // ---- generate ------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "sample a completion from a checkpoint");
  std::string g_ckpt, g_prompt, g_prompt_file;
  std::size_t g_max_new = 64;
  double g_temp = 0.0;
  std::uint64_t g_seed = 0;
  bool g_template = false;
  gen->add_option("--ckpt", g_ckpt, "model checkpoint")->required();
  gen->add_option("--prompt", g_prompt, "prompt text");
  gen->add_option("--prompt-file", g_prompt_file, "read the prompt from a file");
  gen->add_flag("--template", g_template, "wrap the prompt in the instruction template");
  gen->add_option("--max-new", g_max_new, "maximum new tokens");
  gen->add_option("--temperature", g_temp, "0 = greedy");
  gen->add_option("--seed", g_seed, "sampling seed");
  gen->callback([&] {
    std::string text = g_prompt;
    if (!g_prompt_file.empty()) {
      std::ifstream is(g_prompt_file, std::ios::binary);
      if (!is) throw std::runtime_error("cannot open: " + g_prompt_file);
      text.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    }
    if (g_template) text = render_prompt(text);
    const ModelParameters params = load_checkpoint(g_ckpt);
    const auto ids = generate(params, prompt_ids(text), g_max_new, g_temp, g_seed);
    std::printf("%s\n", detokenize(ids).c_str());
  });

  // ---- eval ----------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "score candidates against references");
  std::string e_cand, e_ref, e_baseline, e_scorer, e_out, e_per_pair;
  std::size_t e_dim = 16;
  std::uint64_t e_seed = 0;
  bool e_keep_case = false, e_keep_punct = false, e_context = false;
  ev->add_option("--candidates", e_cand, "candidate JSONL ({pair_id,text})")->required();
  ev->add_option("--references", e_ref, "reference JSONL")->required();
  ev->add_option("--baseline", e_baseline, "baseline candidate JSONL");
  ev->add_option("--scorer", e_scorer, "checkpoint for likelihood metrics")->required();
  ev->add_option("--embed-dim", e_dim, "embedding dimension");
  ev->add_option("--embed-seed", e_seed, "embedding seed");
  ev->add_flag("--context-mix", e_context, "context-dependent embeddings");
  ev->add_flag("--keep-case", e_keep_case, "disable lowercasing");
  ev->add_flag("--keep-punct", e_keep_punct, "disable punctuation stripping");
  ev->add_option("--out", e_out, "report CSV")->required();
  ev->add_option("--per-pair", e_per_pair, "per-pair metric values JSON");
  ev->callback([&] {
    const auto cand_rows = read_id_text_jsonl(e_cand);
    const auto ref_rows = read_id_text_jsonl(e_ref);
    std::vector<std::string> cands, refs, ids, bases;
    for (const auto& [id, text] : cand_rows) {
      ids.push_back(id);
      cands.push_back(text);
    }
    for (const auto& [id, text] : ref_rows) refs.push_back(text);
    const std::vector<std::string>* baseline_ptr = nullptr;
    if (!e_baseline.empty()) {
      for (const auto& [id, text] : read_id_text_jsonl(e_baseline)) bases.push_back(text);
      baseline_ptr = &bases;
    }
    const ModelParameters scorer = load_checkpoint(e_scorer);
    const HashEmbedder embedder(e_dim, e_seed, e_context);
    const MetricTokenization tok{!e_keep_case, !e_keep_punct};
    const MetricReport report =
        evaluate_corpus(cands, refs, scorer, embedder, tok, baseline_ptr, &ids);
    write_metric_report_csv(report, e_out);
    if (!e_per_pair.empty()) {
      json j;
      j["pair_ids"] = report.pair_ids;
      for (const auto& name : report.metric_names) {
        j["metrics"][name]["candidate"] = report.per_pair.at(name);
        if (report.has_baseline) {
          j["metrics"][name]["baseline"] = report.baseline_per_pair.at(name);
        }
      }
      std::ofstream os(e_per_pair, std::ios::binary);
      os << j.dump(2) << '\n';
    }
  });

  // ---- stats ---------------------------------------------------------------
  auto* st = app.add_subcommand("stats", "paired significance test on two value columns");
  std::string s_a, s_b, s_test = "wilcoxon", s_mode = "auto", s_out;
  st->add_option("--a", s_a, "first column CSV")->required();
  st->add_option("--b", s_b, "second column CSV")->required();
  st->add_option("--test", s_test, "wilcoxon | ttest")
      ->check(CLI::IsMember({"wilcoxon", "ttest"}));
  st->add_option("--mode", s_mode, "wilcoxon mode: auto | exact | normal")
      ->check(CLI::IsMember({"auto", "exact", "normal"}));
  st->add_option("--out", s_out, "write JSON here instead of stdout");
  st->callback([&] {
    const PairedSample sample{read_column_csv(s_a), read_column_csv(s_b)};
    StatTestResult r;
    if (s_test == "wilcoxon") {
      const WilcoxonMode mode = s_mode == "exact"    ? WilcoxonMode::exact
                                : s_mode == "normal" ? WilcoxonMode::normal
                                                     : WilcoxonMode::automatic;
      r = wilcoxon_signed_rank(sample, mode);
    } else {
      r = paired_t_test(sample);
    }
    const std::string text = stat_to_json(r).dump(2) + "\n";
    if (s_out.empty()) {
      std::fputs(text.c_str(), stdout);
    } else {
      std::ofstream os(s_out, std::ios::binary);
      os << text;
    }
  });

  // ---- adjust --------------------------------------------------------------
  auto* ad = app.add_subcommand("adjust", "multiple-comparison adjustment of p-values");
  std::vector<double> a_ps;
  std::string a_method = "bh";
  std::size_t a_m = 0;
  ad->add_option("--p", a_ps, "raw p-values")->required()->delimiter(',');
  ad->add_option("--method", a_method, "bh | bonferroni")
      ->check(CLI::IsMember({"bh", "bonferroni"}));
  ad->add_option("--m", a_m, "family size for bonferroni (default: count)");
  ad->callback([&] {
    std::vector<double> adjusted;
    if (a_method == "bh") {
      adjusted = benjamini_hochberg(a_ps);
    } else {
      adjusted = bonferroni(a_ps, a_m == 0 ? a_ps.size() : a_m);
    }
    std::printf("%s\n", json(adjusted).dump().c_str());
  });

  // ---- run / verify --------------------------------------------------------
  auto* run = app.add_subcommand("run", "execute the full pipeline from a config file");
  std::string r_cfg;
  bool r_force = false, r_verbose = false;
  run->add_option("--config", r_cfg, "pipeline config file")->required();
  run->add_flag("--force", r_force, "rerun every stage");
  run->add_flag("--verbose", r_verbose, "log stage decisions");
  run->callback([&] {
    const PipelineConfig cfg = load_pipeline_config(r_cfg);
    const RunSummary summary = run_pipeline(cfg, r_force, r_verbose);
    std::printf("ran=%zu skipped=%zu manifest=%s\n", summary.stages_run.size(),
                summary.stages_skipped.size(), summary.manifest_path.c_str());
  });

  auto* verify = app.add_subcommand("verify", "check artifacts against the manifest");
  std::string v_workdir;
  verify->add_option("--workdir", v_workdir, "pipeline work directory")->required();
  verify->callback([&] {
    const auto bad = verify_manifest(v_workdir);
    if (bad.empty()) {
      std::printf("ok\n");
    } else {
      for (const auto& name : bad) std::printf("mismatch: %s\n", name.c_str());
      throw std::runtime_error(std::to_string(bad.size()) + " artifact(s) changed");
    }
  });

  // ---- synth ---------------------------------------------------------------
  auto* sy = app.add_subcommand("synth", "write a small synthetic workspace and config");
  std::string sy_dir;
  std::size_t sy_triples = 24;
  std::uint64_t sy_seed = 0;
  sy->add_option("--dir", sy_dir, "target directory")->required();
  sy->add_option("--triples", sy_triples, "number of note triples");
  sy->add_option("--seed", sy_seed, "generation seed");
  sy->callback([&] {
    write_synthetic_workspace(sy_dir, sy_triples, sy_seed);
    std::printf("config=%s\n", (fs::path(sy_dir) / "pipeline.cfg").string().c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the usage error
    return code == 0 ? 0 : 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const PipelineValidationError& e) {
    for (const auto& err : e.errors) std::fprintf(stderr, "config error: %s\n", err.c_str());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
