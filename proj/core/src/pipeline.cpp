#include "prefalign/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prefalign/corpus.hpp"
#include "prefalign/pairs.hpp"

namespace fs = std::filesystem;

namespace prefalign {

PipelineValidationError::PipelineValidationError(std::vector<std::string> errs)
    : std::runtime_error("pipeline config invalid (" + std::to_string(errs.size()) +
                         " error(s))"),
      errors(std::move(errs)) {}

StageError::StageError(const std::string& stage_name, const std::string& message)
    : std::runtime_error("stage '" + stage_name + "' failed: " + message),
      stage(stage_name) {}

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t file_checksum(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checksum: cannot open " + path);
  std::string content((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
  return fnv1a64(content.data(), content.size());
}

std::uint64_t stage_seed(std::uint64_t global_seed, const std::string& stage_name) {
  return global_seed ^ fnv1a64(stage_name.data(), stage_name.size());
}

void atomic_write(const std::string& path,
                  const std::function<void(const std::string&)>& write) {
  const std::string tmp = path + ".tmp";
  write(tmp);
  fs::rename(tmp, path);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::runtime_error("expected boolean, got '" + v + "'");
}

}  // namespace

PipelineConfig parse_pipeline_config_text(const std::string& text) {
  PipelineConfig c;
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    if (stripped.front() == '[') {
      if (stripped.back() != ']') {
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": malformed section header");
      }
      section = stripped.substr(1, stripped.size() - 2);
      continue;
    }
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key=value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    const std::string where = "config line " + std::to_string(lineno);
    try {
      if (section == "paths") {
        if (key == "notes_csv") c.notes_csv = value;
        else if (key == "diagnoses_csv") c.diagnoses_csv = value;
        else if (key == "gold") c.gold_tier = value;
        else if (key == "mid") c.mid_tier = value;
        else if (key == "orig") c.orig_tier = value;
        else if (key == "workdir") c.workdir = value;
        else throw std::runtime_error("unknown key");
      } else if (section == "extract") {
        if (key == "min_words") c.min_words = std::stoul(value);
        else if (key == "category") c.category = value;
        else throw std::runtime_error("unknown key");
      } else if (section == "lm") {
        if (key == "vocab_size") c.lm.vocab_size = std::stoul(value);
        else if (key == "d_model") c.lm.d_model = std::stoul(value);
        else if (key == "n_layers") c.lm.n_layers = std::stoul(value);
        else if (key == "n_heads") c.lm.n_heads = std::stoul(value);
        else if (key == "n_kv_heads") c.lm.n_kv_heads = std::stoul(value);
        else if (key == "d_ff") c.lm.d_ff = std::stoul(value);
        else if (key == "max_seq_len") c.lm.max_seq_len = std::stoul(value);
        else if (key == "rope_base") c.lm.rope_base = std::stod(value);
        else throw std::runtime_error("unknown key");
      } else if (section == "dpo") {
        if (key == "beta") c.dpo.beta = std::stod(value);
        else if (key == "learning_rate") c.dpo.learning_rate = std::stod(value);
        else if (key == "per_device_batch") c.dpo.per_device_batch = std::stoi(value);
        else if (key == "grad_accum_steps") c.dpo.grad_accum_steps = std::stoi(value);
        else if (key == "epochs") c.dpo.epochs = std::stoi(value);
        else if (key == "max_prompt_tokens") c.dpo.max_prompt_tokens = std::stoi(value);
        else if (key == "warmup_steps") c.dpo.warmup_steps = std::stoi(value);
        else if (key == "scheduler") c.dpo.scheduler = value;
        else if (key == "optimizer") c.dpo.optimizer = value;
        else if (key == "weight_decay") c.dpo.weight_decay = std::stod(value);
        else throw std::runtime_error("unknown key");
      } else if (section == "metrics") {
        if (key == "lowercase") c.metric_tok.lowercase = parse_bool(value);
        else if (key == "strip_punct") c.metric_tok.strip_punct = parse_bool(value);
        else if (key == "embed_dim") c.embed_dim = std::stoul(value);
        else if (key == "context_mix") c.embed_context_mix = parse_bool(value);
        else throw std::runtime_error("unknown key");
      } else if (section == "run") {
        if (key == "seed") c.seed = std::stoull(value);
        else if (key == "pretrain_epochs") c.pretrain_epochs = std::stoi(value);
        else if (key == "pretrain_lr") c.pretrain_lr = std::stod(value);
        else if (key == "holdout_fraction") c.holdout_fraction = std::stod(value);
        else if (key == "generate_max_new") c.generate_max_new = std::stoul(value);
        else if (key == "generate_temperature") c.generate_temperature = std::stod(value);
        else throw std::runtime_error("unknown key");
      } else {
        throw std::runtime_error("unknown section '" + section + "'");
      }
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(where + ": " + e.what() + " ('" + key + "')");
    } catch (const std::exception&) {
      throw std::runtime_error(where + ": bad value for '" + key + "'");
    }
  }
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  return parse_pipeline_config_text(text);
}

namespace {

std::vector<std::string> validate_config(const PipelineConfig& c) {
  std::vector<std::string> errs;
  auto need_file = [&](const std::string& path, const std::string& label) {
    if (path.empty()) {
      errs.push_back(label + " not set");
    } else if (!fs::exists(path)) {
      errs.push_back(label + " does not exist: " + path);
    }
  };
  need_file(c.notes_csv, "paths.notes_csv");
  need_file(c.diagnoses_csv, "paths.diagnoses_csv");
  need_file(c.gold_tier, "paths.gold");
  need_file(c.mid_tier, "paths.mid");
  need_file(c.orig_tier, "paths.orig");
  if (c.workdir.empty()) errs.push_back("paths.workdir not set");
  if (!(c.holdout_fraction > 0.0 && c.holdout_fraction < 1.0)) {
    errs.push_back("run.holdout_fraction must be in (0,1)");
  }
  if (c.embed_dim == 0) errs.push_back("metrics.embed_dim must be >= 1");
  try {
    c.lm.validate();
  } catch (const std::exception& e) {
    errs.push_back(std::string("lm: ") + e.what());
  }
  try {
    c.dpo.validate();
  } catch (const std::exception& e) {
    errs.push_back(std::string("dpo: ") + e.what());
  }
  return errs;
}

std::string canonical_config_string(const PipelineConfig& c) {
  std::ostringstream os;
  os << c.notes_csv << '|' << c.diagnoses_csv << '|' << c.gold_tier << '|'
     << c.mid_tier << '|' << c.orig_tier << '|' << c.min_words << '|'
     << c.category << '|' << c.lm.vocab_size << '|' << c.lm.d_model << '|'
     << c.lm.n_layers << '|' << c.lm.n_heads << '|' << c.lm.n_kv_heads << '|'
     << c.lm.d_ff << '|' << c.lm.max_seq_len << '|' << c.lm.rope_base << '|'
     << c.dpo.beta << '|' << c.dpo.learning_rate << '|' << c.dpo.per_device_batch
     << '|' << c.dpo.grad_accum_steps << '|' << c.dpo.epochs << '|'
     << c.dpo.max_prompt_tokens << '|' << c.dpo.warmup_steps << '|'
     << c.dpo.weight_decay << '|' << c.metric_tok.lowercase << '|'
     << c.metric_tok.strip_punct << '|' << c.embed_dim << '|'
     << c.embed_context_mix << '|' << c.seed << '|' << c.pretrain_epochs << '|'
     << c.pretrain_lr << '|' << c.holdout_fraction << '|' << c.generate_max_new
     << '|' << c.generate_temperature;
  return os.str();
}

// holdout indices come first in the shuffled order; the rest train
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double holdout_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t k = static_cast<std::size_t>(
      std::lround(holdout_fraction * static_cast<double>(n)));
  k = std::max<std::size_t>(1, std::min(k, n - 1));
  std::vector<std::size_t> holdout(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::size_t> train_set(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(holdout.begin(), holdout.end());
  std::sort(train_set.begin(), train_set.end());
  return {holdout, train_set};
}

void write_text_pairs_jsonl(const std::vector<std::pair<std::string, std::string>>& rows,
                            const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& [id, text] : rows) {
    nlohmann::json j{{"pair_id", id}, {"text", text}};
    // generated candidates can contain arbitrary bytes; replace invalid
    // UTF-8 deterministically so the stored artifact is well-formed JSON
    os << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
}

std::vector<std::pair<std::string, std::string>> read_text_pairs_jsonl(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ": malformed JSON on line " + std::to_string(lineno));
    }
    out.emplace_back(j.at("pair_id").get<std::string>(),
                     j.at("text").get<std::string>());
  }
  return out;
}

struct Stage {
  std::string name;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::function<void()> run;
};

bool stage_fresh(const Stage& s) {
  fs::file_time_type newest_input = fs::file_time_type::min();
  for (const auto& in : s.inputs) {
    if (!fs::exists(in)) return false;
    newest_input = std::max(newest_input, fs::last_write_time(in));
  }
  for (const auto& out : s.outputs) {
    if (!fs::exists(out)) return false;
    if (fs::last_write_time(out) < newest_input) return false;
  }
  return true;
}

}  // namespace

RunSummary run_pipeline(const PipelineConfig& config, bool force, bool verbose) {
  const std::vector<std::string> errs = validate_config(config);
  if (!errs.empty()) throw PipelineValidationError(errs);

  fs::create_directories(config.workdir);
  const auto wd = [&](const std::string& name) {
    return (fs::path(config.workdir) / name).string();
  };

  const std::string corpus_path = wd("corpus.jsonl");
  const std::string stats_path = wd("corpus_stats.json");
  const std::string pairs_path = wd("pairs.jsonl");
  const std::string base_ckpt = wd("base.ckpt");
  const std::string dpo_ckpt = wd("dpo.ckpt");
  const std::string train_log = wd("train_log.csv");
  const std::string cand_dpo = wd("candidates_dpo.jsonl");
  const std::string cand_base = wd("candidates_base.jsonl");
  const std::string refs_path = wd("references.jsonl");
  const std::string eval_csv = wd("eval_report.csv");
  const std::string per_pair_path = wd("per_pair.json");
  const std::string stats_json = wd("stats.json");
  const std::string report_csv = wd("report.csv");
  const std::string report_txt = wd("report.txt");

  auto load_tokenized = [&](const std::string& path) {
    const auto examples = read_pairs_jsonl(path);
    std::vector<TokenizedExample> tokenized;
    tokenized.reserve(examples.size());
    for (const auto& e : examples) {
      tokenized.push_back(tokenize_example(e, config.dpo.max_prompt_tokens));
    }
    return std::pair{examples, tokenized};
  };

  std::vector<Stage> stages;

  stages.push_back(Stage{
      "extract",
      {config.notes_csv, config.diagnoses_csv},
      {corpus_path, stats_path},
      [&] {
        const auto notes = load_notes(config.notes_csv);
        const auto diagnoses = load_diagnoses(config.diagnoses_csv);
        const auto [survivors, stats] =
            extract_corpus(notes, diagnoses, config.category, config.min_words);
        atomic_write(corpus_path,
                     [&](const std::string& p) { write_corpus_jsonl(survivors, p); });
        atomic_write(stats_path,
                     [&](const std::string& p) { write_corpus_stats_json(stats, p); });
      }});

  stages.push_back(Stage{
      "build-pairs",
      {config.gold_tier, config.mid_tier, config.orig_tier},
      {pairs_path},
      [&] {
        const auto triples =
            read_tier_files(config.gold_tier, config.mid_tier, config.orig_tier);
        const PairBuildResult built = build_pairs(triples);
        atomic_write(pairs_path, [&](const std::string& p) {
          write_pairs_jsonl(built.examples, p);
        });
      }});

  stages.push_back(Stage{
      "pretrain",
      {pairs_path},
      {base_ckpt},
      [&] {
        LMConfig lm = config.lm;
        lm.seed = stage_seed(config.seed, "init");
        ModelParameters base = init_params(lm);
        if (config.pretrain_epochs > 0) {
          const auto [examples, tokenized] = load_tokenized(pairs_path);
          std::vector<std::vector<int>> sequences;
          sequences.reserve(tokenized.size());
          for (const auto& t : tokenized) {
            std::vector<int> seq{kBosId};
            seq.insert(seq.end(), t.chosen.begin(), t.chosen.end());
            sequences.push_back(std::move(seq));
          }
          base = pretrain_lm(std::move(base), sequences, config.pretrain_epochs,
                             config.pretrain_lr,
                             stage_seed(config.seed, "pretrain"));
        }
        atomic_write(base_ckpt,
                     [&](const std::string& p) { save_checkpoint(base, p); });
      }});

  stages.push_back(Stage{
      "train",
      {pairs_path, base_ckpt},
      {dpo_ckpt, train_log},
      [&] {
        const auto [examples, tokenized] = load_tokenized(pairs_path);
        const auto [holdout, train_idx] = split_indices(
            tokenized.size(), config.holdout_fraction, stage_seed(config.seed, "split"));
        std::vector<TokenizedExample> train_set;
        for (std::size_t i : train_idx) train_set.push_back(tokenized[i]);
        const ModelParameters base = load_checkpoint(base_ckpt);
        DPOConfig dc = config.dpo;
        dc.seed = stage_seed(config.seed, "train");
        TrainResult result = train(PolicyPair::from_initial(base), train_set, dc);
        atomic_write(dpo_ckpt,
                     [&](const std::string& p) { save_checkpoint(result.policy, p); });
        atomic_write(train_log,
                     [&](const std::string& p) { write_train_log_csv(result.log, p); });
      }});

  stages.push_back(Stage{
      "generate",
      {pairs_path, base_ckpt, dpo_ckpt},
      {cand_dpo, cand_base, refs_path},
      [&] {
        const auto [examples, tokenized] = load_tokenized(pairs_path);
        const auto [holdout, train_idx] = split_indices(
            tokenized.size(), config.holdout_fraction, stage_seed(config.seed, "split"));
        // one prompt per source note
        std::vector<std::size_t> chosen_idx;
        std::vector<std::string> seen;
        for (std::size_t i : holdout) {
          const std::string& id = examples[i].source_note_id;
          if (std::find(seen.begin(), seen.end(), id) == seen.end()) {
            seen.push_back(id);
            chosen_idx.push_back(i);
          }
        }
        const ModelParameters base = load_checkpoint(base_ckpt);
        const ModelParameters tuned = load_checkpoint(dpo_ckpt);
        const std::uint64_t gseed = stage_seed(config.seed, "generate");
        std::vector<std::pair<std::string, std::string>> dpo_rows, base_rows, ref_rows;
        for (std::size_t k = 0; k < chosen_idx.size(); ++k) {
          const std::size_t i = chosen_idx[k];
          const auto& prompt_ids = tokenized[i].prompt;
          const auto dpo_ids = generate(tuned, prompt_ids, config.generate_max_new,
                                        config.generate_temperature, gseed + 2 * k);
          const auto base_ids = generate(base, prompt_ids, config.generate_max_new,
                                         config.generate_temperature, gseed + 2 * k + 1);
          const std::string id = examples[i].source_note_id;
          // likelihood metrics cannot score empty text; an immediate EOS
          // becomes a single-space candidate instead
          auto or_space = [](std::string s) { return s.empty() ? std::string(" ") : s; };
          dpo_rows.emplace_back(id, or_space(detokenize(dpo_ids)));
          base_rows.emplace_back(id, or_space(detokenize(base_ids)));
          ref_rows.emplace_back(id, examples[i].chosen);
        }
        atomic_write(cand_dpo, [&](const std::string& p) { write_text_pairs_jsonl(dpo_rows, p); });
        atomic_write(cand_base, [&](const std::string& p) { write_text_pairs_jsonl(base_rows, p); });
        atomic_write(refs_path, [&](const std::string& p) { write_text_pairs_jsonl(ref_rows, p); });
      }});

  stages.push_back(Stage{
      "eval",
      {cand_dpo, cand_base, refs_path, base_ckpt},
      {eval_csv, per_pair_path},
      [&] {
        const auto dpo_rows = read_text_pairs_jsonl(cand_dpo);
        const auto base_rows = read_text_pairs_jsonl(cand_base);
        const auto ref_rows = read_text_pairs_jsonl(refs_path);
        std::vector<std::string> cands, bases, refs, ids;
        for (const auto& [id, text] : dpo_rows) {
          cands.push_back(text);
          ids.push_back(id);
        }
        for (const auto& [id, text] : base_rows) bases.push_back(text);
        for (const auto& [id, text] : ref_rows) refs.push_back(text);
        const ModelParameters scorer = load_checkpoint(base_ckpt);
        const HashEmbedder embedder(config.embed_dim, stage_seed(config.seed, "embed"),
                                    config.embed_context_mix);
        const MetricReport report = evaluate_corpus(cands, refs, scorer, embedder,
                                                    config.metric_tok, &bases, &ids);
        atomic_write(eval_csv,
                     [&](const std::string& p) { write_metric_report_csv(report, p); });
        atomic_write(per_pair_path, [&](const std::string& p) {
          nlohmann::json j;
          j["pair_ids"] = report.pair_ids;
          for (const auto& name : report.metric_names) {
            j["metrics"][name]["dpo"] = report.per_pair.at(name);
            j["metrics"][name]["base"] = report.baseline_per_pair.at(name);
          }
          std::ofstream os(p, std::ios::binary);
          os << j.dump(2) << '\n';
        });
      }});

  stages.push_back(Stage{
      "stats",
      {per_pair_path},
      {stats_json},
      [&] {
        std::ifstream is(per_pair_path, std::ios::binary);
        nlohmann::json j = nlohmann::json::parse(is);
        std::vector<StatTestResult> results;
        std::vector<double> raw;
        for (const auto& name : kMetricOrder) {
          PairedSample s;
          s.a = j["metrics"][name]["dpo"].get<std::vector<double>>();
          s.b = j["metrics"][name]["base"].get<std::vector<double>>();
          results.push_back(wilcoxon_signed_rank(s));
          raw.push_back(results.back().p_raw);
        }
        const std::vector<double> adjusted = benjamini_hochberg(raw);
        for (std::size_t i = 0; i < results.size(); ++i) {
          results[i].p_adjusted = adjusted[i];
          results[i].adjustment = "benjamini_hochberg";
        }
        atomic_write(stats_json, [&](const std::string& p) {
          nlohmann::json out = nlohmann::json::array();
          for (std::size_t i = 0; i < results.size(); ++i) {
            out.push_back({{"metric", kMetricOrder[i]},
                           {"statistic", results[i].statistic},
                           {"p_raw", results[i].p_raw},
                           {"p_adjusted", *results[i].p_adjusted},
                           {"method", results[i].method},
                           {"adjustment", results[i].adjustment},
                           {"n_effective", results[i].n_effective},
                           {"degenerate", results[i].degenerate}});
          }
          std::ofstream os(p, std::ios::binary);
          os << out.dump(2) << '\n';
        });
      }});

  stages.push_back(Stage{
      "report",
      {per_pair_path, stats_json},
      {report_csv, report_txt},
      [&] {
        std::ifstream is(per_pair_path, std::ios::binary);
        nlohmann::json j = nlohmann::json::parse(is);
        MetricReport report;
        report.metric_names = kMetricOrder;
        report.pair_ids = j["pair_ids"].get<std::vector<std::string>>();
        report.has_baseline = true;
        for (const auto& name : kMetricOrder) {
          report.per_pair[name] = j["metrics"][name]["dpo"].get<std::vector<double>>();
          report.baseline_per_pair[name] =
              j["metrics"][name]["base"].get<std::vector<double>>();
          report.aggregates[name] = aggregate_values(report.per_pair[name]);
          report.baseline_aggregates[name] =
              aggregate_values(report.baseline_per_pair[name]);
          report.deltas[name] = report.aggregates[name].mean -
                                report.baseline_aggregates[name].mean;
        }
        std::ifstream ss(stats_json, std::ios::binary);
        nlohmann::json sj = nlohmann::json::parse(ss);
        std::map<std::string, StatTestResult> stat_results;
        for (const auto& entry : sj) {
          StatTestResult r;
          r.statistic = entry.at("statistic").get<double>();
          r.p_raw = entry.at("p_raw").get<double>();
          r.p_adjusted = entry.at("p_adjusted").get<double>();
          r.method = entry.at("method").get<std::string>();
          r.adjustment = entry.at("adjustment").get<std::string>();
          r.n_effective = entry.at("n_effective").get<std::size_t>();
          stat_results[entry.at("metric").get<std::string>()] = r;
        }
        emit_report(report, stat_results, report_csv, report_txt);
      }});

  RunSummary summary;
  for (auto& stage : stages) {
    if (!force && stage_fresh(stage)) {
      summary.stages_skipped.push_back(stage.name);
      if (verbose) std::fprintf(stderr, "[skip] %s\n", stage.name.c_str());
      continue;
    }
    if (verbose) std::fprintf(stderr, "[run ] %s\n", stage.name.c_str());
    try {
      stage.run();
    } catch (const std::exception& e) {
      throw StageError(stage.name, e.what());
    }
    summary.stages_run.push_back(stage.name);
  }

  // manifest: config hash, seed, artifact checksums
  const std::string manifest_path = wd("manifest.json");
  nlohmann::json manifest;
  const std::string cfg = canonical_config_string(config);
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(fnv1a64(cfg.data(), cfg.size())));
  manifest["config_hash"] = hex;
  manifest["seed"] = config.seed;
  nlohmann::json artifacts;
  for (const auto& path :
       {corpus_path, stats_path, pairs_path, base_ckpt, dpo_ckpt, train_log,
        cand_dpo, cand_base, refs_path, eval_csv, per_pair_path, stats_json,
        report_csv, report_txt}) {
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(file_checksum(path)));
    artifacts[fs::path(path).filename().string()] = hex;
  }
  manifest["artifacts"] = artifacts;
  atomic_write(manifest_path, [&](const std::string& p) {
    std::ofstream os(p, std::ios::binary);
    os << manifest.dump(2) << '\n';
  });
  summary.manifest_path = manifest_path;
  return summary;
}

std::vector<std::string> verify_manifest(const std::string& workdir) {
  const std::string manifest_path = (fs::path(workdir) / "manifest.json").string();
  std::ifstream is(manifest_path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open manifest: " + manifest_path);
  nlohmann::json manifest = nlohmann::json::parse(is);
  std::vector<std::string> mismatched;
  for (const auto& [name, expected] : manifest.at("artifacts").items()) {
    const std::string path = (fs::path(workdir) / name).string();
    char hex[32];
    bool ok = fs::exists(path);
    if (ok) {
      std::snprintf(hex, sizeof(hex), "%016llx",
                    static_cast<unsigned long long>(file_checksum(path)));
      ok = expected.get<std::string>() == hex;
    }
    if (!ok) mismatched.push_back(name);
  }
  return mismatched;
}

void emit_report(const MetricReport& report,
                 const std::map<std::string, StatTestResult>& stat_results,
                 const std::string& csv_path, const std::string& table_path,
                 const std::string& system_a, const std::string& system_b) {
  if (report.metric_names.empty()) throw std::invalid_argument("emit_report: empty report");
  atomic_write(csv_path, [&](const std::string& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + p);
    os << "metric,mean_a,std_a,mean_b,std_b,delta,p\n";
    char buf[512];
    for (const auto& name : report.metric_names) {
      const MetricAggregate& b = report.aggregates.at(name);
      const MetricAggregate a = report.has_baseline
                                    ? report.baseline_aggregates.at(name)
                                    : MetricAggregate{};
      const auto it = stat_results.find(name);
      const double delta = report.has_baseline ? report.deltas.at(name) : 0.0;
      if (it != stat_results.end()) {
        std::snprintf(buf, sizeof(buf), "\"%s\",%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                      name.c_str(), a.mean, a.stddev, b.mean, b.stddev, delta,
                      it->second.p_adjusted.value_or(it->second.p_raw));
      } else {
        std::snprintf(buf, sizeof(buf), "\"%s\",%.12g,%.12g,%.12g,%.12g,%.12g,\n",
                      name.c_str(), a.mean, a.stddev, b.mean, b.stddev, delta);
      }
      os << buf;
    }
  });
  atomic_write(table_path, [&](const std::string& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + p);
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%-20s | %-17s | %-17s | %-9s | %s\n", "Metric",
                  system_a.c_str(), system_b.c_str(), "Delta", "p");
    os << buf;
    os << std::string(20, '-') << "-+-" << std::string(17, '-') << "-+-"
       << std::string(17, '-') << "-+-" << std::string(9, '-') << "-+------\n";
    for (const auto& name : report.metric_names) {
      const MetricAggregate& b = report.aggregates.at(name);
      const MetricAggregate a = report.has_baseline
                                    ? report.baseline_aggregates.at(name)
                                    : MetricAggregate{};
      char cell_a[64], cell_b[64], cell_d[32], cell_p[32];
      std::snprintf(cell_a, sizeof(cell_a), "%.3f +/- %.3f", a.mean, a.stddev);
      std::snprintf(cell_b, sizeof(cell_b), "%.3f +/- %.3f", b.mean, b.stddev);
      std::snprintf(cell_d, sizeof(cell_d), "%+.3f",
                    report.has_baseline ? report.deltas.at(name) : 0.0);
      const auto it = stat_results.find(name);
      if (it != stat_results.end()) {
        std::snprintf(cell_p, sizeof(cell_p), "%.4g",
                      it->second.p_adjusted.value_or(it->second.p_raw));
      } else {
        std::snprintf(cell_p, sizeof(cell_p), "--");
      }
      std::snprintf(buf, sizeof(buf), "%-20s | %-17s | %-17s | %-9s | %s\n",
                    name.c_str(), cell_a, cell_b, cell_d, cell_p);
      os << buf;
    }
  });
}

std::vector<BetaSweepRow> beta_sweep_rows(const ModelParameters& baseline,
                                          const std::vector<BetaSweepEntry>& entries,
                                          const std::vector<std::string>& eval_texts,
                                          double alpha) {
  if (eval_texts.empty()) throw std::invalid_argument("beta_sweep_rows: no eval texts");
  auto ppls = [&](const ModelParameters& model) {
    std::vector<double> out;
    out.reserve(eval_texts.size());
    for (const auto& text : eval_texts) out.push_back(perplexity(model, text));
    return out;
  };
  const std::vector<double> base_ppls = ppls(baseline);
  const double threshold = bonferroni_threshold(alpha, entries.size());

  std::vector<BetaSweepRow> rows;
  BetaSweepRow base_row;
  base_row.configuration = "SFT";
  base_row.ppl = aggregate_values(base_ppls);
  rows.push_back(base_row);
  for (const auto& entry : entries) {
    BetaSweepRow row;
    char name[64];
    std::snprintf(name, sizeof(name), "DPO (beta=%g)", entry.beta);
    row.configuration = name;
    const std::vector<double> vals = ppls(entry.policy);
    row.ppl = aggregate_values(vals);
    row.delta_vs_baseline = row.ppl.mean - rows.front().ppl.mean;
    try {
      const StatTestResult t = paired_t_test(PairedSample{vals, base_ppls});
      row.p_value = t.p_raw;
      row.has_p = true;
      row.significant = t.p_raw < threshold;
    } catch (const std::invalid_argument&) {
      row.has_p = false;  // degenerate differences
    }
    rows.push_back(row);
  }
  return rows;
}

void write_beta_sweep_report(const std::vector<BetaSweepRow>& rows, double threshold,
                             const std::string& path) {
  atomic_write(path, [&](const std::string& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + p);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-22s | %-19s | %-12s | %s\n", "Configuration",
                  "PPL (mean +/- std)", "Delta vs SFT", "p-value");
    os << buf;
    os << std::string(22, '-') << "-+-" << std::string(19, '-') << "-+-"
       << std::string(12, '-') << "-+--------\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      char ppl[64], delta[32], pcell[32];
      std::snprintf(ppl, sizeof(ppl), "%.3f +/- %.3f", r.ppl.mean, r.ppl.stddev);
      if (i == 0) {
        std::snprintf(delta, sizeof(delta), "--");
        std::snprintf(pcell, sizeof(pcell), "--");
      } else {
        std::snprintf(delta, sizeof(delta), "%+.3f", r.delta_vs_baseline);
        if (r.has_p) {
          std::snprintf(pcell, sizeof(pcell), "%.3f%s", r.p_value,
                        r.significant ? "*" : "");
        } else {
          std::snprintf(pcell, sizeof(pcell), "n/a");
        }
      }
      std::snprintf(buf, sizeof(buf), "%-22s | %-19s | %-12s | %s\n",
                    r.configuration.c_str(), ppl, delta, pcell);
      os << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "* p < %.4f (statistically significant after Bonferroni correction)\n",
                  threshold);
    os << buf;
  });
}

}  // namespace prefalign
