#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefalign/dpo.hpp"
#include "prefalign/lm.hpp"
#include "prefalign/metrics.hpp"
#include "prefalign/stats.hpp"

namespace prefalign {

struct PipelineConfig {
  // [paths]
  std::string notes_csv;
  std::string diagnoses_csv;
  std::string gold_tier;
  std::string mid_tier;
  std::string orig_tier;
  std::string workdir;
  // [extract]
  std::size_t min_words = 50;
  std::string category = "Nursing/other";
  // [lm]
  LMConfig lm;
  // [dpo]
  DPOConfig dpo;
  // [metrics]
  MetricTokenization metric_tok;
  std::size_t embed_dim = 16;
  bool embed_context_mix = false;
  // [run]
  std::uint64_t seed = 0;
  int pretrain_epochs = 0;
  double pretrain_lr = 1e-3;
  double holdout_fraction = 0.1;
  std::size_t generate_max_new = 48;
  double generate_temperature = 0.0;
};

// INI-style sections of key=value lines; '#' comments; unknown keys error.
PipelineConfig parse_pipeline_config_text(const std::string& text);
PipelineConfig load_pipeline_config(const std::string& path);

struct PipelineValidationError : std::runtime_error {
  explicit PipelineValidationError(std::vector<std::string> errs);
  std::vector<std::string> errors;
};

struct StageError : std::runtime_error {
  StageError(const std::string& stage, const std::string& message);
  std::string stage;
};

std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint64_t file_checksum(const std::string& path);
std::uint64_t stage_seed(std::uint64_t global_seed, const std::string& stage_name);

// write-to-temp-then-rename; `write` receives the temporary path
void atomic_write(const std::string& path,
                  const std::function<void(const std::string&)>& write);

struct RunSummary {
  std::vector<std::string> stages_run;
  std::vector<std::string> stages_skipped;
  std::string manifest_path;
};

// executes extract -> pairs -> base -> train -> generate -> eval -> stats ->
// report, skipping stages whose outputs are newer than their inputs; writes
// a manifest of artifact checksums at the end
RunSummary run_pipeline(const PipelineConfig& config, bool force = false,
                        bool verbose = false);

// returns the artifacts whose checksum no longer matches the manifest
std::vector<std::string> verify_manifest(const std::string& workdir);

// Table-style two-system report: machine CSV plus a human-readable table
// (Metric | System A | System B | Delta | p), means as "m +/- s" to three
// decimals. Stat results are matched to metrics by index in kMetricOrder.
void emit_report(const MetricReport& report,
                 const std::map<std::string, StatTestResult>& stat_results,
                 const std::string& csv_path, const std::string& table_path,
                 const std::string& system_a = "Base",
                 const std::string& system_b = "DPO");

struct BetaSweepRow {
  std::string configuration;
  MetricAggregate ppl;
  double delta_vs_baseline = 0.0;
  double p_value = 1.0;
  bool has_p = false;
  bool significant = false;
};

// sweep report: baseline row plus one row per beta, paired
// t-tests against the baseline PPLs with a Bonferroni-corrected threshold
std::vector<BetaSweepRow> beta_sweep_rows(
    const ModelParameters& baseline, const std::vector<BetaSweepEntry>& entries,
    const std::vector<std::string>& eval_texts, double alpha = 0.05);
void write_beta_sweep_report(const std::vector<BetaSweepRow>& rows,
                             double threshold, const std::string& path);

}  // namespace prefalign
