#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prefalign/lm.hpp"

namespace prefalign {

struct MetricTokenization {
  bool lowercase = true;
  bool strip_punct = true;
};

std::vector<std::string> metric_tokens(const std::string& text,
                                       const MetricTokenization& tok);

// clipped-count recall over reference n-grams; 0 when the
// reference has no n-grams
double rouge_n(const std::string& candidate, const std::string& reference, int n,
               const MetricTokenization& tok);

// LCS F-measure over tokens
double rouge_l(const std::string& candidate, const std::string& reference,
               const MetricTokenization& tok);

enum class BleuSmoothing { none, add_half };

double bleu(const std::string& candidate, const std::string& reference,
            const MetricTokenization& tok, int max_n = 4,
            BleuSmoothing smoothing = BleuSmoothing::add_half);

// deterministic token-in-context embedding
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> embed(const std::vector<std::string>& sentence,
                                    std::size_t index) const = 0;
};

// token string -> seeded pseudo-random unit vector; optionally mixes the
// neighbouring tokens in for a context-dependent variant
class HashEmbedder final : public Embedder {
 public:
  HashEmbedder(std::size_t dim, std::uint64_t seed, bool context_mix = false)
      : dim_(dim), seed_(seed), context_mix_(context_mix) {}
  std::size_t dim() const override { return dim_; }
  std::vector<double> embed(const std::vector<std::string>& sentence,
                            std::size_t index) const override;

 private:
  std::vector<double> token_vector(const std::string& token) const;
  std::size_t dim_;
  std::uint64_t seed_;
  bool context_mix_;
};

// mean over candidate tokens of the max cosine against reference tokens
double bert_score(const std::string& candidate, const std::string& reference,
                  const Embedder& embedder, const MetricTokenization& tok);

double perplexity(const ModelParameters& scorer, const std::string& text);

// mean absolute difference of conditional log-probs, T = min of the two
// predicted lengths
double mmlu_log_loss(const ModelParameters& scorer, const std::string& reference_text,
                     const std::string& candidate_text);

struct MetricAggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample std (n-1); 0 when n == 1
  std::size_t n = 0;
};

struct MetricReport {
  // fixed presentation order
  std::vector<std::string> metric_names;
  std::vector<std::string> pair_ids;
  std::map<std::string, std::vector<double>> per_pair;
  std::map<std::string, MetricAggregate> aggregates;
  // present when a baseline candidate system was supplied
  std::map<std::string, std::vector<double>> baseline_per_pair;
  std::map<std::string, MetricAggregate> baseline_aggregates;
  std::map<std::string, double> deltas;  // candidate mean - baseline mean
  bool has_baseline = false;
};

extern const std::vector<std::string> kMetricOrder;

MetricAggregate aggregate_values(const std::vector<double>& values);

MetricReport evaluate_corpus(const std::vector<std::string>& candidates,
                             const std::vector<std::string>& references,
                             const ModelParameters& scorer, const Embedder& embedder,
                             const MetricTokenization& tok,
                             const std::vector<std::string>* baseline_candidates = nullptr,
                             const std::vector<std::string>* pair_ids = nullptr);

void write_metric_report_csv(const MetricReport& report, const std::string& path);

}  // namespace prefalign
