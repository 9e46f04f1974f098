#include "prefalign/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace prefalign {

std::vector<std::string> metric_tokens(const std::string& text,
                                       const MetricTokenization& tok) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isspace(uc)) {
      flush();
      continue;
    }
    if (tok.strip_punct && std::ispunct(uc)) continue;
    word.push_back(tok.lowercase ? static_cast<char>(std::tolower(uc)) : c);
  }
  flush();
  return out;
}

namespace {

using NgramCounts = std::unordered_map<std::string, std::size_t>;

NgramCounts ngram_counts(const std::vector<std::string>& tokens, int n) {
  NgramCounts counts;
  if (n <= 0 || tokens.size() < static_cast<std::size_t>(n)) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int j = 1; j < n; ++j) {
      key.push_back('\x1f');
      key += tokens[i + static_cast<std::size_t>(j)];
    }
    ++counts[key];
  }
  return counts;
}

std::size_t lcs_length(const std::vector<std::string>& a,
                       const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace

double rouge_n(const std::string& candidate, const std::string& reference, int n,
               const MetricTokenization& tok) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  const auto cand = metric_tokens(candidate, tok);
  const auto ref = metric_tokens(reference, tok);
  const NgramCounts ref_counts = ngram_counts(ref, n);
  if (ref_counts.empty()) return 0.0;
  const NgramCounts cand_counts = ngram_counts(cand, n);
  std::size_t clipped = 0, total = 0;
  for (const auto& [gram, count] : ref_counts) {
    total += count;
    const auto it = cand_counts.find(gram);
    if (it != cand_counts.end()) clipped += std::min(count, it->second);
  }
  return static_cast<double>(clipped) / static_cast<double>(total);
}

double rouge_l(const std::string& candidate, const std::string& reference,
               const MetricTokenization& tok) {
  const auto cand = metric_tokens(candidate, tok);
  const auto ref = metric_tokens(reference, tok);
  if (cand.empty() || ref.empty()) return 0.0;
  const std::size_t lcs = lcs_length(cand, ref);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(cand.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

double bleu(const std::string& candidate, const std::string& reference,
            const MetricTokenization& tok, int max_n, BleuSmoothing smoothing) {
  if (max_n < 1) throw std::invalid_argument("bleu: max_n must be >= 1");
  const auto cand = metric_tokens(candidate, tok);
  const auto ref = metric_tokens(reference, tok);
  if (cand.empty()) return 0.0;

  double log_sum = 0.0;
  int used = 0;
  for (int n = 1; n <= max_n; ++n) {
    const NgramCounts cc = ngram_counts(cand, n);
    std::size_t total = 0;
    for (const auto& [gram, count] : cc) total += count;
    if (total == 0) continue;  // candidate shorter than n
    const NgramCounts rc = ngram_counts(ref, n);
    double matched = 0.0;
    for (const auto& [gram, count] : cc) {
      const auto it = rc.find(gram);
      if (it != rc.end()) matched += static_cast<double>(std::min(count, it->second));
    }
    if (matched == 0.0) {
      if (smoothing == BleuSmoothing::none) return 0.0;
      matched = 0.5;  // add-half smoothing
    }
    log_sum += std::log(matched / static_cast<double>(total));
    ++used;
  }
  if (used == 0) return 0.0;
  const double geo = std::exp(log_sum / static_cast<double>(used));
  const double c = static_cast<double>(cand.size());
  const double r = static_cast<double>(ref.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * geo;
}

std::vector<double> HashEmbedder::token_vector(const std::string& token) const {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : token) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::mt19937_64 rng(h ^ seed_);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dim_);
  double norm = 0.0;
  for (double& x : v) {
    x = gauss(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) norm = 1.0;
  for (double& x : v) x /= norm;
  return v;
}

std::vector<double> HashEmbedder::embed(const std::vector<std::string>& sentence,
                                        std::size_t index) const {
  std::vector<double> v = token_vector(sentence.at(index));
  if (context_mix_) {
    auto mix = [&](std::size_t i) {
      const std::vector<double> u = token_vector(sentence[i]);
      for (std::size_t j = 0; j < dim_; ++j) v[j] += 0.5 * u[j];
    };
    if (index > 0) mix(index - 1);
    if (index + 1 < sentence.size()) mix(index + 1);
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& x : v) x /= norm;
    }
  }
  return v;
}

double bert_score(const std::string& candidate, const std::string& reference,
                  const Embedder& embedder, const MetricTokenization& tok) {
  const auto cand = metric_tokens(candidate, tok);
  const auto ref = metric_tokens(reference, tok);
  if (cand.empty() || ref.empty()) return 0.0;

  auto embed_all = [&](const std::vector<std::string>& sentence) {
    std::vector<std::vector<double>> vs;
    vs.reserve(sentence.size());
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      std::vector<double> v = embedder.embed(sentence, i);
      double norm = 0.0;
      for (double x : v) norm += x * x;
      if (norm == 0.0) {
        throw std::runtime_error("bert_score: embedder produced a zero vector");
      }
      vs.push_back(std::move(v));
    }
    return vs;
  };
  const auto cand_vs = embed_all(cand);
  const auto ref_vs = embed_all(ref);

  auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  double total = 0.0;
  for (const auto& cv : cand_vs) {
    double best = -1.0;
    for (const auto& rv : ref_vs) best = std::max(best, cosine(cv, rv));
    total += best;
  }
  return total / static_cast<double>(cand_vs.size());
}

double perplexity(const ModelParameters& scorer, const std::string& text) {
  std::vector<int> ids{kBosId};
  const std::vector<int> body = tokenize(text);
  ids.insert(ids.end(), body.begin(), body.end());
  if (ids.size() < 2) throw std::invalid_argument("perplexity: text too short");
  // the per-token normalizer and the final exponential are carried in
  // extended precision; with double intermediates exp(log z) does not
  // round-trip and a uniform scorer lands a few ulps off the vocab size
  const Tensor logits = forward_logits(scorer, ids);
  const std::size_t vocab = scorer.config.vocab_size;
  long double total = 0.0L;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    long double mx = logits.at(t, 0);
    for (std::size_t j = 1; j < vocab; ++j) {
      mx = std::max(mx, static_cast<long double>(logits.at(t, j)));
    }
    long double z = 0.0L;
    for (std::size_t j = 0; j < vocab; ++j) {
      z += std::exp(static_cast<long double>(logits.at(t, j)) - mx);
    }
    const long double lp =
        static_cast<long double>(logits.at(t, static_cast<std::size_t>(ids[t + 1]))) -
        mx - std::log(z);
    total += lp;
  }
  return static_cast<double>(
      std::exp(-total / static_cast<long double>(ids.size() - 1)));
}

double mmlu_log_loss(const ModelParameters& scorer, const std::string& reference_text,
                     const std::string& candidate_text) {
  auto conditionals = [&](const std::string& text) {
    std::vector<int> ids{kBosId};
    const std::vector<int> body = tokenize(text);
    ids.insert(ids.end(), body.begin(), body.end());
    if (ids.size() < 2) throw std::invalid_argument("mmlu_log_loss: text too short");
    return token_logprobs(scorer, ids);
  };
  const std::vector<double> lr = conditionals(reference_text);
  const std::vector<double> lc = conditionals(candidate_text);
  const std::size_t T = std::min(lr.size(), lc.size());
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) total += std::abs(lr[t] - lc[t]);
  return total / static_cast<double>(T);
}

const std::vector<std::string> kMetricOrder = {
    "BLEU",      "ROUGE-1",    "ROUGE-2",            "ROUGE-L",
    "BERTScore", "Perplexity", "MMLU-style Log-Loss"};

MetricAggregate aggregate_values(const std::vector<double>& values) {
  MetricAggregate a;
  a.n = values.size();
  if (a.n == 0) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(a.n);
  if (a.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(a.n - 1));
  }
  return a;
}

MetricReport evaluate_corpus(const std::vector<std::string>& candidates,
                             const std::vector<std::string>& references,
                             const ModelParameters& scorer, const Embedder& embedder,
                             const MetricTokenization& tok,
                             const std::vector<std::string>* baseline_candidates,
                             const std::vector<std::string>* pair_ids) {
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("evaluate_corpus: candidate/reference length mismatch");
  }
  if (baseline_candidates != nullptr &&
      baseline_candidates->size() != references.size()) {
    throw std::invalid_argument("evaluate_corpus: baseline length mismatch");
  }
  MetricReport report;
  report.metric_names = kMetricOrder;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    report.pair_ids.push_back(pair_ids != nullptr ? (*pair_ids)[i]
                                                  : "pair-" + std::to_string(i));
  }
  auto score_system = [&](const std::vector<std::string>& cands,
                          std::map<std::string, std::vector<double>>& dest) {
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const std::string& c = cands[i];
      const std::string& r = references[i];
      dest["BLEU"].push_back(bleu(c, r, tok));
      dest["ROUGE-1"].push_back(rouge_n(c, r, 1, tok));
      dest["ROUGE-2"].push_back(rouge_n(c, r, 2, tok));
      dest["ROUGE-L"].push_back(rouge_l(c, r, tok));
      dest["BERTScore"].push_back(bert_score(c, r, embedder, tok));
      dest["Perplexity"].push_back(perplexity(scorer, c));
      dest["MMLU-style Log-Loss"].push_back(mmlu_log_loss(scorer, r, c));
    }
  };
  score_system(candidates, report.per_pair);
  for (const auto& name : report.metric_names) {
    report.aggregates[name] = aggregate_values(report.per_pair[name]);
  }
  if (baseline_candidates != nullptr) {
    report.has_baseline = true;
    score_system(*baseline_candidates, report.baseline_per_pair);
    for (const auto& name : report.metric_names) {
      report.baseline_aggregates[name] =
          aggregate_values(report.baseline_per_pair[name]);
      report.deltas[name] =
          report.aggregates[name].mean - report.baseline_aggregates[name].mean;
    }
  }
  return report;
}

void write_metric_report_csv(const MetricReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "metric,mean,std,n,delta\n";
  char buf[256];
  for (const auto& name : report.metric_names) {
    const auto& a = report.aggregates.at(name);
    if (report.has_baseline) {
      std::snprintf(buf, sizeof(buf), "\"%s\",%.12g,%.12g,%zu,%.12g\n", name.c_str(),
                    a.mean, a.stddev, a.n, report.deltas.at(name));
    } else {
      std::snprintf(buf, sizeof(buf), "\"%s\",%.12g,%.12g,%zu,\n", name.c_str(),
                    a.mean, a.stddev, a.n);
    }
    os << buf;
  }
}

}  // namespace prefalign
