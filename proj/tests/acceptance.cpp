// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion re-derives its expectation independently of the
// library code under test.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefalign/corpus.hpp"
#include "prefalign/dpo.hpp"
#include "prefalign/metrics.hpp"
#include "prefalign/pairs.hpp"
#include "prefalign/pipeline.hpp"
#include "prefalign/stats.hpp"
#include "test_util.hpp"

using namespace prefalign;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void run_criterion(int number, const std::string& label, double budget_seconds,
                   const std::function<bool(std::string&)>& body) {
  std::string detail;
  bool ok = false;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
    ok = false;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_seconds > 0.0 && secs > budget_seconds) {
    ok = false;
    detail += (detail.empty() ? "" : "; ") + std::string("over time budget");
  }
  std::printf("%s criterion-%d %s (%.2f s)%s%s\n", ok ? "PASS" : "FAIL", number,
              label.c_str(), secs, detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::vector<int> bytes_of(const std::string& s, bool eos) {
  std::vector<int> ids;
  for (unsigned char c : s) ids.push_back(static_cast<int>(c));
  if (eos) ids.push_back(kEosId);
  return ids;
}

TokenizedExample tiny_example(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(2, 6);
  std::uniform_int_distribution<int> ch('a', 'z');
  auto word = [&] {
    std::string s;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) s.push_back(static_cast<char>(ch(rng)));
    return s;
  };
  TokenizedExample ex;
  ex.prompt.push_back(kBosId);
  for (int id : bytes_of(word(), false)) ex.prompt.push_back(id);
  ex.chosen = bytes_of(word(), true);
  ex.rejected = bytes_of(word(), true);
  return ex;
}

LMConfig toy_config() {
  LMConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.n_kv_heads = 1;
  c.d_ff = 16;
  c.max_seq_len = 64;
  c.seed = 11;
  return c;
}

ModelParameters uniform_scorer() {
  LMConfig c = toy_config();
  ModelParameters m = init_params(c);
  std::fill(m.tok_embed.data.begin(), m.tok_embed.data.end(), 0.0);
  std::fill(m.head.data.begin(), m.head.data.end(), 0.0);
  return m;
}

ModelParameters delta_scorer(int target) {
  ModelParameters m = init_params(toy_config());
  m.for_each([&](const std::string& name, Tensor& t) {
    if (name != "tok_embed" && name != "head" &&
        name.find("norm") == std::string::npos) {
      std::fill(t.data.begin(), t.data.end(), 0.0);
    }
  });
  std::fill(m.tok_embed.data.begin(), m.tok_embed.data.end(), 0.0);
  for (std::size_t r = 0; r < m.tok_embed.rows(); ++r) m.tok_embed.at(r, 0) = 1.0;
  std::fill(m.head.data.begin(), m.head.data.end(), 0.0);
  m.head.at(0, static_cast<std::size_t>(target)) = 1e9;
  return m;
}

// ---- metric oracles (independent reimplementations) ------------------------

const MetricTokenization kTok;

std::map<std::string, std::size_t> gram_counts(const std::vector<std::string>& t,
                                               int n) {
  std::map<std::string, std::size_t> m;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= t.size(); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) key += t[i + static_cast<std::size_t>(k)] + "\x01";
    ++m[key];
  }
  return m;
}

double oracle_rouge_n(const std::string& cand, const std::string& ref, int n) {
  const auto c = gram_counts(metric_tokens(cand, kTok), n);
  const auto r = gram_counts(metric_tokens(ref, kTok), n);
  std::size_t total = 0, clipped = 0;
  for (const auto& [g, count] : r) {
    total += count;
    const auto it = c.find(g);
    if (it != c.end()) clipped += std::min(count, it->second);
  }
  return total == 0 ? 0.0 : static_cast<double>(clipped) / static_cast<double>(total);
}

double oracle_rouge_l(const std::string& cand, const std::string& ref) {
  const auto a = metric_tokens(cand, kTok);
  const auto b = metric_tokens(ref, kTok);
  if (a.empty() || b.empty()) return 0.0;
  std::vector<std::vector<std::size_t>> dp(a.size() + 1,
                                           std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1
                                      : std::max(dp[i - 1][j], dp[i][j - 1]);
    }
  }
  const double lcs = static_cast<double>(dp[a.size()][b.size()]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(a.size());
  const double r = lcs / static_cast<double>(b.size());
  return 2.0 * p * r / (p + r);
}

double oracle_bleu(const std::string& cand, const std::string& ref) {
  const auto c = metric_tokens(cand, kTok);
  const auto r = metric_tokens(ref, kTok);
  if (c.empty()) return 0.0;
  double log_sum = 0.0;
  int used = 0;
  for (int n = 1; n <= 4; ++n) {
    const auto cg = gram_counts(c, n);
    const auto rg = gram_counts(r, n);
    std::size_t total = 0;
    double matched = 0.0;
    for (const auto& [g, count] : cg) {
      total += count;
      const auto it = rg.find(g);
      if (it != rg.end()) matched += static_cast<double>(std::min(count, it->second));
    }
    if (total == 0) continue;
    if (matched == 0.0) matched = 0.5;
    log_sum += std::log(matched / static_cast<double>(total));
    ++used;
  }
  if (used == 0) return 0.0;
  const double bp = c.size() > r.size()
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(r.size()) /
                                             static_cast<double>(c.size()));
  return bp * std::exp(log_sum / used);
}

std::string random_sentence(std::mt19937_64& rng, std::size_t max_len) {
  static const std::vector<std::string> vocab{"the", "cat", "sat", "on",  "mat",
                                              "dog", "ran", "sky", "blue"};
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
  std::string out;
  const std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += vocab[pick(rng)];
  }
  return out;
}

// full 2^n sign enumeration with independently computed midranks
double oracle_exact_wilcoxon_p(const std::vector<double>& a,
                               const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  if (d.empty()) return 1.0;
  const std::size_t n = d.size();
  std::vector<double> ranks(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) ++less;
      if (std::abs(d[j]) == std::abs(d[i])) ++equal;
    }
    ranks[i] = static_cast<double>(less) + (static_cast<double>(equal) + 1.0) / 2.0;
  }
  double wplus = 0.0, total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += ranks[i];
    if (d[i] > 0.0) wplus += ranks[i];
  }
  const double w_obs = std::min(wplus, total - wplus);
  std::size_t count = 0;
  const std::size_t assignments = std::size_t{1} << n;
  for (std::size_t mask = 0; mask < assignments; ++mask) {
    double s = 0.0;
    for (std::size_t bit = 0; bit < n; ++bit) {
      if ((mask >> bit) & 1u) s += ranks[bit];
    }
    if (std::min(s, total - s) <= w_obs + 1e-9) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(assignments);
}

}  // namespace

int main() {
  run_criterion(1, "initial-loss-ln2-and-zero-margins", 10.0, [](std::string& why) {
    std::mt19937_64 rng(101);
    const std::vector<std::size_t> head_dims{2, 4, 6};
    const std::vector<std::pair<std::size_t, std::size_t>> head_layouts{
        {1, 1}, {2, 1}, {2, 2}, {4, 2}};
    for (int trial = 0; trial < 20; ++trial) {
      LMConfig c;
      const auto [h, kv] = head_layouts[trial % head_layouts.size()];
      c.n_heads = h;
      c.n_kv_heads = kv;
      c.d_model = h * head_dims[trial % head_dims.size()];
      c.n_layers = 1 + trial % 2;
      c.d_ff = 2 * c.d_model;
      c.max_seq_len = 32;
      c.seed = 5000 + static_cast<std::uint64_t>(trial);
      const PolicyPair pair = PolicyPair::from_initial(init_params(c));
      std::vector<TokenizedExample> batch{tiny_example(rng), tiny_example(rng)};
      const DPOBatchResult r = dpo_loss(pair, batch, 0.1);
      if (std::abs(r.loss - std::log(2.0)) > 1e-9) {
        why = "loss off ln2 at trial " + std::to_string(trial);
        return false;
      }
      for (double m : r.margins) {
        if (std::abs(m) > 1e-12) {
          why = "nonzero margin at trial " + std::to_string(trial);
          return false;
        }
      }
    }
    return true;
  });

  run_criterion(2, "finite-difference-gradient-check", 120.0, [](std::string& why) {
    const LMConfig c = toy_config();
    ModelParameters params = init_params(c);
    if (c.param_count() > 10000) {
      why = "toy model too large: " + std::to_string(c.param_count());
      return false;
    }
    const ModelParameters reference = init_params([] {
      LMConfig r = toy_config();
      r.seed = 77;
      return r;
    }());
    std::mt19937_64 rng(7);
    const std::vector<TokenizedExample> batch{tiny_example(rng), tiny_example(rng)};
    const double beta = 0.1;
    GradientSet grads;
    PolicyPair pair{params, reference};
    dpo_loss_with_gradients(pair, batch, beta, grads);
    const double h = 1e-4;
    double max_rel = 0.0;
    std::size_t tensor_idx = 0;
    bool ok = true;
    params.for_each([&](const std::string& name, Tensor& t) {
      const Tensor& g = grads.tensors[tensor_idx++];
      for (std::size_t i = 0; i < t.data.size() && ok; ++i) {
        const double orig = t.data[i];
        t.data[i] = orig + h;
        const double up = dpo_loss({params, reference}, batch, beta).loss;
        t.data[i] = orig - h;
        const double down = dpo_loss({params, reference}, batch, beta).loss;
        t.data[i] = orig;
        const double fd = (up - down) / (2.0 * h);
        // relative error with a magnitude floor: central differences at
        // h = 1e-4 carry ~1e-8 truncation noise, so components smaller than
        // 1e-3 are effectively compared absolutely at that noise scale
        const double denom = std::max({std::abs(fd), std::abs(g.data[i]), 1e-3});
        const double rel = std::abs(fd - g.data[i]) / denom;
        max_rel = std::max(max_rel, rel);
        if (rel > 1e-4) {
          why = name + "[" + std::to_string(i) + "] rel err " + std::to_string(rel);
          ok = false;
        }
      }
    });
    if (ok) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "max rel err %.2e", max_rel);
      why = buf;
    }
    return ok;
  });

  run_criterion(3, "gradient-linear-in-beta-at-init", 30.0, [](std::string& why) {
    const PolicyPair pair = PolicyPair::from_initial(init_params(toy_config()));
    std::mt19937_64 rng(13);
    const std::vector<TokenizedExample> batch{tiny_example(rng), tiny_example(rng),
                                              tiny_example(rng)};
    GradientSet g_hi, g_lo;
    dpo_loss_with_gradients(pair, batch, 0.1, g_hi);
    dpo_loss_with_gradients(pair, batch, 0.05, g_lo);
    for (std::size_t t = 0; t < g_hi.tensors.size(); ++t) {
      for (std::size_t i = 0; i < g_hi.tensors[t].data.size(); ++i) {
        const double hi = g_hi.tensors[t].data[i];
        const double lo = g_lo.tensors[t].data[i];
        if (lo == 0.0 && hi == 0.0) continue;
        const double rel = std::abs(hi - 2.0 * lo) / std::max(std::abs(hi), 1e-300);
        if (rel > 1e-9) {
          why = "tensor " + std::to_string(t) + " rel err " + std::to_string(rel);
          return false;
        }
      }
    }
    return true;
  });

  run_criterion(4, "training-learns-synthetic-preferences", 300.0,
                [](std::string& why) {
    const std::vector<PreferenceExample> raw = make_synthetic_pairs(600, 2718);
    std::vector<TokenizedExample> tokenized;
    for (const auto& e : raw) tokenized.push_back(tokenize_example(e, 64));
    const std::vector<TokenizedExample> train_set(tokenized.begin(),
                                                  tokenized.begin() + 500);
    const std::vector<TokenizedExample> heldout(tokenized.begin() + 500,
                                                tokenized.end());
    LMConfig lc;
    lc.d_model = 16;
    lc.n_layers = 1;
    lc.n_heads = 2;
    lc.n_kv_heads = 1;
    lc.d_ff = 32;
    lc.max_seq_len = 64;
    lc.seed = 31;
    const PolicyPair initial = PolicyPair::from_initial(init_params(lc));
    for (const auto& ex : heldout) {
      if (implicit_reward_margin(initial, ex, 0.1).first != 0.0) {
        why = "held-out margin not exactly 0 at initialization";
        return false;
      }
    }
    DPOConfig dc;
    dc.beta = 0.1;
    dc.learning_rate = 1e-3;
    dc.per_device_batch = 8;
    dc.grad_accum_steps = 2;
    dc.epochs = 1;
    dc.max_prompt_tokens = 64;
    dc.seed = 99;
    const TrainResult result = train(initial, train_set, dc);
    const PolicyPair tuned{result.policy, initial.reference};
    double mean_margin = 0.0;
    std::size_t wins = 0;
    for (const auto& ex : heldout) {
      const auto [margin, win] = implicit_reward_margin(tuned, ex, dc.beta);
      mean_margin += margin;
      if (win > 0.5) ++wins;
    }
    mean_margin /= static_cast<double>(heldout.size());
    char buf[128];
    std::snprintf(buf, sizeof(buf), "mean margin %.4f, win>0.5 on %zu/%zu",
                  mean_margin, wins, heldout.size());
    why = buf;
    return mean_margin > 0.0 &&
           wins * 10 >= heldout.size() * 9;  // >= 90 percent
  });

  run_criterion(5, "pair-count-arithmetic", 60.0, [](std::string& why) {
    std::vector<QualityTriple> triples;
    for (int i = 0; i < 7070; ++i) {
      const std::string id = std::to_string(i);
      triples.push_back({id, "orig " + id, "mid " + id, "gold " + id});
    }
    const PairBuildResult big = build_pairs(triples);
    if (big.examples.size() != 21210) {
      why = "7070 triples gave " + std::to_string(big.examples.size());
      return false;
    }
    const PairBuildResult one = build_pairs({triples.front()});
    if (one.examples.size() != 3) {
      why = "1 triple gave " + std::to_string(one.examples.size());
      return false;
    }
    return true;
  });

  run_criterion(6, "metric-oracle-agreement", 30.0, [](std::string& why) {
    std::mt19937_64 rng(606);
    for (int i = 0; i < 100; ++i) {
      const std::string cand = random_sentence(rng, 8);
      const std::string ref = random_sentence(rng, 8);
      const struct {
        const char* name;
        double got, want;
      } checks[] = {
          {"bleu", bleu(cand, ref, kTok), oracle_bleu(cand, ref)},
          {"rouge1", rouge_n(cand, ref, 1, kTok), oracle_rouge_n(cand, ref, 1)},
          {"rouge2", rouge_n(cand, ref, 2, kTok), oracle_rouge_n(cand, ref, 2)},
          {"rougeL", rouge_l(cand, ref, kTok), oracle_rouge_l(cand, ref)},
      };
      for (const auto& chk : checks) {
        if (std::abs(chk.got - chk.want) > 1e-12) {
          why = std::string(chk.name) + " mismatch on pair " + std::to_string(i);
          return false;
        }
      }
    }
    const HashEmbedder embedder(12, 42);
    for (int i = 0; i < 50; ++i) {
      const std::string cand = random_sentence(rng, 6);
      const std::string ref = random_sentence(rng, 6);
      const auto ct = metric_tokens(cand, kTok);
      const auto rt = metric_tokens(ref, kTok);
      double expect = 0.0;
      for (std::size_t a = 0; a < ct.size(); ++a) {
        const auto va = embedder.embed(ct, a);
        double best = -1.0;
        for (std::size_t b = 0; b < rt.size(); ++b) {
          const auto vb = embedder.embed(rt, b);
          double dot = 0.0, na = 0.0, nb = 0.0;
          for (std::size_t j = 0; j < va.size(); ++j) {
            dot += va[j] * vb[j];
            na += va[j] * va[j];
            nb += vb[j] * vb[j];
          }
          best = std::max(best, dot / std::sqrt(na * nb));
        }
        expect += best;
      }
      expect /= static_cast<double>(ct.size());
      if (std::abs(bert_score(cand, ref, embedder, kTok) - expect) > 1e-12) {
        why = "bert_score mismatch on case " + std::to_string(i);
        return false;
      }
    }
    return true;
  });

  run_criterion(7, "perplexity-exactness", 30.0, [](std::string& why) {
    const ModelParameters uni = uniform_scorer();
    for (const std::string text : {"hi", "hello there", "x"}) {
      const double ppl = perplexity(uni, text);
      if (ppl != 259.0) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "uniform PPL %.17g on '%s'", ppl,
                      text.c_str());
        why = buf;
        return false;
      }
    }
    const ModelParameters delta = delta_scorer('z');
    const double ppl = perplexity(delta, "zzzz");
    if (ppl != 1.0) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "delta PPL %.17g", ppl);
      why = buf;
      return false;
    }
    return true;
  });

  run_criterion(8, "log-loss-identity", 30.0, [](std::string& why) {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      LMConfig c = toy_config();
      c.seed = seed;
      const ModelParameters m = init_params(c);
      for (const std::string text : {"same text", "zz", "another sample"}) {
        if (mmlu_log_loss(m, text, text) != 0.0) {
          why = "identity violated for seed " + std::to_string(seed);
          return false;
        }
      }
    }
    const ModelParameters uni = uniform_scorer();
    if (mmlu_log_loss(uni, "abcdef", "wxyz") != 0.0 ||
        mmlu_log_loss(uni, "short", "a much longer string") != 0.0) {
      why = "uniform scorer gave nonzero log-loss";
      return false;
    }
    return true;
  });

  run_criterion(9, "wilcoxon-exact-enumeration", 60.0, [](std::string& why) {
    std::mt19937_64 rng(909);
    std::uniform_int_distribution<int> size(2, 12);
    std::uniform_int_distribution<int> value(0, 5);
    for (int trial = 0; trial < 50; ++trial) {
      const int n = size(rng);
      std::vector<double> a(n), b(n);
      for (int i = 0; i < n; ++i) {
        a[i] = value(rng);
        b[i] = value(rng);
      }
      const StatTestResult r = wilcoxon_signed_rank({a, b}, WilcoxonMode::exact);
      const double want = oracle_exact_wilcoxon_p(a, b);
      if (std::abs(r.p_raw - want) > 1e-12) {
        why = "p mismatch on fixture " + std::to_string(trial);
        return false;
      }
    }
    const StatTestResult all_pos =
        wilcoxon_signed_rank({{5, 6, 7, 8, 9, 10}, {1, 2, 3, 4, 5, 6}});
    if (all_pos.p_raw != 0.03125) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "all-positive p %.17g", all_pos.p_raw);
      why = buf;
      return false;
    }
    return true;
  });

  run_criterion(10, "multiple-comparison-procedures", 10.0, [](std::string& why) {
    const auto adj = benjamini_hochberg({0.01, 0.02, 0.03, 0.04, 0.05});
    for (double q : adj) {
      if (std::abs(q - 0.05) > 1e-12) {
        why = "BH ladder value " + std::to_string(q);
        return false;
      }
    }
    const double thr = bonferroni_threshold(0.05, 3);
    if (std::abs(thr - 0.05 / 3.0) > 1e-15 || std::abs(thr - 0.0167) > 5e-5) {
      why = "threshold " + std::to_string(thr);
      return false;
    }
    const bool sig_012 = 0.012 < thr;
    const bool sig_035 = 0.035 < thr;
    const bool sig_042 = 0.042 < thr;
    if (!sig_012 || sig_035 || sig_042) {
      why = "classification wrong";
      return false;
    }
    return true;
  });

  run_criterion(11, "extraction-fixture-stage-counts", 30.0, [](std::string& why) {
    const std::string dir = testutil::scratch_dir("acc_extract");
    const testutil::ExtractionFixture fx = testutil::write_extraction_fixture(dir);
    const auto notes = load_notes(fx.notes_csv);
    const auto diagnoses = load_diagnoses(fx.diagnoses_csv);
    const auto [survivors, stats] = extract_corpus(notes, diagnoses);
    auto expect = [&](const char* name, std::size_t got, std::size_t want) {
      if (got != want) {
        why = std::string(name) + " = " + std::to_string(got) + ", want " +
              std::to_string(want);
        return false;
      }
      return true;
    };
    if (!expect("input", stats.input_count, fx.input_count)) return false;
    if (!expect("after_join", stats.after_join, fx.after_join)) return false;
    if (!expect("after_category", stats.after_category, fx.after_category)) {
      return false;
    }
    if (!expect("after_quality", stats.after_quality, fx.after_quality)) return false;
    if (!expect("final", survivors.size(), fx.final_count)) return false;
    std::vector<long> ids;
    for (const auto& n : survivors) {
      ids.push_back(n.row_id);
      if (n.hadm_id == 103) {  // admission whose only code is V428
        why = "V428 admission survived the 428-prefix join";
        return false;
      }
    }
    std::sort(ids.begin(), ids.end());
    if (ids != fx.surviving_row_ids) {
      why = "surviving row ids differ";
      return false;
    }
    return true;
  });

  run_criterion(12, "end-to-end-run-determinism", 900.0, [](std::string& why) {
    const std::string dir = testutil::scratch_dir("acc_run");
    const testutil::SynthWorkspace ws =
        testutil::write_synth_workspace(dir + "/data", 10, 404);
    auto run_once = [&](const std::string& workdir) {
      testutil::write_file(workdir + ".cfg",
                           testutil::pipeline_config_text(ws, workdir, 1234));
      const std::string cmd = std::string("\"") + PREFALIGN_CLI_PATH +
                              "\" run --config \"" + workdir +
                              ".cfg\" > /dev/null 2>&1";
      return std::system(cmd.c_str()) == 0;
    };
    if (!run_once(dir + "/work_a") || !run_once(dir + "/work_b")) {
      why = "CLI run failed";
      return false;
    }
    for (const char* name : {"report.csv", "report.txt", "eval_report.csv"}) {
      if (testutil::read_file(dir + "/work_a/" + name) !=
          testutil::read_file(dir + "/work_b/" + name)) {
        why = std::string(name) + " differs between runs";
        return false;
      }
    }
    std::ifstream ma(dir + "/work_a/manifest.json"), mb(dir + "/work_b/manifest.json");
    const nlohmann::json ja = nlohmann::json::parse(ma);
    const nlohmann::json jb = nlohmann::json::parse(mb);
    if (ja.at("artifacts") != jb.at("artifacts") ||
        ja.at("config_hash") != jb.at("config_hash")) {
      why = "manifest checksums differ";
      return false;
    }
    return true;
  });

  run_criterion(13, "beta-sweep-report-shape", 300.0, [](std::string& why) {
    const std::vector<PreferenceExample> raw = make_synthetic_pairs(60, 515);
    std::vector<TokenizedExample> tokenized;
    for (const auto& e : raw) tokenized.push_back(tokenize_example(e, 64));
    LMConfig lc = toy_config();
    lc.seed = 21;
    const PolicyPair initial = PolicyPair::from_initial(init_params(lc));
    DPOConfig dc;
    dc.learning_rate = 1e-3;
    dc.per_device_batch = 8;
    dc.grad_accum_steps = 1;
    dc.epochs = 1;
    dc.max_prompt_tokens = 64;
    dc.seed = 7;
    const std::vector<double> betas{0.01, 0.05, 0.1};
    const auto entries = beta_sweep(initial, tokenized, betas, dc);
    std::vector<std::string> eval_texts;
    for (std::size_t i = 0; i < 12; ++i) eval_texts.push_back(raw[i].chosen);
    const auto rows =
        beta_sweep_rows(initial.reference, entries, eval_texts, 0.05);
    const double threshold = bonferroni_threshold(0.05, entries.size());
    const std::string dir = testutil::scratch_dir("acc_sweep");
    const std::string path = dir + "/sweep.txt";
    write_beta_sweep_report(rows, threshold, path);

    std::ifstream is(path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(is, line);) lines.push_back(line);
    // golden structure: header, rule, SFT row, three beta rows, footnote
    const std::vector<std::regex> expected{
        std::regex(R"(Configuration\s+\| PPL \(mean \+/- std\)\s+\| Delta vs SFT \| p-value)"),
        std::regex(R"(-+\+-+\+-+\+-+)"),
        std::regex(R"(SFT\s+\| \d+\.\d{3} \+/- \d+\.\d{3}\s+\| --\s+\| --)"),
        std::regex(R"(DPO \(beta=0\.01\)\s+\| \d+\.\d{3} \+/- \d+\.\d{3}\s+\| [+-]\d+\.\d{3}\s+\| (\d+\.\d{3}\*?|n/a))"),
        std::regex(R"(DPO \(beta=0\.05\)\s+\| \d+\.\d{3} \+/- \d+\.\d{3}\s+\| [+-]\d+\.\d{3}\s+\| (\d+\.\d{3}\*?|n/a))"),
        std::regex(R"(DPO \(beta=0\.1\)\s+\| \d+\.\d{3} \+/- \d+\.\d{3}\s+\| [+-]\d+\.\d{3}\s+\| (\d+\.\d{3}\*?|n/a))"),
        std::regex(R"(\* p < 0\.0167 \(statistically significant after Bonferroni correction\))"),
    };
    if (lines.size() != expected.size()) {
      why = "report has " + std::to_string(lines.size()) + " lines, want " +
            std::to_string(expected.size());
      return false;
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (!std::regex_search(lines[i], expected[i])) {
        why = "line " + std::to_string(i + 1) + " shape mismatch: '" + lines[i] + "'";
        return false;
      }
    }
    return true;
  });

  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all 13 criteria passed\n");
  return 0;
}
