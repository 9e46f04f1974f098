// Microbenchmarks for surface metrics, embedding-based scoring and the
// exact Wilcoxon enumeration.

#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "prefalign/metrics.hpp"
#include "prefalign/stats.hpp"

using namespace prefalign;

namespace {

std::string random_sentence(std::mt19937_64& rng, std::size_t words) {
  static const std::vector<std::string> vocab{
      "patient", "stable",  "monitor", "output", "respiratory", "cardiac",
      "noted",   "tolerated", "plan",  "continue", "assessment", "overnight"};
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) out += ' ';
    out += vocab[pick(rng)];
  }
  return out;
}

const MetricTokenization kTok;

}  // namespace

static void BM_Bleu(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const std::string cand = random_sentence(rng, static_cast<std::size_t>(state.range(0)));
  const std::string ref = random_sentence(rng, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(bleu(cand, ref, kTok));
  }
}
BENCHMARK(BM_Bleu)->Arg(20)->Arg(100)->Arg(400);

static void BM_RougeL(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const std::string cand = random_sentence(rng, static_cast<std::size_t>(state.range(0)));
  const std::string ref = random_sentence(rng, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(rouge_l(cand, ref, kTok));
  }
}
BENCHMARK(BM_RougeL)->Arg(20)->Arg(100)->Arg(400);

static void BM_BertScore(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const std::string cand = random_sentence(rng, static_cast<std::size_t>(state.range(0)));
  const std::string ref = random_sentence(rng, static_cast<std::size_t>(state.range(0)));
  const HashEmbedder embedder(32, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(bert_score(cand, ref, embedder, kTok));
  }
}
BENCHMARK(BM_BertScore)->Arg(20)->Arg(100);

static void BM_WilcoxonExact(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.1, 1.0);
  PairedSample s;
  for (std::size_t i = 0; i < n; ++i) {
    s.a.push_back(g(rng));
    s.b.push_back(g(rng));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(wilcoxon_signed_rank(s, WilcoxonMode::exact));
  }
}
BENCHMARK(BM_WilcoxonExact)->Arg(12)->Arg(18)->Arg(22);

BENCHMARK_MAIN();
