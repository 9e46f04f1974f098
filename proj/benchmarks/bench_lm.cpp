// Microbenchmarks for the model forward pass and the DPO loss/gradient step.

#include <benchmark/benchmark.h>

#include <random>

#include "prefalign/dpo.hpp"
#include "prefalign/lm.hpp"

using namespace prefalign;

namespace {

LMConfig bench_config(std::size_t d_model, std::size_t n_layers) {
  LMConfig c;
  c.d_model = d_model;
  c.n_layers = n_layers;
  c.n_heads = 4;
  c.n_kv_heads = 2;
  c.d_ff = 2 * d_model;
  c.max_seq_len = 256;
  c.seed = 1;
  return c;
}

std::vector<int> random_ids(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<int> ids{kBosId};
  for (std::size_t i = 1; i < n; ++i) ids.push_back(byte(rng));
  return ids;
}

TokenizedExample random_example(std::size_t prompt_len, std::size_t completion_len,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  TokenizedExample ex;
  ex.prompt = random_ids(prompt_len, seed);
  for (std::size_t i = 0; i < completion_len; ++i) ex.chosen.push_back(byte(rng));
  ex.chosen.push_back(kEosId);
  for (std::size_t i = 0; i < completion_len; ++i) ex.rejected.push_back(byte(rng));
  ex.rejected.push_back(kEosId);
  return ex;
}

}  // namespace

static void BM_ForwardLogits(benchmark::State& state) {
  const auto seq_len = static_cast<std::size_t>(state.range(0));
  const ModelParameters params = init_params(bench_config(32, 2));
  const std::vector<int> ids = random_ids(seq_len, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_logits(params, ids));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(seq_len));
}
BENCHMARK(BM_ForwardLogits)->Arg(32)->Arg(64)->Arg(128);

static void BM_DpoLossForwardOnly(benchmark::State& state) {
  const PolicyPair pair = PolicyPair::from_initial(init_params(bench_config(16, 1)));
  const std::vector<TokenizedExample> batch{random_example(32, 16, 3),
                                            random_example(32, 16, 4)};
  for (auto _ : state) {
    benchmark::DoNotOptimize(dpo_loss(pair, batch, 0.1));
  }
}
BENCHMARK(BM_DpoLossForwardOnly);

static void BM_DpoLossWithGradients(benchmark::State& state) {
  const PolicyPair pair = PolicyPair::from_initial(init_params(bench_config(16, 1)));
  const std::vector<TokenizedExample> batch{random_example(32, 16, 3),
                                            random_example(32, 16, 4)};
  for (auto _ : state) {
    GradientSet grads;
    benchmark::DoNotOptimize(dpo_loss_with_gradients(pair, batch, 0.1, grads));
  }
}
BENCHMARK(BM_DpoLossWithGradients);

static void BM_Generate(benchmark::State& state) {
  const ModelParameters params = init_params(bench_config(16, 1));
  const std::vector<int> prompt = random_ids(24, 9);
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate(params, prompt, 16, 0.0, 1));
  }
}
BENCHMARK(BM_Generate);

BENCHMARK_MAIN();
