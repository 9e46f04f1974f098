#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prefalign/lm.hpp"
#include "prefalign/pairs.hpp"

namespace prefalign {

struct DPOConfig {
  double beta = 0.1;
  double learning_rate = 5.0e-7;
  int per_device_batch = 8;
  int grad_accum_steps = 2;
  int epochs = 1;
  int max_prompt_tokens = 512;
  int warmup_steps = 0;
  std::string scheduler = "cosine";
  std::string optimizer = "adamw";
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  int effective_batch() const { return per_device_batch * grad_accum_steps; }
  void validate() const;
};

// flat key=value lines; '#' comments; unknown keys are errors
DPOConfig parse_dpo_config_text(const std::string& text);
DPOConfig load_dpo_config(const std::string& path);

struct TokenizedExample {
  std::vector<int> prompt;    // BOS + prompt bytes, truncated
  std::vector<int> chosen;    // bytes + EOS
  std::vector<int> rejected;  // bytes + EOS
};

// Prompt truncation keeps the instruction head and drops tokens from the
// left of the embedded note ("Original note: " marker); prompts without the
// marker keep their tail.
TokenizedExample tokenize_example(const PreferenceExample& example,
                                  int max_prompt_tokens);

struct PolicyPair {
  ModelParameters policy;
  ModelParameters reference;

  static PolicyPair from_initial(const ModelParameters& initial) {
    return PolicyPair{initial, initial};
  }
};

struct DPOBatchResult {
  double loss = 0.0;
  std::vector<double> margins;           // beta * (delta_w - delta_l)
  std::vector<double> chosen_rewards;    // beta * delta_w
  std::vector<double> rejected_rewards;  // beta * delta_l
};

DPOBatchResult dpo_loss(const PolicyPair& pair,
                        const std::vector<TokenizedExample>& batch, double beta);
// same value, plus gradients of the loss w.r.t. the policy parameters
DPOBatchResult dpo_loss_with_gradients(const PolicyPair& pair,
                                       const std::vector<TokenizedExample>& batch,
                                       double beta, GradientSet& grads_out);

// (reward margin r_w - r_l, Bradley-Terry win probability)
std::pair<double, double> implicit_reward_margin(const PolicyPair& pair,
                                                 const TokenizedExample& example,
                                                 double beta);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;

  static AdamState zeros_like(const ModelParameters& params);
};

void adamw_step(ModelParameters& params, const GradientSet& grads, AdamState& state,
                double lr, const DPOConfig& config);

double cosine_lr(long step, long total_steps, double lr_max);

struct TrainLogEntry {
  long step = 0;
  double loss = 0.0;
  double mean_margin = 0.0;
  double mean_chosen_reward = 0.0;
  double mean_rejected_reward = 0.0;
  double lr = 0.0;
};

void write_train_log_csv(const std::vector<TrainLogEntry>& log, const std::string& path);

struct TrainResult {
  ModelParameters policy;
  std::vector<TrainLogEntry> log;
};

TrainResult train(const PolicyPair& pair, const std::vector<TokenizedExample>& dataset,
                  const DPOConfig& config);

struct BetaSweepEntry {
  double beta = 0.0;
  ModelParameters policy;
  std::vector<TrainLogEntry> log;
};

// one policy per beta, all from the same initialization and data order
std::vector<BetaSweepEntry> beta_sweep(const PolicyPair& pair,
                                       const std::vector<TokenizedExample>& dataset,
                                       const std::vector<double>& betas,
                                       const DPOConfig& config);

// maximum-likelihood pass over token sequences; gives a fresh model basic
// fluency before preference training
ModelParameters pretrain_lm(ModelParameters params,
                            const std::vector<std::vector<int>>& sequences,
                            int epochs, double lr, std::uint64_t seed);

// Synthetic separable preference task: prompts are short digit strings,
// chosen = digits sorted ascending, rejected = a fixed derangement.
std::vector<PreferenceExample> make_synthetic_pairs(std::size_t count,
                                                    std::uint64_t seed,
                                                    bool with_template = false);

std::uint64_t parameters_checksum(const ModelParameters& params);

}  // namespace prefalign
