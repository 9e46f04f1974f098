#include "prefalign/dpo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace prefalign {

void DPOConfig::validate() const {
  if (beta <= 0.0) throw std::invalid_argument("DPOConfig: beta must be > 0");
  if (learning_rate < 0.0) throw std::invalid_argument("DPOConfig: learning_rate must be >= 0");
  if (per_device_batch < 1) throw std::invalid_argument("DPOConfig: per_device_batch must be >= 1");
  if (grad_accum_steps < 1) throw std::invalid_argument("DPOConfig: grad_accum_steps must be >= 1");
  if (epochs < 1) throw std::invalid_argument("DPOConfig: epochs must be >= 1");
  if (max_prompt_tokens < 1) throw std::invalid_argument("DPOConfig: max_prompt_tokens must be >= 1");
  if (warmup_steps < 0) throw std::invalid_argument("DPOConfig: warmup_steps must be >= 0");
  if (scheduler != "cosine") throw std::invalid_argument("DPOConfig: unsupported scheduler " + scheduler);
  if (optimizer != "adamw") throw std::invalid_argument("DPOConfig: unsupported optimizer " + optimizer);
}

DPOConfig parse_dpo_config_text(const std::string& text) {
  DPOConfig c;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    try {
      if (key == "beta") c.beta = std::stod(value);
      else if (key == "learning_rate") c.learning_rate = std::stod(value);
      else if (key == "per_device_batch") c.per_device_batch = std::stoi(value);
      else if (key == "grad_accum_steps") c.grad_accum_steps = std::stoi(value);
      else if (key == "epochs") c.epochs = std::stoi(value);
      else if (key == "max_prompt_tokens") c.max_prompt_tokens = std::stoi(value);
      else if (key == "warmup_steps") c.warmup_steps = std::stoi(value);
      else if (key == "scheduler") c.scheduler = value;
      else if (key == "optimizer") c.optimizer = value;
      else if (key == "adam_beta1") c.adam_beta1 = std::stod(value);
      else if (key == "adam_beta2") c.adam_beta2 = std::stod(value);
      else if (key == "adam_eps") c.adam_eps = std::stod(value);
      else if (key == "weight_decay") c.weight_decay = std::stod(value);
      else if (key == "seed") c.seed = std::stoull(value);
      else throw std::runtime_error("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("config line " + std::to_string(lineno) + ": bad value for '" + key + "'");
    }
  }
  c.validate();
  return c;
}

DPOConfig load_dpo_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_dpo_config_text(text);
}

TokenizedExample tokenize_example(const PreferenceExample& example,
                                  int max_prompt_tokens) {
  static const std::string kMarker = "Original note: ";
  const std::size_t budget = static_cast<std::size_t>(max_prompt_tokens);
  std::vector<int> prompt{kBosId};

  const std::size_t marker = example.prompt.find(kMarker);
  std::string head, note;
  if (marker != std::string::npos) {
    head = example.prompt.substr(0, marker + kMarker.size());
    note = example.prompt.substr(marker + kMarker.size());
  } else {
    note = example.prompt;
  }
  std::vector<int> head_ids = tokenize(head);
  std::vector<int> note_ids = tokenize(note);
  if (1 + head_ids.size() > budget) {
    // degenerate: even the instruction head overflows; cap it from the right
    head_ids.resize(budget - 1);
    note_ids.clear();
  } else if (1 + head_ids.size() + note_ids.size() > budget) {
    // drop from the left of the note, keep its tail
    const std::size_t keep = budget - 1 - head_ids.size();
    note_ids.erase(note_ids.begin(),
                   note_ids.end() - static_cast<std::ptrdiff_t>(keep));
  }
  prompt.insert(prompt.end(), head_ids.begin(), head_ids.end());
  prompt.insert(prompt.end(), note_ids.begin(), note_ids.end());

  TokenizedExample out;
  out.prompt = std::move(prompt);
  out.chosen = tokenize(example.chosen);
  out.chosen.push_back(kEosId);
  out.rejected = tokenize(example.rejected);
  out.rejected.push_back(kEosId);
  return out;
}

namespace {

struct RefLogprobs {
  double chosen = 0.0;
  double rejected = 0.0;
};

RefLogprobs reference_logprobs(const ModelParameters& reference,
                               const TokenizedExample& e) {
  return {sequence_logprob(reference, e.prompt, e.chosen),
          sequence_logprob(reference, e.prompt, e.rejected)};
}

}  // namespace

DPOBatchResult dpo_loss(const PolicyPair& pair,
                        const std::vector<TokenizedExample>& batch, double beta) {
  if (batch.empty()) throw std::invalid_argument("dpo_loss: empty batch");
  DPOBatchResult r;
  double total = 0.0;
  for (const auto& e : batch) {
    const double lpw = sequence_logprob(pair.policy, e.prompt, e.chosen);
    const double lpl = sequence_logprob(pair.policy, e.prompt, e.rejected);
    const RefLogprobs ref = reference_logprobs(pair.reference, e);
    const double delta_w = lpw - ref.chosen;
    const double delta_l = lpl - ref.rejected;
    const double margin = beta * (delta_w - delta_l);
    r.margins.push_back(margin);
    r.chosen_rewards.push_back(beta * delta_w);
    r.rejected_rewards.push_back(beta * delta_l);
    total += -log_sigmoid_stable(margin);
  }
  r.loss = total / static_cast<double>(batch.size());
  return r;
}

DPOBatchResult dpo_loss_with_gradients(const PolicyPair& pair,
                                       const std::vector<TokenizedExample>& batch,
                                       double beta, GradientSet& grads_out) {
  if (batch.empty()) throw std::invalid_argument("dpo_loss: empty batch");
  Tape tape;
  const ParamNodes nodes = lift_params(tape, pair.policy);
  const LMConfig& config = pair.policy.config;

  DPOBatchResult r;
  std::vector<int> log_sig_nodes;
  for (const auto& e : batch) {
    const int lpw = sequence_logprob_node(tape, nodes, config, e.prompt, e.chosen);
    const int lpl = sequence_logprob_node(tape, nodes, config, e.prompt, e.rejected);
    const RefLogprobs ref = reference_logprobs(pair.reference, e);
    const int u = tape.affine({lpw, lpl}, {beta, -beta},
                              -beta * (ref.chosen - ref.rejected));
    const double margin = tape.value(u).data[0];
    r.margins.push_back(margin);
    r.chosen_rewards.push_back(beta * (tape.value(lpw).data[0] - ref.chosen));
    r.rejected_rewards.push_back(beta * (tape.value(lpl).data[0] - ref.rejected));
    log_sig_nodes.push_back(tape.log_sigmoid(u));
  }
  const std::vector<double> weights(log_sig_nodes.size(),
                                    -1.0 / static_cast<double>(batch.size()));
  const int loss = tape.affine(log_sig_nodes, weights, 0.0);
  r.loss = tape.value(loss).data[0];
  tape.backward(loss);
  grads_out = collect_gradients(tape, nodes, pair.policy);
  return r;
}

std::pair<double, double> implicit_reward_margin(const PolicyPair& pair,
                                                 const TokenizedExample& example,
                                                 double beta) {
  const DPOBatchResult r = dpo_loss(pair, {example}, beta);
  const double margin = r.margins[0];
  return {margin, sigmoid(margin)};
}

AdamState AdamState::zeros_like(const ModelParameters& params) {
  AdamState s;
  params.for_each([&](const std::string&, const Tensor& t) {
    s.m.emplace_back(t.shape);
    s.v.emplace_back(t.shape);
  });
  return s;
}

void adamw_step(ModelParameters& params, const GradientSet& grads, AdamState& state,
                double lr, const DPOConfig& config) {
  state.step += 1;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  std::size_t idx = 0;
  params.for_each([&](const std::string& name, Tensor& w) {
    const Tensor& g = grads.tensors[idx];
    if (!w.same_shape(g)) {
      throw std::invalid_argument("adamw_step: shape mismatch for " + name);
    }
    Tensor& m = state.m[idx];
    Tensor& v = state.v[idx];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.data[i];
      if (!std::isfinite(gi)) {
        throw std::runtime_error("adamw_step: nonfinite gradient in tensor " + name);
      }
      m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
      v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      w.data[i] -= lr * mhat / (std::sqrt(vhat) + config.adam_eps);
      w.data[i] -= lr * config.weight_decay * w.data[i];
    }
    ++idx;
  });
}

double cosine_lr(long step, long total_steps, double lr_max) {
  if (total_steps < 1) throw std::invalid_argument("cosine_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps) throw std::invalid_argument("cosine_lr: step out of range");
  return lr_max * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                         static_cast<double>(total_steps)));
}

namespace {

double scheduled_lr(long step, long total_steps, const DPOConfig& config) {
  if (config.warmup_steps > 0 && step < config.warmup_steps) {
    return config.learning_rate * static_cast<double>(step + 1) /
           static_cast<double>(config.warmup_steps);
  }
  const long s = step - config.warmup_steps;
  const long t = std::max<long>(1, total_steps - config.warmup_steps);
  return cosine_lr(std::min(s, t), t, config.learning_rate);
}

}  // namespace

void write_train_log_csv(const std::vector<TrainLogEntry>& log, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "step,loss,mean_margin,mean_chosen_reward,mean_rejected_reward,lr\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%ld,%.12g,%.12g,%.12g,%.12g,%.12g\n", e.step,
                  e.loss, e.mean_margin, e.mean_chosen_reward,
                  e.mean_rejected_reward, e.lr);
    os << buf;
  }
}

TrainResult train(const PolicyPair& pair, const std::vector<TokenizedExample>& dataset,
                  const DPOConfig& config) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");

  TrainResult result;
  result.policy = pair.policy;
  AdamState opt = AdamState::zeros_like(result.policy);

  const std::size_t n = dataset.size();
  const std::size_t micro = static_cast<std::size_t>(config.per_device_batch);
  const std::size_t micro_per_epoch = (n + micro - 1) / micro;
  const std::size_t accum = static_cast<std::size_t>(config.grad_accum_steps);
  const std::size_t steps_per_epoch = (micro_per_epoch + accum - 1) / accum;
  const long total_steps =
      static_cast<long>(steps_per_epoch) * static_cast<long>(config.epochs);

  std::mt19937_64 rng(config.seed);
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    std::size_t cursor = 0;
    while (cursor < n) {
      GradientSet accum_grads = GradientSet::zeros_like(result.policy);
      double window_loss = 0.0, window_margin = 0.0;
      double window_cw = 0.0, window_cl = 0.0;
      std::size_t window_micro = 0, window_examples = 0;
      PolicyPair current{result.policy, pair.reference};
      for (std::size_t a = 0; a < accum && cursor < n; ++a) {
        std::vector<TokenizedExample> batch;
        for (std::size_t b = 0; b < micro && cursor < n; ++b, ++cursor) {
          batch.push_back(dataset[order[cursor]]);
        }
        GradientSet grads = GradientSet::zeros_like(result.policy);
        const DPOBatchResult r =
            dpo_loss_with_gradients(current, batch, config.beta, grads);
        if (!std::isfinite(r.loss)) {
          throw std::runtime_error("train: nonfinite loss at optimizer step " +
                                   std::to_string(step));
        }
        accum_grads.accumulate(grads);
        window_loss += r.loss;
        for (std::size_t i = 0; i < r.margins.size(); ++i) {
          window_margin += r.margins[i];
          window_cw += r.chosen_rewards[i];
          window_cl += r.rejected_rewards[i];
        }
        window_examples += r.margins.size();
        ++window_micro;
      }
      accum_grads.scale(1.0 / static_cast<double>(window_micro));
      const double lr = scheduled_lr(step, total_steps, config);
      adamw_step(result.policy, accum_grads, opt, lr, config);
      ++step;
      result.log.push_back(TrainLogEntry{
          step, window_loss / static_cast<double>(window_micro),
          window_margin / static_cast<double>(window_examples),
          window_cw / static_cast<double>(window_examples),
          window_cl / static_cast<double>(window_examples), lr});
    }
  }
  if (!result.policy.all_finite()) {
    throw std::runtime_error("train: nonfinite parameters after training");
  }
  return result;
}

std::vector<BetaSweepEntry> beta_sweep(const PolicyPair& pair,
                                       const std::vector<TokenizedExample>& dataset,
                                       const std::vector<double>& betas,
                                       const DPOConfig& config) {
  if (betas.empty()) throw std::invalid_argument("beta_sweep: no betas given");
  for (double b : betas) {
    if (b <= 0.0) throw std::invalid_argument("beta_sweep: betas must be > 0");
  }
  std::vector<BetaSweepEntry> out;
  for (double b : betas) {
    DPOConfig c = config;
    c.beta = b;
    TrainResult r = train(pair, dataset, c);
    out.push_back(BetaSweepEntry{b, std::move(r.policy), std::move(r.log)});
  }
  return out;
}

ModelParameters pretrain_lm(ModelParameters params,
                            const std::vector<std::vector<int>>& sequences,
                            int epochs, double lr, std::uint64_t seed) {
  if (sequences.empty()) return params;
  DPOConfig opt_config;  // Adam moments/eps only
  AdamState opt = AdamState::zeros_like(params);
  std::mt19937_64 rng(seed);
  const std::size_t batch_size = 8;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::size_t> order(sequences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      Tape tape;
      const ParamNodes nodes = lift_params(tape, params);
      std::vector<int> lp_nodes;
      std::vector<double> weights;
      std::size_t token_total = 0;
      for (std::size_t b = 0; b < batch_size && cursor < order.size(); ++b, ++cursor) {
        const auto& seq = sequences[order[cursor]];
        if (seq.size() < 2) continue;
        const std::vector<int> prompt(seq.begin(), seq.begin() + 1);
        const std::vector<int> rest(seq.begin() + 1, seq.end());
        lp_nodes.push_back(sequence_logprob_node(tape, nodes, params.config, prompt, rest));
        token_total += rest.size();
      }
      if (lp_nodes.empty()) continue;
      weights.assign(lp_nodes.size(), -1.0 / static_cast<double>(token_total));
      const int loss = tape.affine(lp_nodes, weights, 0.0);
      tape.backward(loss);
      GradientSet grads = collect_gradients(tape, nodes, params);
      adamw_step(params, grads, opt, lr, opt_config);
    }
  }
  return params;
}

std::vector<PreferenceExample> make_synthetic_pairs(std::size_t count,
                                                    std::uint64_t seed,
                                                    bool with_template) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len_dist(6, 10);
  std::uniform_int_distribution<int> digit_dist(0, 9);
  std::vector<PreferenceExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::string digits;
    do {
      digits.clear();
      const int len = len_dist(rng);
      for (int j = 0; j < len; ++j) {
        digits.push_back(static_cast<char>('0' + digit_dist(rng)));
      }
    } while (std::adjacent_find(digits.begin(), digits.end(),
                                std::not_equal_to<>()) == digits.end());
    std::string chosen = digits;
    std::sort(chosen.begin(), chosen.end());
    // fixed derangement of the sorted string: rotate left by one
    std::string rejected = chosen.substr(1) + chosen.substr(0, 1);
    PreferenceExample e;
    e.prompt = with_template ? render_prompt(digits) : digits;
    e.chosen = std::move(chosen);
    e.rejected = std::move(rejected);
    e.source_note_id = "synth-" + std::to_string(i);
    e.tier_pair = TierPair::gold_vs_orig;
    out.push_back(std::move(e));
  }
  return out;
}

std::uint64_t parameters_checksum(const ModelParameters& params) {
  std::uint64_t h = 14695981039346656037ull;  // FNV-1a
  auto mix = [&h](const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  params.for_each([&](const std::string&, const Tensor& t) {
    mix(reinterpret_cast<const unsigned char*>(t.data.data()),
        t.data.size() * sizeof(double));
  });
  return h;
}

}  // namespace prefalign
