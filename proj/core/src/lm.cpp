#include "prefalign/lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace prefalign {

void LMConfig::validate() const {
  if (vocab_size < kMinVocab) {
    throw std::invalid_argument("LMConfig: vocab_size must be >= 259 (byte tokenizer + specials)");
  }
  if (n_heads == 0 || n_kv_heads == 0 || n_heads % n_kv_heads != 0) {
    throw std::invalid_argument("LMConfig: n_kv_heads must divide n_heads");
  }
  if (d_model == 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("LMConfig: d_model must be divisible by n_heads");
  }
  if (head_dim() % 2 != 0) {
    throw std::invalid_argument("LMConfig: head dimension must be even for RoPE");
  }
  if (max_seq_len < 1) throw std::invalid_argument("LMConfig: max_seq_len must be >= 1");
  if (n_layers == 0) throw std::invalid_argument("LMConfig: n_layers must be >= 1");
  if (d_ff == 0) throw std::invalid_argument("LMConfig: d_ff must be >= 1");
  if (rope_base <= 0.0) throw std::invalid_argument("LMConfig: rope_base must be positive");
}

std::size_t LMConfig::param_count() const {
  const std::size_t per_layer = d_model                 // attn_norm
                                + d_model * d_model     // wq
                                + 2 * d_model * kv_dim()  // wk, wv
                                + d_model * d_model     // wo
                                + d_model               // mlp_norm
                                + 2 * d_model * d_ff;   // w_in, w_out
  return vocab_size * d_model + n_layers * per_layer + d_model +
         d_model * vocab_size;
}

std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id > 255) continue;  // specials stripped
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

void apply_rope(std::span<double> head, std::size_t position, double rope_base) {
  if (head.size() % 2 != 0) throw std::invalid_argument("apply_rope: odd head dimension");
  const std::size_t d = head.size();
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double th = static_cast<double>(position) *
                      std::pow(rope_base, -2.0 * static_cast<double>(i) /
                                              static_cast<double>(d));
    const double c = std::cos(th), s = std::sin(th);
    const double a = head[2 * i], b = head[2 * i + 1];
    head[2 * i] = a * c - b * s;
    head[2 * i + 1] = a * s + b * c;
  }
}

void ModelParameters::for_each(
    const std::function<void(const std::string&, Tensor&)>& f) {
  f("tok_embed", tok_embed);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    f(p + "attn_norm", layers[l].attn_norm);
    f(p + "wq", layers[l].wq);
    f(p + "wk", layers[l].wk);
    f(p + "wv", layers[l].wv);
    f(p + "wo", layers[l].wo);
    f(p + "mlp_norm", layers[l].mlp_norm);
    f(p + "w_in", layers[l].w_in);
    f(p + "w_out", layers[l].w_out);
  }
  f("final_norm", final_norm);
  f("head", head);
}

void ModelParameters::for_each(
    const std::function<void(const std::string&, const Tensor&)>& f) const {
  const_cast<ModelParameters*>(this)->for_each(
      [&](const std::string& name, Tensor& t) { f(name, t); });
}

std::size_t ModelParameters::param_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

bool ModelParameters::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Tensor& t) {
    for (double v : t.data) {
      if (!std::isfinite(v)) ok = false;
    }
  });
  return ok;
}

ModelParameters init_params(const LMConfig& config) {
  config.validate();
  ModelParameters p;
  p.config = config;
  const std::size_t d = config.d_model, kv = config.kv_dim();
  p.tok_embed = Tensor({config.vocab_size, d});
  p.layers.resize(config.n_layers);
  for (auto& layer : p.layers) {
    layer.attn_norm = Tensor({d});
    layer.wq = Tensor({d, d});
    layer.wk = Tensor({d, kv});
    layer.wv = Tensor({d, kv});
    layer.wo = Tensor({d, d});
    layer.mlp_norm = Tensor({d});
    layer.w_in = Tensor({d, config.d_ff});
    layer.w_out = Tensor({config.d_ff, d});
  }
  p.final_norm = Tensor({d});
  p.head = Tensor({d, config.vocab_size});

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 0.02);
  p.for_each([&](const std::string& name, Tensor& t) {
    if (name.find("norm") != std::string::npos) {
      std::fill(t.data.begin(), t.data.end(), 1.0);
    } else {
      for (double& v : t.data) v = gauss(rng);
    }
  });
  return p;
}

GradientSet GradientSet::zeros_like(const ModelParameters& params) {
  GradientSet g;
  params.for_each([&](const std::string& name, const Tensor& t) {
    g.names.push_back(name);
    g.tensors.emplace_back(t.shape);
  });
  return g;
}

void GradientSet::accumulate(const GradientSet& other) {
  if (other.tensors.size() != tensors.size()) {
    throw std::invalid_argument("GradientSet: layout mismatch");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!tensors[i].same_shape(other.tensors[i])) {
      throw std::invalid_argument("GradientSet: shape mismatch at " + names[i]);
    }
    for (std::size_t j = 0; j < tensors[i].size(); ++j) {
      tensors[i].data[j] += other.tensors[i].data[j];
    }
  }
}

void GradientSet::scale(double s) {
  for (auto& t : tensors) {
    for (double& v : t.data) v *= s;
  }
}

ParamNodes lift_params(Tape& tape, const ModelParameters& params) {
  ParamNodes n;
  n.tok_embed = tape.leaf(params.tok_embed);
  for (const auto& layer : params.layers) {
    ParamNodes::Layer ln{};
    ln.attn_norm = tape.leaf(layer.attn_norm);
    ln.wq = tape.leaf(layer.wq);
    ln.wk = tape.leaf(layer.wk);
    ln.wv = tape.leaf(layer.wv);
    ln.wo = tape.leaf(layer.wo);
    ln.mlp_norm = tape.leaf(layer.mlp_norm);
    ln.w_in = tape.leaf(layer.w_in);
    ln.w_out = tape.leaf(layer.w_out);
    n.layers.push_back(ln);
  }
  n.final_norm = tape.leaf(params.final_norm);
  n.head = tape.leaf(params.head);
  return n;
}

int forward_logits_node(Tape& tape, const ParamNodes& p, const LMConfig& config,
                        const std::vector<int>& ids) {
  if (ids.empty()) throw std::invalid_argument("forward: empty sequence");
  if (ids.size() > config.max_seq_len) {
    throw std::invalid_argument("forward: sequence longer than max_seq_len");
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw std::out_of_range("forward: token id out of range");
    }
  }
  int x = tape.embed(p.tok_embed, ids);
  for (const auto& layer : p.layers) {
    int h = tape.rms_norm(x, layer.attn_norm);
    int q = tape.rope(tape.matmul(h, layer.wq), config.head_dim(), config.rope_base);
    int k = tape.rope(tape.matmul(h, layer.wk), config.head_dim(), config.rope_base);
    int v = tape.matmul(h, layer.wv);
    int a = tape.causal_gqa_attention(q, k, v, config.n_heads, config.n_kv_heads);
    x = tape.add(x, tape.matmul(a, layer.wo));
    int h2 = tape.rms_norm(x, layer.mlp_norm);
    x = tape.add(x, tape.matmul(tape.silu(tape.matmul(h2, layer.w_in)), layer.w_out));
  }
  return tape.matmul(tape.rms_norm(x, p.final_norm), p.head);
}

int sequence_logprob_node(Tape& tape, const ParamNodes& p, const LMConfig& config,
                          const std::vector<int>& prompt,
                          const std::vector<int>& completion) {
  if (prompt.empty()) throw std::invalid_argument("sequence_logprob: empty prompt");
  if (completion.empty()) throw std::invalid_argument("sequence_logprob: empty completion");
  std::vector<int> ids = prompt;
  ids.insert(ids.end(), completion.begin(), completion.end());
  const int logits = forward_logits_node(tape, p, config, ids);
  std::vector<std::pair<std::size_t, int>> targets;
  targets.reserve(completion.size());
  for (std::size_t t = prompt.size(); t < ids.size(); ++t) {
    targets.emplace_back(t - 1, ids[t]);
  }
  return tape.logprob_sum(logits, targets);
}

GradientSet collect_gradients(const Tape& tape, const ParamNodes& p,
                              const ModelParameters& like) {
  GradientSet g = GradientSet::zeros_like(like);
  std::vector<int> order;
  order.push_back(p.tok_embed);
  for (const auto& layer : p.layers) {
    order.insert(order.end(), {layer.attn_norm, layer.wq, layer.wk, layer.wv,
                               layer.wo, layer.mlp_norm, layer.w_in, layer.w_out});
  }
  order.push_back(p.final_norm);
  order.push_back(p.head);
  for (std::size_t i = 0; i < order.size(); ++i) g.tensors[i] = tape.grad(order[i]);
  return g;
}

Tensor forward_logits(const ModelParameters& params, const std::vector<int>& ids) {
  Tape tape;
  ParamNodes p = lift_params(tape, params);
  const int logits = forward_logits_node(tape, p, params.config, ids);
  return tape.value(logits);
}

std::vector<double> token_logprobs(const ModelParameters& params,
                                   const std::vector<int>& ids) {
  if (ids.size() < 2) {
    throw std::invalid_argument("token_logprobs: sequence must have length >= 2");
  }
  const Tensor logits = forward_logits(params, ids);
  const std::size_t V = logits.cols();
  std::vector<double> out;
  out.reserve(ids.size() - 1);
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    double mx = logits.at(t, 0);
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, logits.at(t, j));
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(logits.at(t, j) - mx);
    out.push_back(logits.at(t, static_cast<std::size_t>(ids[t + 1])) - mx - std::log(z));
  }
  return out;
}

double sequence_logprob(const ModelParameters& params,
                        const std::vector<int>& prompt,
                        const std::vector<int>& completion) {
  if (prompt.empty()) throw std::invalid_argument("sequence_logprob: empty prompt");
  if (completion.empty()) throw std::invalid_argument("sequence_logprob: empty completion");
  std::vector<int> ids = prompt;
  ids.insert(ids.end(), completion.begin(), completion.end());
  const std::vector<double> lps = token_logprobs(params, ids);
  double total = 0.0;
  for (std::size_t t = prompt.size(); t < ids.size(); ++t) total += lps[t - 1];
  return total;
}

std::vector<int> generate(const ModelParameters& params, std::vector<int> prompt,
                          std::size_t max_new, double temperature,
                          std::uint64_t seed) {
  if (temperature < 0.0) throw std::invalid_argument("generate: temperature must be >= 0");
  if (prompt.empty()) prompt.push_back(kBosId);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<int> completion;
  const std::size_t V = params.config.vocab_size;
  for (std::size_t step = 0; step < max_new; ++step) {
    if (prompt.size() >= params.config.max_seq_len) break;
    const Tensor logits = forward_logits(params, prompt);
    const std::size_t row = prompt.size() - 1;
    int next = 0;
    if (temperature == 0.0) {
      double best = logits.at(row, 0);
      for (std::size_t j = 1; j < V; ++j) {
        if (logits.at(row, j) > best) {  // ties keep the lowest id
          best = logits.at(row, j);
          next = static_cast<int>(j);
        }
      }
    } else {
      double mx = logits.at(row, 0);
      for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, logits.at(row, j));
      std::vector<double> probs(V);
      double z = 0.0;
      for (std::size_t j = 0; j < V; ++j) {
        probs[j] = std::exp((logits.at(row, j) - mx) / temperature);
        z += probs[j];
      }
      const double u = unif(rng) * z;
      double acc = 0.0;
      next = static_cast<int>(V) - 1;
      for (std::size_t j = 0; j < V; ++j) {
        acc += probs[j];
        if (u < acc) {
          next = static_cast<int>(j);
          break;
        }
      }
    }
    if (next == kEosId) break;
    completion.push_back(next);
    prompt.push_back(next);
  }
  return completion;
}

namespace {

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(os, bits);
}

double read_f64(std::istream& is) {
  const std::uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

constexpr char kMagic[5] = {'P', 'A', 'L', 'M', '1'};

}  // namespace

void save_checkpoint(const ModelParameters& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  const LMConfig& c = params.config;
  for (std::size_t v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads,
                        c.n_kv_heads, c.d_ff, c.max_seq_len}) {
    write_u64(os, static_cast<std::uint64_t>(v));
  }
  write_f64(os, c.rope_base);
  write_u64(os, c.seed);
  params.for_each([&](const std::string&, const Tensor& t) {
    for (double v : t.data) write_f64(os, v);
  });
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

ModelParameters load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[5];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  LMConfig c;
  c.vocab_size = static_cast<std::size_t>(read_u64(is));
  c.d_model = static_cast<std::size_t>(read_u64(is));
  c.n_layers = static_cast<std::size_t>(read_u64(is));
  c.n_heads = static_cast<std::size_t>(read_u64(is));
  c.n_kv_heads = static_cast<std::size_t>(read_u64(is));
  c.d_ff = static_cast<std::size_t>(read_u64(is));
  c.max_seq_len = static_cast<std::size_t>(read_u64(is));
  c.rope_base = read_f64(is);
  c.seed = read_u64(is);
  c.validate();
  ModelParameters p = init_params(c);
  p.for_each([&](const std::string&, Tensor& t) {
    for (double& v : t.data) v = read_f64(is);
  });
  is.peek();
  if (!is.eof()) throw std::runtime_error("checkpoint: trailing bytes in " + path);
  return p;
}

}  // namespace prefalign
