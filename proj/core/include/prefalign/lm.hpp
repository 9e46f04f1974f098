#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prefalign/autodiff.hpp"
#include "prefalign/tensor.hpp"

namespace prefalign {

// Byte-level vocabulary: ids 0..255 are raw bytes, then the specials.
inline constexpr int kBosId = 256;
inline constexpr int kEosId = 257;
inline constexpr int kPadId = 258;
inline constexpr std::size_t kMinVocab = 259;

struct LMConfig {
  std::size_t vocab_size = kMinVocab;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t n_kv_heads = 2;
  std::size_t d_ff = 256;
  std::size_t max_seq_len = 256;
  double rope_base = 10000.0;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t kv_dim() const { return n_kv_heads * head_dim(); }
  // throws std::invalid_argument on divisibility / range violations
  void validate() const;
  // closed-form total parameter count
  std::size_t param_count() const;
};

std::vector<int> tokenize(std::string_view text);
// inverse of tokenize; special ids (BOS/EOS/PAD) are stripped
std::string detokenize(const std::vector<int>& ids);

// in-place rotation of one head vector at the given sequence position
void apply_rope(std::span<double> head, std::size_t position, double rope_base);

struct LayerParams {
  Tensor attn_norm;  // [d]
  Tensor wq;         // [d, d]
  Tensor wk;         // [d, kv_dim]
  Tensor wv;         // [d, kv_dim]
  Tensor wo;         // [d, d]
  Tensor mlp_norm;   // [d]
  Tensor w_in;       // [d, d_ff]
  Tensor w_out;      // [d_ff, d]
};

struct ModelParameters {
  LMConfig config;
  Tensor tok_embed;  // [vocab, d]
  std::vector<LayerParams> layers;
  Tensor final_norm;  // [d]
  Tensor head;        // [d, vocab]

  // visits every tensor in checkpoint declaration order
  void for_each(const std::function<void(const std::string&, Tensor&)>& f);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& f) const;
  std::size_t param_count() const;
  bool all_finite() const;
};

ModelParameters init_params(const LMConfig& config);

// gradients in the same declaration order as ModelParameters::for_each
struct GradientSet {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  static GradientSet zeros_like(const ModelParameters& params);
  void accumulate(const GradientSet& other);
  void scale(double s);
};

Tensor forward_logits(const ModelParameters& params, const std::vector<int>& ids);
// log P(ids[t] | ids[<t]) for t = 1..|ids|-1
std::vector<double> token_logprobs(const ModelParameters& params,
                                   const std::vector<int>& ids);
// sum of completion-token conditionals given prompt ++ completion
double sequence_logprob(const ModelParameters& params,
                        const std::vector<int>& prompt,
                        const std::vector<int>& completion);
std::vector<int> generate(const ModelParameters& params, std::vector<int> prompt,
                          std::size_t max_new, double temperature,
                          std::uint64_t seed);

void save_checkpoint(const ModelParameters& params, const std::string& path);
ModelParameters load_checkpoint(const std::string& path);

// --- differentiable graph construction -------------------------------------

struct ParamNodes {
  struct Layer {
    int attn_norm, wq, wk, wv, wo, mlp_norm, w_in, w_out;
  };
  int tok_embed;
  std::vector<Layer> layers;
  int final_norm, head;
};

ParamNodes lift_params(Tape& tape, const ModelParameters& params);
int forward_logits_node(Tape& tape, const ParamNodes& p, const LMConfig& config,
                        const std::vector<int>& ids);
// scalar node: sum of completion-token conditional log-probs
int sequence_logprob_node(Tape& tape, const ParamNodes& p, const LMConfig& config,
                          const std::vector<int>& prompt,
                          const std::vector<int>& completion);
GradientSet collect_gradients(const Tape& tape, const ParamNodes& p,
                              const ModelParameters& like);

}  // namespace prefalign
