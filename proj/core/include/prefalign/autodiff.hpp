#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "prefalign/tensor.hpp"

namespace prefalign {

// Reverse-mode tape over Tensor-valued nodes. Node ids are indices into
// the tape; topological order is construction order, so backward() is a
// single reverse sweep. All arithmetic is in double.
class Tape {
 public:
  int leaf(Tensor value);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  // [m,k] x [k,n] -> [m,n]
  int matmul(int a, int b);
  // elementwise, same shape
  int add(int a, int b);
  int scale(int a, double s);
  // rows of `table` gathered by token id -> [T, d]
  int embed(int table, const std::vector<int>& ids);
  // row-wise RMS normalization with a learned gain vector
  int rms_norm(int x, int gain, double eps = 1e-8);
  int silu(int x);
  // rotates coordinate pairs of every head segment of every row; row index
  // is the sequence position
  int rope(int x, std::size_t head_dim, double rope_base);
  // q [T, H*hd], k/v [T, KV*hd]; query head h reads kv head h / (H/KV);
  // causal mask, 1/sqrt(hd) score scaling -> [T, H*hd]
  int causal_gqa_attention(int q, int k, int v, std::size_t n_heads,
                           std::size_t n_kv_heads);
  // sum over (row, target) of log softmax(logits[row])[target] -> scalar
  int logprob_sum(int logits,
                  const std::vector<std::pair<std::size_t, int>>& targets);
  // scalar -> scalar, numerically stable log(sigmoid(u))
  int log_sigmoid(int u);
  // weighted sum of scalar nodes plus a constant -> scalar
  int affine(const std::vector<int>& xs, const std::vector<double>& ws,
             double bias);

  void backward(int loss_id);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&)> back;  // empty for leaves
  };
  std::vector<Node> nodes_;

  int push(Tensor v, std::function<void(Tape&)> back);
  Tensor& grad_mut(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
};

double sigmoid(double x);
double log_sigmoid_stable(double u);

}  // namespace prefalign
