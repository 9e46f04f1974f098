#include "prefalign/autodiff.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace prefalign {

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid_stable(double u) {
  // log sigma(u) = -log1p(exp(-u)); rewritten so the exp never overflows
  if (u >= 0.0) {
    return -std::log1p(std::exp(-u));
  }
  return u - std::log1p(std::exp(u));
}

int Tape::push(Tensor v, std::function<void(Tape&)> back) {
  Node n;
  n.grad = Tensor(v.shape);
  n.value = std::move(v);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor value) { return push(std::move(value), nullptr); }

int Tape::matmul(int a, int b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) throw std::invalid_argument("matmul: inner dimensions differ");
  Tensor C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.at(i, p);
      for (std::size_t j = 0; j < n; ++j) C.at(i, j) += aip * B.at(p, j);
    }
  }
  const int out = push(std::move(C), nullptr);
  nodes_[static_cast<std::size_t>(out)].back = [a, b, out, m, k, n](Tape& t) {
    const Tensor& dC = t.grad(out);
    const Tensor& A2 = t.value(a);
    const Tensor& B2 = t.value(b);
    Tensor& dA = t.grad_mut(a);
    Tensor& dB = t.grad_mut(b);
    // dA = dC * B^T, dB = A^T * dC
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double g = dC.at(i, j);
        if (g == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) {
          dA.at(i, p) += g * B2.at(p, j);
          dB.at(p, j) += g * A2.at(i, p);
        }
      }
    }
  };
  return out;
}

int Tape::add(int a, int b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) throw std::invalid_argument("add: shape mismatch");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
  const int out = push(std::move(C), nullptr);
  nodes_[static_cast<std::size_t>(out)].back = [a, b, out](Tape& t) {
    const Tensor& g = t.grad(out);
    Tensor& dA = t.grad_mut(a);
    Tensor& dB = t.grad_mut(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      dA.data[i] += g.data[i];
      dB.data[i] += g.data[i];
    }
  };
  return out;
}

int Tape::scale(int a, double s) {
  Tensor C = value(a);
  for (double& x : C.data) x *= s;
  const int out = push(std::move(C), nullptr);
  nodes_[static_cast<std::size_t>(out)].back = [a, s, out](Tape& t) {
    const Tensor& g = t.grad(out);
    Tensor& dA = t.grad_mut(a);
    for (std::size_t i = 0; i < g.size(); ++i) dA.data[i] += s * g.data[i];
  };
  return out;
}

int Tape::embed(int table, const std::vector<int>& ids) {
  const Tensor& W = value(table);
  const std::size_t d = W.cols();
  Tensor C({ids.size(), d});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const auto row = static_cast<std::size_t>(ids[t]);
    if (row >= W.rows()) throw std::out_of_range("embed: token id out of range");
    for (std::size_t j = 0; j < d; ++j) C.at(t, j) = W.at(row, j);
  }
  const int out = push(std::move(C), nullptr);
  nodes_[static_cast<std::size_t>(out)].back = [table, ids, d, out](Tape& t) {
    const Tensor& g = t.grad(out);
    Tensor& dW = t.grad_mut(table);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto row = static_cast<std::size_t>(ids[i]);
      for (std::size_t j = 0; j < d; ++j) dW.at(row, j) += g.at(i, j);
    }
  };
  return out;
}

int Tape::rms_norm(int x, int gain, double eps) {
  const Tensor& X = value(x);
  const Tensor& G = value(gain);
  const std::size_t T = X.rows(), d = X.cols();
  if (G.size() != d) throw std::invalid_argument("rms_norm: gain size mismatch");
  auto rms = std::make_shared<std::vector<double>>(T);
  Tensor Y({T, d});
  for (std::size_t t = 0; t < T; ++t) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += X.at(t, j) * X.at(t, j);
    const double r = std::sqrt(ss / static_cast<double>(d) + eps);
    (*rms)[t] = r;
    for (std::size_t j = 0; j < d; ++j) Y.at(t, j) = X.at(t, j) * G.data[j] / r;
  }
  const int out = push(std::move(Y), nullptr);
  nodes_[static_cast<std::size_t>(out)].back = [x, gain, rms, T, d, out](Tape& t) {
    const Tensor& g = t.grad(out);
    const Tensor& X2 = t.value(x);
    const Tensor& G2 = t.value(gain);
    Tensor& dX = t.grad_mut(x);
    Tensor& dG = t.grad_mut(gain);
    for (std::size_t r = 0; r < T; ++r) {
      const double rr = (*rms)[r];
      double dot = 0.0;  // sum_j dy_j * g_j * x_j
      for (std::size_t j = 0; j < d; ++j) dot += g.at(r, j) * G2.data[j] * X2.at(r, j);
      const double coef = dot / (static_cast<double>(d) * rr * rr * rr);
      for (std::size_t j = 0; j < d; ++j) {
        dX.at(r, j) += g.at(r, j) * G2.data[j] / rr - X2.at(r, j) * coef;
        dG.data[j] += g.at(r, j) * X2.at(r, j) / rr;
      }
    }
  };
  return out;
}

int Tape::silu(int x) {
  Tensor Y = value(x);
  for (double& v : Y.data) v = v * sigmoid(v);
  const int out = push(std::move(Y), nullptr);
  nodes_[static_cast<std::size_t>(out)].back = [x, out](Tape& t) {
    const Tensor& g = t.grad(out);
    const Tensor& X2 = t.value(x);
    Tensor& dX = t.grad_mut(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = sigmoid(X2.data[i]);
      dX.data[i] += g.data[i] * s * (1.0 + X2.data[i] * (1.0 - s));
    }
  };
  return out;
}

namespace {

// rotation angle for coordinate pair i of a head at a given position
inline double rope_angle(std::size_t position, std::size_t pair_index,
                         std::size_t head_dim, double base) {
  const double exponent =
      -2.0 * static_cast<double>(pair_index) / static_cast<double>(head_dim);
  return static_cast<double>(position) * std::pow(base, exponent);
}

}  // namespace

int Tape::rope(int x, std::size_t head_dim, double rope_base) {
  const Tensor& X = value(x);
  const std::size_t T = X.rows(), w = X.cols();
  if (head_dim == 0 || head_dim % 2 != 0 || w % head_dim != 0) {
    throw std::invalid_argument("rope: width must be a multiple of an even head_dim");
  }
  Tensor Y = X;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t h = 0; h < w / head_dim; ++h) {
      for (std::size_t i = 0; i < head_dim / 2; ++i) {
        const double th = rope_angle(t, i, head_dim, rope_base);
        const double c = std::cos(th), s = std::sin(th);
        const std::size_t j = h * head_dim + 2 * i;
        const double a = X.at(t, j), b = X.at(t, j + 1);
        Y.at(t, j) = a * c - b * s;
        Y.at(t, j + 1) = a * s + b * c;
      }
    }
  }
  const int out = push(std::move(Y), nullptr);
  nodes_[static_cast<std::size_t>(out)].back = [x, head_dim, rope_base, T, w, out](Tape& t) {
    const Tensor& g = t.grad(out);
    Tensor& dX = t.grad_mut(x);
    // rotation is orthogonal: gradient is the inverse rotation
    for (std::size_t r = 0; r < T; ++r) {
      for (std::size_t h = 0; h < w / head_dim; ++h) {
        for (std::size_t i = 0; i < head_dim / 2; ++i) {
          const double th = rope_angle(r, i, head_dim, rope_base);
          const double c = std::cos(th), s = std::sin(th);
          const std::size_t j = h * head_dim + 2 * i;
          const double da = g.at(r, j), db = g.at(r, j + 1);
          dX.at(r, j) += da * c + db * s;
          dX.at(r, j + 1) += -da * s + db * c;
        }
      }
    }
  };
  return out;
}

int Tape::causal_gqa_attention(int q, int k, int v, std::size_t n_heads,
                               std::size_t n_kv_heads) {
  const Tensor& Q = value(q);
  const Tensor& K = value(k);
  const Tensor& V = value(v);
  const std::size_t T = Q.rows();
  if (n_kv_heads == 0 || n_heads % n_kv_heads != 0) {
    throw std::invalid_argument("attention: n_kv_heads must divide n_heads");
  }
  const std::size_t hd = Q.cols() / n_heads;
  if (Q.cols() != n_heads * hd || K.cols() != n_kv_heads * hd ||
      V.cols() != n_kv_heads * hd || K.rows() != T || V.rows() != T) {
    throw std::invalid_argument("attention: shape mismatch");
  }
  const std::size_t group = n_heads / n_kv_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  // attention weights per head, lower-triangular rows; kept for backward
  auto weights = std::make_shared<std::vector<std::vector<double>>>(
      n_heads, std::vector<double>(T * T, 0.0));

  Tensor Y({T, n_heads * hd});
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t g = h / group;
    auto& A = (*weights)[h];
    for (std::size_t t = 0; t < T; ++t) {
      double mx = -1e300;
      std::vector<double> scores(t + 1);
      for (std::size_t u = 0; u <= t; ++u) {
        double s = 0.0;
        for (std::size_t i = 0; i < hd; ++i) {
          s += Q.at(t, h * hd + i) * K.at(u, g * hd + i);
        }
        scores[u] = s * inv_sqrt;
        if (scores[u] > mx) mx = scores[u];
      }
      double z = 0.0;
      for (std::size_t u = 0; u <= t; ++u) z += std::exp(scores[u] - mx);
      for (std::size_t u = 0; u <= t; ++u) {
        A[t * T + u] = std::exp(scores[u] - mx) / z;
      }
      for (std::size_t i = 0; i < hd; ++i) {
        double o = 0.0;
        for (std::size_t u = 0; u <= t; ++u) o += A[t * T + u] * V.at(u, g * hd + i);
        Y.at(t, h * hd + i) = o;
      }
    }
  }
  const int out = push(std::move(Y), nullptr);
  nodes_[static_cast<std::size_t>(out)].back =
      [q, k, v, n_heads, group, hd, T, inv_sqrt, weights, out](Tape& t) {
        const Tensor& dY = t.grad(out);
        const Tensor& Q2 = t.value(q);
        const Tensor& K2 = t.value(k);
        const Tensor& V2 = t.value(v);
        Tensor& dQ = t.grad_mut(q);
        Tensor& dK = t.grad_mut(k);
        Tensor& dV = t.grad_mut(v);
        std::vector<double> dA(T);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t g = h / group;
          const auto& A = (*weights)[h];
          for (std::size_t r = 0; r < T; ++r) {
            // dV and dA from out = A * V
            for (std::size_t u = 0; u <= r; ++u) {
              double s = 0.0;
              for (std::size_t i = 0; i < hd; ++i) {
                s += dY.at(r, h * hd + i) * V2.at(u, g * hd + i);
                dV.at(u, g * hd + i) += A[r * T + u] * dY.at(r, h * hd + i);
              }
              dA[u] = s;
            }
            // softmax backward on the masked row
            double dot = 0.0;
            for (std::size_t u = 0; u <= r; ++u) dot += dA[u] * A[r * T + u];
            for (std::size_t u = 0; u <= r; ++u) {
              const double dS = (dA[u] - dot) * A[r * T + u] * inv_sqrt;
              for (std::size_t i = 0; i < hd; ++i) {
                dQ.at(r, h * hd + i) += dS * K2.at(u, g * hd + i);
                dK.at(u, g * hd + i) += dS * Q2.at(r, h * hd + i);
              }
            }
          }
        }
      };
  return out;
}

int Tape::logprob_sum(int logits,
                      const std::vector<std::pair<std::size_t, int>>& targets) {
  const Tensor& L = value(logits);
  const std::size_t V = L.cols();
  double total = 0.0;
  for (const auto& [row, target] : targets) {
    if (row >= L.rows() || target < 0 || static_cast<std::size_t>(target) >= V) {
      throw std::out_of_range("logprob_sum: row/target out of range");
    }
    double mx = L.at(row, 0);
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, L.at(row, j));
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(L.at(row, j) - mx);
    total += L.at(row, static_cast<std::size_t>(target)) - mx - std::log(z);
  }
  Tensor out_t({1});
  out_t.data[0] = total;
  const int out = push(std::move(out_t), nullptr);
  nodes_[static_cast<std::size_t>(out)].back = [logits, targets, V, out](Tape& t) {
    const double g = t.grad(out).data[0];
    if (g == 0.0) return;
    const Tensor& L2 = t.value(logits);
    Tensor& dL = t.grad_mut(logits);
    for (const auto& [row, target] : targets) {
      double mx = L2.at(row, 0);
      for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, L2.at(row, j));
      double z = 0.0;
      for (std::size_t j = 0; j < V; ++j) z += std::exp(L2.at(row, j) - mx);
      for (std::size_t j = 0; j < V; ++j) {
        const double p = std::exp(L2.at(row, j) - mx) / z;
        dL.at(row, j) += g * ((j == static_cast<std::size_t>(target) ? 1.0 : 0.0) - p);
      }
    }
  };
  return out;
}

int Tape::log_sigmoid(int u) {
  const Tensor& U = value(u);
  if (U.size() != 1) throw std::invalid_argument("log_sigmoid: scalar node expected");
  Tensor Y({1});
  Y.data[0] = log_sigmoid_stable(U.data[0]);
  const int out = push(std::move(Y), nullptr);
  nodes_[static_cast<std::size_t>(out)].back = [u, out](Tape& t) {
    const double g = t.grad(out).data[0];
    t.grad_mut(u).data[0] += g * sigmoid(-t.value(u).data[0]);
  };
  return out;
}

int Tape::affine(const std::vector<int>& xs, const std::vector<double>& ws,
                 double bias) {
  if (xs.size() != ws.size()) throw std::invalid_argument("affine: size mismatch");
  double total = bias;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& X = value(xs[i]);
    if (X.size() != 1) throw std::invalid_argument("affine: scalar nodes expected");
    total += ws[i] * X.data[0];
  }
  Tensor Y({1});
  Y.data[0] = total;
  const int out = push(std::move(Y), nullptr);
  nodes_[static_cast<std::size_t>(out)].back = [xs, ws, out](Tape& t) {
    const double g = t.grad(out).data[0];
    for (std::size_t i = 0; i < xs.size(); ++i) {
      t.grad_mut(xs[i]).data[0] += g * ws[i];
    }
  };
  return out;
}

void Tape::backward(int loss_id) {
  Tensor& seed = grad_mut(loss_id);
  if (seed.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  seed.data[0] = 1.0;
  for (int i = loss_id; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.back) node.back(*this);
  }
}

}  // namespace prefalign
