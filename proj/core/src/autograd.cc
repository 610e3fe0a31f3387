// Copyright 2026 The TrajLM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "trajlm/autograd.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <unordered_set>

#include <Eigen/Core>
#include <fmt/format.h>

#include "trajlm/common.h"

namespace trajlm::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

CMap as_matrix(const Tensor& t) {
  return CMap(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MMap as_matrix(Tensor& t) {
  return MMap(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_error(std::string_view op, const Tensor& a, const Tensor& b) {
  throw Error(fmt::format("{}: shape mismatch {} vs {}", op, shape_string(a.shape()),
                          shape_string(b.shape())));
}

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw Error("operands recorded on different tapes");
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape_->value(*this); }

const Tape::Node& Tape::node(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw Error("variable does not belong to tape");
  return nodes_[v.id_];
}

Tape::Node& Tape::node(Var v) {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw Error("variable does not belong to tape");
  return nodes_[v.id_];
}

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const Tensor& value) {
  Node n;
  n.ref = &value;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (node(in).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.ref ? *n.ref : n.owned;
}

Tensor* Tape::grad_slot(Var v) {
  Node& n = node(v);
  if (!n.requires_grad) return nullptr;
  if (!n.grad) n.grad.emplace(value(v).shape(), 0.0);
  return &*n.grad;
}

const Tensor* Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.grad ? &*n.grad : nullptr;
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw Error(fmt::format("backward needs a scalar loss, got shape {}",
                            shape_string(value(loss).shape())));
  }
  if (!grad_enabled_) throw Error("backward on a tape recorded without gradients");
  Tensor* seed = grad_slot(loss);
  if (!seed) return;
  seed->fill(1.0);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.grad || !n.backward) continue;
    // The node's gradient is final here: every consumer has a larger id.
    n.backward(*this, *n.grad);
  }
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) shape_error("matmul", A, B);
  Tensor out = Tensor::matrix(A.rows(), B.cols());
  as_matrix(out).noalias() = as_matrix(A) * as_matrix(B);
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(a)) {
      as_matrix(*ga).noalias() += as_matrix(g) * as_matrix(b.value()).transpose();
    }
    if (Tensor* gb = t.grad_slot(b)) {
      as_matrix(*gb).noalias() += as_matrix(a.value()).transpose() * as_matrix(g);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) shape_error("matmul_nt", A, B);
  Tensor out = Tensor::matrix(A.rows(), B.rows());
  as_matrix(out).noalias() = as_matrix(A) * as_matrix(B).transpose();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(a)) {
      as_matrix(*ga).noalias() += as_matrix(g) * as_matrix(b.value());
    }
    if (Tensor* gb = t.grad_slot(b)) {
      as_matrix(*gb).noalias() += as_matrix(g).transpose() * as_matrix(a.value());
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) shape_error("add", A, B);
  Tensor out = A;
  out.add_(B);
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(a)) ga->add_(g);
    if (Tensor* gb = t.grad_slot(b)) gb->add_(g);
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  if (A.rank() != 2 || R.size() != A.cols()) shape_error("add_row", A, R);
  Tensor out = A;
  const std::size_t n = A.cols();
  for (std::size_t r = 0; r < A.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += R[c];
  }
  return a.tape().record(std::move(out), {a, row}, [a, row, n](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(a)) ga->add_(g);
    if (Tensor* gr = t.grad_slot(row)) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < n; ++c) (*gr)[c] += g[r * n + c];
      }
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) shape_error("mul", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(a)) {
      const Tensor& B = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * B[i];
    }
    if (Tensor* gb = t.grad_slot(b)) {
      const Tensor& A = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * A[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  out.scale_(s);
  return a.tape().record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
    }
  });
}

Var gelu(Var a) {
  const Tensor& A = a.value();
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = A[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  }
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(a)) {
      const Tensor& A = a.value();
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = A[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
        (*ga)[i] += g[i] * (cdf + x * pdf);
      }
    }
  });
}

Var tanh(Var a) {
  auto out = std::make_shared<Tensor>(a.value());
  for (double& v : out->data()) v = std::tanh(v);
  Tensor result = *out;
  return a.tape().record(std::move(result), {a}, [a, out](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(a)) {
      const Tensor& Y = *out;
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (1.0 - Y[i] * Y[i]);
    }
  });
}

Var tanh_clamp(Var a, double c) {
  if (!(c > 0.0)) throw Error("tanh_clamp scale must be positive");
  const Tensor& A = a.value();
  Tensor out = A;
  // tanh rounds to exactly +-1 for large arguments; keep the open bound.
  const double limit = std::nextafter(c, 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(c * std::tanh(A[i] / c), -limit, limit);
  return a.tape().record(std::move(out), {a}, [a, c](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_slot(a)) {
      const Tensor& A = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double th = std::tanh(A[i] / c);
        (*ga)[i] += g[i] * (1.0 - th * th);
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& X = x.value();
  const std::size_t rows = X.rows();
  const std::size_t n = X.cols();
  if (gain.value().size() != n || bias.value().size() != n) {
    shape_error("layer_norm", X, gain.value());
  }
  auto xhat = std::make_shared<Tensor>(X.shape());
  auto inv_sd = std::make_shared<std::vector<double>>(rows);
  Tensor out(X.shape());
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = X.ptr() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mu) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * G[c] + B[c];
    }
  }
  return x.tape().record(
      std::move(out), {x, gain, bias}, [x, gain, bias, xhat, inv_sd, rows, n](Tape& t, const Tensor& g) {
        const Tensor& G = gain.value();
        if (Tensor* gg = t.grad_slot(gain)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i % n] += g[i] * (*xhat)[i];
        }
        if (Tensor* gb = t.grad_slot(bias)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % n] += g[i];
        }
        if (Tensor* gx = t.grad_slot(x)) {
          std::vector<double> dh(n);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0;
            double mean_dh_h = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              dh[c] = g[r * n + c] * G[c];
              mean_dh += dh[c];
              mean_dh_h += dh[c] * (*xhat)[r * n + c];
            }
            mean_dh /= static_cast<double>(n);
            mean_dh_h /= static_cast<double>(n);
            for (std::size_t c = 0; c < n; ++c) {
              (*gx)[r * n + c] +=
                  (*inv_sd)[r] * (dh[c] - mean_dh - (*xhat)[r * n + c] * mean_dh_h);
            }
          }
        }
      });
}

Var embedding(Var table, std::span<const int> indices) {
  const Tensor& W = table.value();
  if (W.rank() != 2) throw Error("embedding table must be 2-D");
  const std::size_t d = W.cols();
  Tensor out = Tensor::matrix(indices.size(), d);
  auto idx = std::make_shared<std::vector<int>>(indices.begin(), indices.end());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int i = indices[r];
    if (i < 0 || static_cast<std::size_t>(i) >= W.rows()) {
      throw Error(fmt::format("embedding index {} out of table range [0, {})", i, W.rows()));
    }
    std::copy_n(W.ptr() + static_cast<std::size_t>(i) * d, d, out.ptr() + r * d);
  }
  return table.tape().record(std::move(out), {table}, [table, idx, d](Tape& t, const Tensor& g) {
    if (Tensor* gw = t.grad_slot(table)) {
      for (std::size_t r = 0; r < idx->size(); ++r) {
        double* dst = gw->ptr() + static_cast<std::size_t>((*idx)[r]) * d;
        const double* src = g.ptr() + r * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    }
  });
}

Var softmax(Var x, const BoolMatrix* mask) {
  const Tensor& X = x.value();
  const std::size_t rows = X.rows();
  const std::size_t n = X.cols();
  if (mask && (mask->rows() != rows || mask->cols() != n)) {
    throw Error(fmt::format("softmax: mask {}x{} does not match input {}", mask->rows(),
                            mask->cols(), shape_string(X.shape())));
  }
  Tensor out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
      if (!mask || (*mask)(r, c)) mx = std::max(mx, X[r * n + c]);
    }
    if (!std::isfinite(mx)) throw Error(fmt::format("softmax: row {} admits no finite entry", r));
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double e = (!mask || (*mask)(r, c)) ? std::exp(X[r * n + c] - mx) : 0.0;
      out[r * n + c] = e;
      z += e;
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  auto probs = std::make_shared<Tensor>(out);
  return x.tape().record(std::move(out), {x}, [x, probs, rows, n](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_slot(x)) {
      const Tensor& P = *probs;
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += P[r * n + c] * g[r * n + c];
        for (std::size_t c = 0; c < n; ++c) {
          (*gx)[r * n + c] += P[r * n + c] * (g[r * n + c] - dot);
        }
      }
    }
  });
}

Var attention(Var q, Var k, Var v, const BoolMatrix& mask, std::size_t heads,
              std::size_t d_head) {
  require_same_tape(q, k);
  require_same_tape(q, v);
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  const std::size_t T = Q.rows();
  const std::size_t width = heads * d_head;
  if (Q.cols() != width || K.cols() != width || V.cols() != width || K.rows() != T ||
      V.rows() != T) {
    throw Error(fmt::format("attention: q {} k {} v {} incompatible with {} heads of {}",
                            shape_string(Q.shape()), shape_string(K.shape()),
                            shape_string(V.shape()), heads, d_head));
  }
  if (mask.rows() != T || mask.cols() != T) {
    throw Error(fmt::format("attention: mask {}x{} for sequence of {}", mask.rows(), mask.cols(), T));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  // probs[h][i][j]
  auto probs = std::make_shared<std::vector<double>>(heads * T * T, 0.0);
  Tensor out = Tensor::matrix(T, width);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * d_head;
    double* P = probs->data() + h * T * T;
    for (std::size_t i = 0; i < T; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < T; ++j) {
        if (!mask(i, j)) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < d_head; ++c) s += Q[i * width + off + c] * K[j * width + off + c];
        s *= scale;
        P[i * T + j] = s;
        mx = std::max(mx, s);
      }
      if (!std::isfinite(mx)) throw Error(fmt::format("attention: row {} attends to nothing", i));
      double z = 0.0;
      for (std::size_t j = 0; j < T; ++j) {
        if (!mask(i, j)) continue;
        P[i * T + j] = std::exp(P[i * T + j] - mx);
        z += P[i * T + j];
      }
      for (std::size_t j = 0; j < T; ++j) {
        if (!mask(i, j)) continue;
        P[i * T + j] /= z;
        const double p = P[i * T + j];
        for (std::size_t c = 0; c < d_head; ++c) out[i * width + off + c] += p * V[j * width + off + c];
      }
    }
  }
  return q.tape().record(
      std::move(out), {q, k, v}, [q, k, v, probs, heads, d_head, T, width, scale](Tape& t, const Tensor& g) {
        Tensor* gq = t.grad_slot(q);
        Tensor* gk = t.grad_slot(k);
        Tensor* gv = t.grad_slot(v);
        const Tensor& Q = q.value();
        const Tensor& K = k.value();
        const Tensor& V = v.value();
        std::vector<double> dp(T);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * d_head;
          const double* P = probs->data() + h * T * T;
          for (std::size_t i = 0; i < T; ++i) {
            const double* gi = g.ptr() + i * width + off;
            double dot = 0.0;
            for (std::size_t j = 0; j < T; ++j) {
              const double p = P[i * T + j];
              if (p == 0.0) {
                dp[j] = 0.0;
                continue;
              }
              double s = 0.0;
              for (std::size_t c = 0; c < d_head; ++c) s += gi[c] * V[j * width + off + c];
              dp[j] = s;
              dot += p * s;
              if (gv) {
                for (std::size_t c = 0; c < d_head; ++c) (*gv)[j * width + off + c] += p * gi[c];
              }
            }
            for (std::size_t j = 0; j < T; ++j) {
              const double p = P[i * T + j];
              if (p == 0.0) continue;
              const double ds = p * (dp[j] - dot) * scale;
              if (gq) {
                for (std::size_t c = 0; c < d_head; ++c) (*gq)[i * width + off + c] += ds * K[j * width + off + c];
              }
              if (gk) {
                for (std::size_t c = 0; c < d_head; ++c) (*gk)[j * width + off + c] += ds * Q[i * width + off + c];
              }
            }
          }
        }
      });
}

Var head_gate(Var x, Var gates, std::size_t column, std::size_t d_head) {
  require_same_tape(x, gates);
  const Tensor& X = x.value();
  const Tensor& G = gates.value();
  const std::size_t heads = G.rows();
  const std::size_t width = X.cols();
  if (heads * d_head != width || column >= G.cols()) shape_error("head_gate", X, G);
  Tensor out = X;
  for (std::size_t r = 0; r < X.rows(); ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      const double gv = G.at(h, column);
      for (std::size_t c = 0; c < d_head; ++c) out[r * width + h * d_head + c] *= gv;
    }
  }
  return x.tape().record(
      std::move(out), {x, gates}, [x, gates, column, d_head, heads, width](Tape& t, const Tensor& g) {
        const Tensor& X = x.value();
        const Tensor& G = gates.value();
        Tensor* gx = t.grad_slot(x);
        Tensor* gg = t.grad_slot(gates);
        for (std::size_t r = 0; r < X.rows(); ++r) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double gv = G.at(h, column);
            double acc = 0.0;
            for (std::size_t c = 0; c < d_head; ++c) {
              const std::size_t i = r * width + h * d_head + c;
              if (gx) (*gx)[i] += gv * g[i];
              acc += g[i] * X[i];
            }
            if (gg) gg->at(h, column) += acc;
          }
        }
      });
}

Var dropout(Var x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw Error("dropout probability must be < 1");
  const Tensor& X = x.value();
  auto keep = std::make_shared<std::vector<double>>(X.size());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = 1.0 / (1.0 - p);
  Tensor out = X;
  for (std::size_t i = 0; i < X.size(); ++i) {
    (*keep)[i] = unit(rng) >= p ? s : 0.0;
    out[i] *= (*keep)[i];
  }
  return x.tape().record(std::move(out), {x}, [x, keep](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_slot(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (*keep)[i];
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_slot(x)) {
      for (double& v : gx->data()) v += g[0];
    }
  });
}

Var mean(Var x) {
  const auto n = static_cast<double>(x.value().size());
  if (n == 0) throw Error("mean of an empty tensor");
  return scale(sum(x), 1.0 / n);
}

Var mean_rows(Var x) {
  const Tensor& X = x.value();
  const std::size_t rows = X.rows();
  const std::size_t n = X.cols();
  if (rows == 0) throw Error("mean_rows of an empty tensor");
  Tensor out = Tensor::matrix(1, n);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[c] += X[r * n + c];
  }
  out.scale_(1.0 / static_cast<double>(rows));
  return x.tape().record(std::move(out), {x}, [x, rows, n](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_slot(x)) {
      const double s = 1.0 / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < n; ++c) (*gx)[r * n + c] += s * g[c];
      }
    }
  });
}

Var select_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& X = x.value();
  const std::size_t n = X.cols();
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  Tensor out = Tensor::matrix(rows.size(), n);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= X.rows()) {
      throw Error(fmt::format("select_rows: row {} out of range [0, {})", rows[r], X.rows()));
    }
    std::copy_n(X.ptr() + rows[r] * n, n, out.ptr() + r * n);
  }
  return x.tape().record(std::move(out), {x}, [x, idx, n](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_slot(x)) {
      for (std::size_t r = 0; r < idx->size(); ++r) {
        for (std::size_t c = 0; c < n; ++c) (*gx)[(*idx)[r] * n + c] += g[r * n + c];
      }
    }
  });
}

// ---------------------------------------------------------------------------

GradCheckResult grad_check(const LossFn& loss, std::span<Tensor* const> params,
                           const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (Tensor* p : params) vars.push_back(tape.param(*p));
    Var l = loss(tape, vars);
    if (!std::isfinite(l.value().item())) throw Error("grad_check: non-finite loss");
    tape.backward(l);
    for (std::size_t i = 0; i < vars.size(); ++i) {
      const Tensor* g = tape.grad(vars[i]);
      analytic.push_back(g ? *g : Tensor(params[i]->shape(), 0.0));
    }
  }
  auto evaluate = [&] {
    Tape tape(false);
    std::vector<Var> vars;
    for (Tensor* p : params) vars.push_back(tape.param(*p));
    const double v = loss(tape, vars).value().item();
    if (!std::isfinite(v)) throw Error("grad_check: non-finite loss");
    return v;
  };

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::size_t total = 0;
  for (Tensor* p : params) total += p->size();
  if (total <= options.samples) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (std::size_t j = 0; j < params[i]->size(); ++j) coords.emplace_back(i, j);
    }
  } else {
    std::mt19937_64 rng(options.seed);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    std::unordered_set<std::size_t> chosen;
    while (chosen.size() < options.samples) chosen.insert(pick(rng));
    std::vector<std::size_t> flat(chosen.begin(), chosen.end());
    std::sort(flat.begin(), flat.end());
    for (std::size_t f : flat) {
      std::size_t i = 0;
      while (f >= params[i]->size()) f -= params[i++]->size();
      coords.emplace_back(i, f);
    }
  }

  GradCheckResult result;
  result.coordinates = coords.size();
  for (const auto& [i, j] : coords) {
    double& x = (*params[i])[j];
    const double saved = x;
    x = saved + options.eps;
    const double up = evaluate();
    x = saved - options.eps;
    const double down = evaluate();
    x = saved;
    const double numeric = (up - down) / (2.0 * options.eps);
    const double a = analytic[i][j];
    const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_param = i;
      result.worst_index = j;
    }
  }
  return result;
}

}  // namespace trajlm::nn
