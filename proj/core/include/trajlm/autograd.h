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

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "trajlm/tensor.h"

namespace trajlm::nn {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward() walks them once from the loss down.
/// A tape belongs to one thread.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Owned leaf; gradients are collected when requires_grad and the tape
  /// records gradients.
  Var leaf(Tensor value, bool requires_grad = true);
  /// Leaf that aliases external storage, which must outlive the tape.
  Var param(const Tensor& value);

  /// Records an op result. The backward rule is kept only when gradients are
  /// enabled and some input requires them.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulator of v, zero-initialized on first use; nullptr when v
  /// does not require a gradient.
  Tensor* grad_slot(Var v);
  /// Accumulated gradient, or nullptr if nothing reached v.
  const Tensor* grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and propagates. loss must hold one element.
  void backward(Var loss);

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    bool requires_grad = false;
    Backward backward;
    std::optional<Tensor> grad;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  bool grad_enabled_;
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. All tensors are 2-D [rows x cols] unless noted; vectors
// of length n broadcast as [1 x n].

Var matmul(Var a, Var b);                 // [m x k] . [k x n]
Var matmul_nt(Var a, Var b);              // [m x k] . [n x k]^T
Var add(Var a, Var b);                    // same shape
Var add_row(Var a, Var row);              // [m x n] + [n] broadcast over rows
Var mul(Var a, Var b);                    // elementwise, same shape
Var scale(Var a, double s);
Var gelu(Var a);                          // exact erf form
Var tanh(Var a);
/// c * tanh(a / c), kept strictly inside (-c, c) after rounding.
Var tanh_clamp(Var a, double c);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Rows of table [V x d] picked by indices; throws on out-of-range ids.
Var embedding(Var table, std::span<const int> indices);
/// Row softmax; with a mask, disallowed entries get probability exactly 0.
/// Every row must allow at least one column.
Var softmax(Var x, const BoolMatrix* mask = nullptr);
/// Multi-head scaled dot-product attention over [T x heads*d_head] inputs.
Var attention(Var q, Var k, Var v, const BoolMatrix& mask, std::size_t heads,
              std::size_t d_head);
/// Scales head h's column block of x by gates[h, column].
Var head_gate(Var x, Var gates, std::size_t column, std::size_t d_head);
/// Inverted dropout; identity when p == 0.
Var dropout(Var x, double p, std::mt19937_64& rng);
Var sum(Var x);                           // -> [1]
Var mean(Var x);                          // -> [1]
Var mean_rows(Var x);                     // [m x n] -> [1 x n]
Var select_rows(Var x, std::span<const std::size_t> rows);

// ---------------------------------------------------------------------------

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t samples = 200;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

using LossFn = std::function<Var(Tape&, std::span<const Var> params)>;

/// Central-difference check of d(loss)/d(params) over a sampled subset of
/// coordinates (all of them when there are no more than `samples`).
/// Relative error is |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(const LossFn& loss, std::span<Tensor* const> params,
                           const GradCheckOptions& options = {});

}  // namespace trajlm::nn
