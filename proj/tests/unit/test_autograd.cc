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

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "trajlm/autograd.h"
#include "trajlm/common.h"

namespace trajlm::nn {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, sd);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  Tape tape(false);
  const Var y = softmax(tape.constant(Tensor({1, 3}, 0.0)));
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(y.value()[i], 1.0 / 3.0);
}

TEST(Ops, MaskedSoftmaxZeroesDisallowed) {
  Tape tape(false);
  BoolMatrix mask(2, 3, true);
  mask.set(0, 2, false);
  mask.set(1, 0, false);
  const Var y = softmax(tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6})), &mask);
  EXPECT_EQ(y.value().at(0, 2), 0.0);
  EXPECT_EQ(y.value().at(1, 0), 0.0);
  EXPECT_NEAR(y.value().at(0, 0) + y.value().at(0, 1), 1.0, 1e-15);
}

TEST(Ops, MatmulIdentity) {
  std::mt19937_64 rng(1);
  Tape tape(false);
  Tensor eye({3, 3}, 0.0);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const Tensor a = random_tensor({3, 4}, rng);
  EXPECT_EQ(matmul(tape.constant(eye), tape.constant(a)).value(), a);
}

TEST(Ops, ShapeMismatchReportsBothShapes) {
  Tape tape(false);
  try {
    matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3})));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2"), std::string::npos);
    EXPECT_NE(msg.find("3"), std::string::npos);
  }
}

TEST(Ops, GeluAndClamp) {
  Tape tape(false);
  EXPECT_EQ(gelu(tape.constant(Tensor::scalar(0.0))).value()[0], 0.0);
  const double c = tanh_clamp(tape.constant(Tensor::scalar(1000.0)), 50.0).value()[0];
  EXPECT_NEAR(c, 50.0 * std::tanh(20.0), 1e-12);
  EXPECT_LT(c, 50.0);
  const double neg = tanh_clamp(tape.constant(Tensor::scalar(-1e300)), 50.0).value()[0];
  EXPECT_GT(neg, -50.0);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  std::mt19937_64 rng(2);
  const Var x = tape.leaf(random_tensor({2, 5}, rng));
  tape.backward(sum(x));
  const Tensor* g = tape.grad(x);
  ASSERT_NE(g, nullptr);
  for (double v : g->data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, DotGivesOtherFactor) {
  Tape tape;
  std::mt19937_64 rng(3);
  const Tensor yv = random_tensor({1, 6}, rng);
  const Var x = tape.leaf(random_tensor({1, 6}, rng));
  const Var y = tape.constant(yv);
  tape.backward(sum(mul(x, y)));
  EXPECT_EQ(*tape.grad(x), yv);
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  const Var x = tape.leaf(Tensor({2, 2}, 1.0));
  EXPECT_THROW(tape.backward(x), Error);
}

TEST(GradCheck, QuadraticIsExact) {
  std::mt19937_64 rng(4);
  Tensor w = random_tensor({1, 10}, rng);
  Tensor* params[] = {&w};
  const auto result = grad_check(
      [](Tape&, std::span<const Var> p) { return sum(mul(p[0], p[0])); }, params);
  EXPECT_LT(result.max_rel_error, 1e-9);
  EXPECT_EQ(result.coordinates, 10u);
}

TEST(GradCheck, SoftmaxComposite) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({3, 7}, rng);
  const Tensor c = random_tensor({3, 7}, rng);
  Tensor* params[] = {&x};
  const auto result = grad_check(
      [&](Tape& tape, std::span<const Var> p) {
        return sum(mul(softmax(p[0]), tape.constant(c)));
      },
      params);
  EXPECT_LT(result.max_rel_error, 1e-6);
}

TEST(GradCheck, ThreeLayerMlp) {
  std::mt19937_64 rng(6);
  const Tensor input = random_tensor({4, 5}, rng);
  Tensor w1 = random_tensor({5, 8}, rng, 0.5), b1 = random_tensor({8}, rng, 0.1);
  Tensor w2 = random_tensor({8, 8}, rng, 0.5), b2 = random_tensor({8}, rng, 0.1);
  Tensor w3 = random_tensor({8, 3}, rng, 0.5);
  Tensor gain = random_tensor({8}, rng, 0.2), bias = random_tensor({8}, rng, 0.1);
  for (auto& g : gain.data()) g += 1.0;
  Tensor* params[] = {&w1, &b1, &w2, &b2, &w3, &gain, &bias};
  const auto result = grad_check(
      [&](Tape& tape, std::span<const Var> p) {
        Var h = gelu(add_row(matmul(tape.constant(input), p[0]), p[1]));
        h = layer_norm(h, p[5], p[6]);
        h = tanh(add_row(matmul(h, p[2]), p[3]));
        const Var out = tanh_clamp(matmul(h, p[4]), 2.0);
        return mean(mul(out, out));
      },
      params);
  EXPECT_LT(result.max_rel_error, 1e-6);
}

TEST(GradCheck, AttentionBlock) {
  std::mt19937_64 rng(7);
  Tensor q = random_tensor({4, 6}, rng), k = random_tensor({4, 6}, rng);
  Tensor v = random_tensor({4, 6}, rng);
  BoolMatrix mask(4, 4, false);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c <= r; ++c) mask.set(r, c, true);
  }
  Tensor* params[] = {&q, &k, &v};
  const auto result = grad_check(
      [&](Tape&, std::span<const Var> p) {
        const Var a = attention(p[0], p[1], p[2], mask, 2, 3);
        return sum(mul(a, a));
      },
      params);
  EXPECT_LT(result.max_rel_error, 1e-6);
}

TEST(GradCheck, NonFiniteLossRejected) {
  Tensor w({1, 2}, 1.0);
  Tensor* params[] = {&w};
  EXPECT_THROW(grad_check(
                   [](Tape&, std::span<const Var> p) {
                     return scale(sum(p[0]), std::numeric_limits<double>::infinity());
                   },
                   params),
               Error);
}

}  // namespace
}  // namespace trajlm::nn
