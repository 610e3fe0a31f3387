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

#include "trajlm/stats.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "trajlm/common.h"

namespace trajlm {
namespace {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
double beta_continued_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 100000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw Error("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw Error("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw Error("incomplete beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw Error("t distribution needs df > 0");
  if (std::isinf(t)) return 0.0;
  if (std::isnan(t)) throw Error("t statistic is NaN");
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

double mean(std::span<const double> x) {
  if (x.empty()) throw Error("mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double median(std::vector<double> x) {
  if (x.empty()) throw Error("median of an empty sample");
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  return n % 2 == 1 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

double sample_sd(std::span<const double> x) {
  if (x.size() < 2) throw Error("standard deviation needs at least two values");
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("pearson: inputs differ in length");
  if (x.size() < 2) throw Error("pearson: need at least two pairs");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw Error("pearson: non-finite value");
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("pearson: zero variance, correlation undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Correlation pearson_with_ci(std::span<const double> x, std::span<const double> y) {
  if (x.size() < 4) throw Error(fmt::format("pearson_with_ci: need n >= 4, got {}", x.size()));
  Correlation c;
  c.n = x.size();
  c.r = pearson(x, y);
  const double n = static_cast<double>(c.n);
  if (std::abs(c.r) >= 1.0) {
    c.p = 0.0;
    c.ci_low = c.ci_high = c.r;
    return c;
  }
  const double t = c.r * std::sqrt((n - 2.0) / (1.0 - c.r * c.r));
  c.p = student_t_two_sided_p(t, n - 2.0);
  const double z = std::atanh(c.r);
  const double se = 1.0 / std::sqrt(n - 3.0);
  c.ci_low = std::tanh(z - 1.96 * se);
  c.ci_high = std::tanh(z + 1.96 * se);
  return c;
}

ZComparison fisher_z_compare(double r1, double r2, std::size_t n) {
  if (n < 4) throw Error("fisher_z_compare: need n >= 4");
  if (!(std::abs(r1) < 1.0) || !(std::abs(r2) < 1.0)) {
    throw Error("fisher_z_compare: |r| must be < 1");
  }
  ZComparison out;
  out.z = (std::atanh(r1) - std::atanh(r2)) / std::sqrt(2.0 / (static_cast<double>(n) - 3.0));
  out.p = normal_two_sided_p(out.z);
  return out;
}

std::vector<bool> bh_fdr(std::span<const double> p_values, double q) {
  const std::size_t m = p_values.size();
  std::vector<bool> reject(m, false);
  if (m == 0) return reject;
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(fmt::format("bh_fdr: p-value {} outside [0, 1]", p));
  }
  std::vector<double> sorted(p_values.begin(), p_values.end());
  std::sort(sorted.begin(), sorted.end());
  double cutoff = -1.0;
  for (std::size_t k = m; k >= 1; --k) {
    if (sorted[k - 1] <= static_cast<double>(k) * q / static_cast<double>(m)) {
      cutoff = sorted[k - 1];
      break;
    }
  }
  for (std::size_t i = 0; i < m; ++i) reject[i] = p_values[i] <= cutoff;
  return reject;
}

Interval bootstrap_mean_ci(std::span<const double> x, int resamples, std::uint64_t seed,
                           double level) {
  if (x.empty()) throw Error("bootstrap of an empty sample");
  if (resamples < 1) throw Error("bootstrap needs at least one resample");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[pick(rng)];
    m = s / static_cast<double>(x.size());
  }
  std::sort(means.begin(), means.end());
  // Type-7 quantiles of the bootstrap distribution.
  auto quantile = [&](double q) {
    const double h = (static_cast<double>(means.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (h - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  const double alpha = (1.0 - level) / 2.0;
  return {quantile(alpha), quantile(1.0 - alpha)};
}

}  // namespace trajlm
