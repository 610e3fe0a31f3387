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

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace trajlm {

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

/// Two-sided p-value of a Student t statistic with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

/// Two-sided p-value of a standard normal statistic.
double normal_two_sided_p(double z);

/// Plain sample Pearson correlation; throws when either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);

struct Correlation {
  std::size_t n = 0;
  double r = 0.0;
  double p = 1.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// r with a two-sided t-test p-value and a Fisher-Z 95% interval. Needs
/// n >= 4 and non-constant inputs.
Correlation pearson_with_ci(std::span<const double> x, std::span<const double> y);

struct ZComparison {
  double z = 0.0;
  double p = 1.0;
};

/// Fisher-Z comparison of two correlations measured on n pairs each.
ZComparison fisher_z_compare(double r1, double r2, std::size_t n);

/// Benjamini-Hochberg step-up rejections at level q.
std::vector<bool> bh_fdr(std::span<const double> p_values, double q = 0.05);

double mean(std::span<const double> x);
double median(std::vector<double> x);
/// Sample standard deviation (n - 1 denominator).
double sample_sd(std::span<const double> x);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Percentile bootstrap interval of the mean.
Interval bootstrap_mean_ci(std::span<const double> x, int resamples, std::uint64_t seed,
                           double level = 0.95);

}  // namespace trajlm
