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
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace trajlm {

enum class ModalityKind { kContinuous, kCategorical };

std::string_view to_string(ModalityKind kind);

/// Half-open interval [lo, hi) of training-distribution quantile levels
/// covered by one bin.
struct QuantileRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Discretization of one measurement channel.
///
/// Continuous modalities carry K+1 edges: the outer two are the observed
/// training min/max and only stand in for the open-ended first and last
/// bins; the K-1 interior edges decide membership. Categorical modalities
/// carry their ordered category names and nothing else.
struct ModalitySpec {
  int id = 0;
  std::string name;
  ModalityKind kind = ModalityKind::kContinuous;
  std::vector<double> bin_edges;
  std::vector<double> midpoints;
  std::vector<std::string> categories;
  double train_sd = 1.0;
  std::vector<QuantileRange> quantile_ranges;
  int cum_base = 0;

  int bin_count() const;
  bool continuous() const { return kind == ModalityKind::kContinuous; }
  /// Local bin of a continuous value, clipped into [0, K-1].
  int bin_of(double value) const;
  /// Index of a category name, or -1.
  int category_index(std::string_view category) const;
};

struct DecodedToken {
  int modality = 0;
  int bin = 0;
  /// Bin midpoint for continuous modalities, 0 otherwise.
  double midpoint = 0.0;
  /// Category name for categorical modalities, empty otherwise.
  std::string category;
};

/// Global token address space: every (modality, bin) pair owns exactly one
/// id in [0, total_tokens); total_tokens itself is the padding token.
class Vocabulary {
 public:
  Vocabulary() = default;
  /// Validates the layout invariants; cum_base must already be assigned.
  explicit Vocabulary(std::vector<ModalitySpec> modalities,
                      std::vector<std::string> warnings = {});

  const std::vector<ModalitySpec>& modalities() const { return modalities_; }
  const ModalitySpec& modality(int id) const;
  int modality_count() const { return static_cast<int>(modalities_.size()); }
  int total_tokens() const { return total_tokens_; }
  int pad_token() const { return total_tokens_; }
  /// Modality index used for padding and for not-yet-filled query slots.
  int pad_modality() const { return modality_count(); }

  std::optional<int> find(std::string_view name) const;
  /// Like find() but throws naming the modality.
  int index_of(std::string_view name) const;

  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Deterministic UTF-8 JSON; reals use 17 significant digits.
  std::string to_json() const;
  static Vocabulary from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  /// FNV-1a over to_json(); embedded in checkpoints and reports.
  std::uint64_t fingerprint() const;

 private:
  std::vector<ModalitySpec> modalities_;
  std::vector<std::string> warnings_;
  std::unordered_map<std::string, int> by_name_;
  int total_tokens_ = 0;
};

/// Square-root rule: K = clamp(round(sqrt(n)/4), 2, 129), optionally
/// overridden, then capped at the number of distinct values. A zero spread
/// (sd == 0) yields a single bin.
int choose_bin_count(std::size_t n_samples, double sd, std::optional<int> override_k = {},
                     std::optional<std::size_t> distinct_values = {});

struct BinFit {
  std::vector<double> bin_edges;
  std::vector<double> midpoints;
  std::vector<QuantileRange> quantile_ranges;
  double train_sd = 0.0;
  std::optional<std::string> warning;
};

/// Equal-frequency bins from the type-7 (linear interpolation) empirical
/// quantiles at 1/K, ..., (K-1)/K. Interior edges that coincide with the
/// minimum or with each other are dropped, which may shrink K.
BinFit fit_bins(std::span<const double> values, int k);

/// Raw training material for one modality.
struct RawModality {
  std::string name;
  ModalityKind kind = ModalityKind::kContinuous;
  std::vector<double> values;
  std::vector<std::string> category_values;
  /// Fixed category order; when empty, the sorted distinct observed values.
  std::vector<std::string> categories;
  std::optional<int> bin_override;
};

Vocabulary build_vocabulary(std::span<const RawModality> raw);

int encode_value(const Vocabulary& vocab, int modality, double value);
int encode_category(const Vocabulary& vocab, int modality, std::string_view category);
DecodedToken decode_token(const Vocabulary& vocab, int token);

/// Maps values drawn from an external distribution onto training bins by
/// quantile rank: q(x) is the midrank empirical CDF within the external
/// sample and x receives the bin whose training quantile range contains q.
std::vector<int> quantile_match(const Vocabulary& vocab, int modality,
                                std::span<const double> external_values);

}  // namespace trajlm
