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

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trajlm/autograd.h"
#include "trajlm/corpus.h"
#include "trajlm/tensor.h"
#include "trajlm/vocab.h"

namespace trajlm {

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_head = 32;
  int d_ff = 256;
  int n_value_extras = 2;
  double dropout = 0.2;
  double logit_clamp = 50.0;
  int cont_pe_dim = 512;
  /// Output width; the input table has one extra row for padding.
  int vocab_size = 0;
  int n_modalities = 0;
  std::array<int, 7> temporal_vocab_sizes = kTemporalVocabSizes;
  int max_seq_len = 512;
  int year_base = kDefaultYearBase;
  /// Divisor applied to a value before the sinusoidal encoder, one entry per
  /// modality plus one for padding. Continuous modalities use their train_sd.
  std::vector<double> value_scales;

  /// Sizes and scales taken from a vocabulary; architecture fields kept.
  static ModelConfig for_vocabulary(const Vocabulary& vocab, int d_model = 64, int n_layers = 2,
                                    int n_heads = 2);
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
};

/// Learnable arrays in a fixed, named order.
class ModelParams {
 public:
  nn::Tensor& add(std::string name, nn::Shape shape);
  nn::Tensor& get(std::string_view name);
  const nn::Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  nn::Tensor& at(std::size_t i) { return tensors_.at(i); }
  const nn::Tensor& at(std::size_t i) const { return tensors_.at(i); }
  std::size_t scalar_count() const;

  bool operator==(const ModelParams&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<nn::Tensor> tensors_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Attention pattern over the rows of a forward pass.
struct MaskKind {
  enum class Kind { kCausal, kSplitContext, kParallelV2 };
  Kind kind = Kind::kCausal;
  int boundary = 0;
  int n_ctx = 0;
  int n_targets = 0;

  static MaskKind causal() { return {}; }
  static MaskKind split_context(int boundary) { return {Kind::kSplitContext, boundary, 0, 0}; }
  static MaskKind parallel_v2(int n_ctx, int n_targets) {
    return {Kind::kParallelV2, 0, n_ctx, n_targets};
  }
};

/// Rows are queries, columns keys. ParallelV2 lays rows out as
/// [V_0..V_{n-1}, F_1, P_1, ..., F_k, P_k] and requires rows == n + 2k.
nn::BoolMatrix build_mask(const MaskKind& kind, int rows);

/// Row-aligned model input. Row p holds the observed position plus the
/// modality/time of what row p is asked to predict.
struct ForwardInput {
  std::vector<int> tokens;
  std::vector<double> values;
  std::vector<int> modalities;
  std::vector<TimeFeatures> times;
  std::vector<int> positions;
  std::vector<int> query_modalities;
  std::vector<TimeFeatures> query_times;
  double age = 0.0;
  Sex sex = Sex::kUnknown;

  int size() const { return static_cast<int>(tokens.size()); }
  void check() const;

  /// Standard next-token layout: row p is queried with entry p+1 of the
  /// modality/time streams.
  static ForwardInput from_sequence(const TokenSequence& seq, double age, Sex sex);
};

/// ParallelV2 layout for one participant: the first `n_ctx` positions of
/// `seq` as context, then one (probe, prediction) pair per target. Targets
/// name a modality and the time it is queried at.
struct QueryTarget {
  int modality = 0;
  TimeFeatures time{};
};

ForwardInput parallel_v2_input(const TokenSequence& seq, int n_ctx, double age, Sex sex,
                               std::span<const QueryTarget> targets, int pad_token);
/// Row of the prediction token for target i in a ParallelV2 layout.
inline int parallel_v2_row(int n_ctx, int i) { return n_ctx + 2 * i + 1; }

struct ForwardOptions {
  bool train = false;
  std::mt19937_64* rng = nullptr;
  /// Rows whose logits are produced; all rows when empty.
  std::vector<std::size_t> rows;
};

struct ForwardResult {
  nn::Var logits;  // [rows x vocab_size], clamped
  nn::Var hidden;  // [T x d_model], final normalized hidden states
};

class Model {
 public:
  Model() = default;
  Model(ModelConfig config, ModelParams params);

  /// Random initialization; deterministic in the seed.
  static Model init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

  /// Registers every parameter on the tape, in manifest order.
  std::vector<nn::Var> bind(nn::Tape& tape) const;

  /// Sum of the six input components, [T x d_model].
  nn::Var embed_inputs(nn::Tape& tape, std::span<const nn::Var> bound,
                       const ForwardInput& in) const;
  ForwardResult forward(nn::Tape& tape, std::span<const nn::Var> bound, const ForwardInput& in,
                        const nn::BoolMatrix& mask, const ForwardOptions& options = {}) const;

  /// Inference convenience: clamped logits for `rows` (all when empty).
  nn::Tensor logits(const ForwardInput& in, const nn::BoolMatrix& mask,
                    std::vector<std::size_t> rows = {}) const;

  /// Mean of final hidden states over non-padding positions, under the
  /// causal mask.
  std::vector<double> extract_embedding(const TokenSequence& seq, double age, Sex sex) const;

 private:
  ModelConfig config_;
  ModelParams params_;
};

/// Parameter count of a configuration without allocating it.
std::size_t parameter_count(const ModelConfig& config);

/// Fixed sinusoid of a scalar: pairs (sin(x w_i), cos(x w_i)) with
/// w_i = 10000^(-2i/dim).
void sinusoid(double x, int dim, double* out);

// Checkpoint container: magic "TRAJLM01", u64 header length, JSON header,
// then float32 little-endian arrays in manifest order.
struct CheckpointMeta {
  std::uint64_t vocab_fingerprint = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string library_version;
  std::map<std::string, std::string> extra;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointMeta& meta);
struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
  std::vector<std::pair<std::string, nn::Shape>> manifest;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
/// Loads and verifies the checkpoint was trained against `vocab`.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab);

}  // namespace trajlm
