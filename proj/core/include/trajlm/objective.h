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
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajlm/autograd.h"
#include "trajlm/corpus.h"
#include "trajlm/model.h"
#include "trajlm/vocab.h"

namespace trajlm {

struct LossConfig {
  double sl_sigma = 0.01;
  double soft_scale = 1.0;
  double mae_scale = 1.0;
  double split_scale = 1.0;
};

/// Gaussian kernel over local bins 0..width-1 centred on `k`, normalized.
std::vector<double> soft_target(int width, int k, double sigma);

/// One supervised position: logits row `row` must predict `token`.
struct LossTarget {
  std::size_t row = 0;
  int token = 0;
  int modality = 0;
  double value = 0.0;
};

/// Next-token targets of a sequence. Causal: every position p+1 predicted
/// from row p. Split: only positions at or after the visit boundary.
std::vector<LossTarget> next_token_targets(const TokenSequence& seq, bool split_only);

/// Soft cross-entropy and normalized absolute error over each target's
/// modality range. `logits` rows align with `targets`. Either output is
/// invalid when it has no contributing targets.
struct RangeLoss {
  nn::Var soft;
  nn::Var mae;
  std::size_t n_soft = 0;
  std::size_t n_mae = 0;
};
RangeLoss range_loss(nn::Var logits, std::span<const LossTarget> targets, const Vocabulary& vocab,
                     double sigma, bool with_mae = true);

struct LossComponents {
  double total = 0.0;
  double soft = 0.0;
  double mae = 0.0;
  double split = 0.0;
  std::size_t n_targets = 0;
  std::size_t n_split = 0;
};

struct SequenceLoss {
  nn::Var total;  // invalid when the sequence has no targets
  LossComponents parts;
};

/// L = soft_scale * L_soft + mae_scale * L_MAE + split_scale * L_split for
/// one participant; L_split uses a second forward pass under the
/// split-context mask.
SequenceLoss loss_total(const Model& model, nn::Tape& tape, std::span<const nn::Var> bound,
                        const EncodedParticipant& participant, const Vocabulary& vocab,
                        const LossConfig& config, const ForwardOptions& options = {});

struct ScheduleConfig {
  double peak_lr = 3e-4;
  double min_lr = 3e-5;
  int warmup_steps = 100;
  int total_steps = 1000;
};

/// Linear warmup from 0 to peak, then cosine decay to min at total_steps.
double lr_at(int step, const ScheduleConfig& schedule);

/// Scales grads in place to global L2 norm at most max_norm; returns the
/// norm before clipping.
double clip_global_norm(std::vector<nn::Tensor>& grads, double max_norm);

class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 0.1;
  };

  AdamW() = default;
  AdamW(const ModelParams& params, Options options);

  /// Clips, then applies one decoupled-weight-decay Adam update. Throws
  /// naming the parameter if any gradient is non-finite.
  void step(ModelParams& params, std::vector<nn::Tensor>& grads, double lr);
  int steps() const { return t_; }
  const Options& options() const { return options_; }

 private:
  Options options_;
  std::vector<nn::Tensor> m_;
  std::vector<nn::Tensor> v_;
  int t_ = 0;
};

/// Flat key=value training configuration.
struct TrainConfig {
  // Model.
  int n_embd = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_head = 0;  // 0: n_embd / n_heads
  int n_value_extras = 2;
  double dropout = 0.2;
  int continuous_pe_base_dim = 512;
  double logit_clamp = 50.0;
  int max_seq_length = 512;
  // Optimization.
  double lr = 3e-4;
  double gamma = 0.1;
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 0.1;
  int warmup_steps = 100;
  int steps = 0;  // 0: epochs * batches per epoch
  int epochs = 18;
  int batch_size = 8;
  int eval_every = 100;
  double val_fraction = 0.2;
  int val_limit = 0;  // 0: whole validation split
  std::uint64_t seed = 42;
  int workers = 1;
  // Loss.
  LossConfig loss;
  // Augmentation.
  AugmentConfig augment;

  static TrainConfig parse(std::string_view text);
  static TrainConfig load(const std::filesystem::path& path);
  /// Canonical key=value rendering; parse(to_string()) round-trips.
  std::string to_string() const;
  /// Fingerprint of every result-affecting field (all but `workers`).
  std::string hash() const;
  void validate() const;
  ModelConfig model_config(const Vocabulary& vocab) const;
};

struct TrainRecord {
  int step = 0;
  double lr = 0.0;
  LossComponents loss;
  std::optional<double> val_loss;
};

struct TrainResult {
  Model best;
  Model last;
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  int best_step = 0;
  std::vector<TrainRecord> history;
  bool diverged = false;
};

/// Deterministic split of participants into (train, validation) by seed.
std::pair<std::vector<EncodedParticipant>, std::vector<EncodedParticipant>> split_train_val(
    const std::vector<EncodedParticipant>& all, double val_fraction, std::uint64_t seed);

/// Mean loss_total over participants without augmentation or dropout.
LossComponents evaluate_loss(const Model& model, std::span<const EncodedParticipant> participants,
                             const Vocabulary& vocab, const LossConfig& config, int workers = 1);

/// Gradient of the mean per-participant loss over a batch; per-participant
/// gradients are summed in batch order so the result does not depend on
/// `workers`.
LossComponents batch_gradient(const Model& model, std::span<const EncodedParticipant> batch,
                              const Vocabulary& vocab, const LossConfig& config,
                              std::vector<nn::Tensor>& grads, bool train_mode,
                              std::span<const std::uint64_t> dropout_seeds, int workers = 1);

using TrainCallback = std::function<void(const TrainRecord&)>;

/// Trains from a fresh initialization. Keeps the parameters with the best
/// validation loss. On a non-finite training loss the run stops and returns
/// with `diverged` set, `best` still holding the last good validation state.
TrainResult train(const std::vector<EncodedParticipant>& train_set,
                  const std::vector<EncodedParticipant>& val_set, const Vocabulary& vocab,
                  const TrainConfig& config, const TrainCallback& on_step = {});

/// CSV header of the metrics log.
inline constexpr std::string_view kMetricsHeader = "step,lr,loss,soft,mae,split,val_loss";
std::string metrics_row(const TrainRecord& record);

}  // namespace trajlm
