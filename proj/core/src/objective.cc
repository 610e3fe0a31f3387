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

#include "trajlm/objective.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "trajlm/common.h"
#include "trajlm/parallel.h"

namespace trajlm {

using nn::Tape;
using nn::Tensor;
using nn::Var;

std::vector<double> soft_target(int width, int k, double sigma) {
  if (width <= 0) throw Error("soft target over an empty range");
  if (k < 0 || k >= width) throw Error(fmt::format("target bin {} outside range of {}", k, width));
  if (!(sigma > 0.0)) throw Error("soft target sigma must be positive");
  std::vector<double> q(static_cast<std::size_t>(width));
  double z = 0.0;
  for (int i = 0; i < width; ++i) {
    const double d = static_cast<double>(i - k) / sigma;
    q[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d);
    z += q[static_cast<std::size_t>(i)];
  }
  for (double& v : q) v /= z;
  return q;
}

std::vector<LossTarget> next_token_targets(const TokenSequence& seq, bool split_only) {
  std::vector<LossTarget> out;
  const int t = seq.size();
  const int first = split_only ? std::max(seq.visit_boundary, 1) : 1;
  for (int p = first; p < t; ++p) {
    out.push_back({static_cast<std::size_t>(p - 1), seq.tokens[static_cast<std::size_t>(p)],
                   seq.modalities[static_cast<std::size_t>(p)], seq.values[static_cast<std::size_t>(p)]});
  }
  return out;
}

RangeLoss range_loss(Var logits, std::span<const LossTarget> targets, const Vocabulary& vocab,
                     double sigma, bool with_mae) {
  const Tensor& z = logits.value();
  if (z.rows() != targets.size()) {
    throw Error(fmt::format("range loss: {} logit rows for {} targets", z.rows(), targets.size()));
  }
  const std::size_t width = z.cols();
  // Per target: softmax over the range, soft labels, and the MAE sign.
  struct Cache {
    std::vector<std::vector<double>> p, q;
    std::vector<double> mae_coef;  // sign(E - y) / sd, 0 for categorical
    std::vector<int> base;
  };
  auto cache = std::make_shared<Cache>();
  RangeLoss out;
  double soft = 0.0;
  double mae = 0.0;
  for (const LossTarget& tg : targets) {
    const ModalitySpec& m = vocab.modality(tg.modality);
    const int k = m.bin_count();
    if (k <= 0) throw Error(fmt::format("modality '{}' has an empty token range", m.name));
    const int local = tg.token - m.cum_base;
    if (local < 0 || local >= k) {
      throw Error(fmt::format("target token {} outside modality '{}' range", tg.token, m.name));
    }
    if (static_cast<std::size_t>(m.cum_base + k) > width) throw Error("logits narrower than vocabulary");
    const double* row = z.ptr() + (&tg - targets.data()) * width + m.cum_base;
    double mx = row[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
    double denom = 0.0;
    std::vector<double> p(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) denom += (p[static_cast<std::size_t>(i)] = std::exp(row[i] - mx));
    const double lse = mx + std::log(denom);
    for (double& v : p) v /= denom;
    std::vector<double> q = soft_target(k, local, sigma);
    double ce = 0.0;
    for (int i = 0; i < k; ++i) {
      const double qi = q[static_cast<std::size_t>(i)];
      if (qi != 0.0) ce -= qi * (row[i] - lse);
    }
    soft += ce;
    double coef = 0.0;
    if (with_mae && m.continuous()) {
      double e = 0.0;
      for (int i = 0; i < k; ++i) e += p[static_cast<std::size_t>(i)] * m.midpoints[static_cast<std::size_t>(i)];
      const double sd = m.train_sd > 0.0 ? m.train_sd : 1.0;
      mae += std::abs(e - tg.value) / sd;
      coef = (e > tg.value ? 1.0 : (e < tg.value ? -1.0 : 0.0)) / sd;
      ++out.n_mae;
    }
    cache->p.push_back(std::move(p));
    cache->q.push_back(std::move(q));
    cache->mae_coef.push_back(coef);
    cache->base.push_back(m.cum_base);
  }
  out.n_soft = targets.size();
  Tape& tape = logits.tape();
  auto tgt = std::make_shared<std::vector<LossTarget>>(targets.begin(), targets.end());
  if (out.n_soft > 0) {
    const double inv = 1.0 / static_cast<double>(out.n_soft);
    out.soft = tape.record(Tensor::scalar(soft * inv), {logits},
                           [logits, cache, width, inv](Tape& t, const Tensor& g) {
                             Tensor* gz = t.grad_slot(logits);
                             if (!gz) return;
                             for (std::size_t r = 0; r < cache->p.size(); ++r) {
                               double* dst = gz->ptr() + r * width + cache->base[r];
                               const auto& p = cache->p[r];
                               const auto& q = cache->q[r];
                               for (std::size_t i = 0; i < p.size(); ++i) dst[i] += g[0] * inv * (p[i] - q[i]);
                             }
                           });
  }
  if (out.n_mae > 0) {
    const double inv = 1.0 / static_cast<double>(out.n_mae);
    const Vocabulary* vp = &vocab;
    out.mae = tape.record(
        Tensor::scalar(mae * inv), {logits}, [logits, cache, tgt, vp, width, inv](Tape& t, const Tensor& g) {
          Tensor* gz = t.grad_slot(logits);
          if (!gz) return;
          for (std::size_t r = 0; r < cache->p.size(); ++r) {
            const double coef = cache->mae_coef[r];
            if (coef == 0.0) continue;
            const auto& mid = vp->modality((*tgt)[r].modality).midpoints;
            const auto& p = cache->p[r];
            double e = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) e += p[i] * mid[i];
            double* dst = gz->ptr() + r * width + cache->base[r];
            for (std::size_t i = 0; i < p.size(); ++i) dst[i] += g[0] * inv * coef * p[i] * (mid[i] - e);
          }
        });
  }
  return out;
}

SequenceLoss loss_total(const Model& model, Tape& tape, std::span<const Var> bound,
                        const EncodedParticipant& participant, const Vocabulary& vocab,
                        const LossConfig& config, const ForwardOptions& options) {
  SequenceLoss out;
  const TokenSequence& seq = participant.seq;
  const auto targets = next_token_targets(seq, false);
  if (targets.empty()) return out;
  const ForwardInput in = ForwardInput::from_sequence(seq, participant.age, participant.sex);

  ForwardOptions opts = options;
  opts.rows.clear();
  for (const auto& tg : targets) opts.rows.push_back(tg.row);
  const auto causal = model.forward(tape, bound, in, build_mask(MaskKind::causal(), in.size()), opts);
  const RangeLoss main = range_loss(causal.logits, targets, vocab, config.sl_sigma, true);
  Var total = nn::scale(main.soft, config.soft_scale);
  out.parts.soft = main.soft.value().item();
  out.parts.n_targets = main.n_soft;
  if (main.mae.valid()) {
    total = nn::add(total, nn::scale(main.mae, config.mae_scale));
    out.parts.mae = main.mae.value().item();
  }

  const auto split_targets = next_token_targets(seq, true);
  if (!split_targets.empty() && seq.visit_boundary > 0 && config.split_scale != 0.0) {
    opts.rows.clear();
    for (const auto& tg : split_targets) opts.rows.push_back(tg.row);
    const auto split = model.forward(
        tape, bound, in, build_mask(MaskKind::split_context(seq.visit_boundary), in.size()), opts);
    const RangeLoss sl = range_loss(split.logits, split_targets, vocab, config.sl_sigma, false);
    total = nn::add(total, nn::scale(sl.soft, config.split_scale));
    out.parts.split = sl.soft.value().item();
    out.parts.n_split = sl.n_soft;
  }
  out.total = total;
  out.parts.total = total.value().item();
  return out;
}

double lr_at(int step, const ScheduleConfig& s) {
  const int total = std::max(s.total_steps, 1);
  step = std::clamp(step, 0, total);
  if (s.warmup_steps > 0 && step <= s.warmup_steps) {
    return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  const int span = total - s.warmup_steps;
  if (span <= 0) return s.min_lr;
  const double frac = static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
  return s.min_lr + 0.5 * (s.peak_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) g.scale_(s);
  }
  return norm;
}

AdamW::AdamW(const ModelParams& params, Options options) : options_(options) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.at(i).shape(), 0.0);
    v_.emplace_back(params.at(i).shape(), 0.0);
  }
}

void AdamW::step(ModelParams& params, std::vector<Tensor>& grads, double lr) {
  if (grads.size() != params.size() || m_.size() != params.size()) {
    throw Error("optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params.at(i).shape()) {
      throw Error(fmt::format("gradient shape {} for parameter '{}' of shape {}",
                              nn::shape_string(grads[i].shape()), params.name(i),
                              nn::shape_string(params.at(i).shape())));
    }
    for (double v : grads[i].data()) {
      if (!std::isfinite(v)) throw Error(fmt::format("non-finite gradient in parameter '{}'", params.name(i)));
    }
  }
  clip_global_norm(grads, options_.clip_norm);
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, t_);
  const double c2 = 1.0 - std::pow(b2, t_);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Tensor& p = params.at(i);
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mh = m[j] / c1;
      const double vh = v[j] / c2;
      p[j] -= lr * (mh / (std::sqrt(vh) + options_.eps) + options_.weight_decay * p[j]);
    }
  }
}

// ---------------------------------------------------------------------------
// Training configuration

namespace {

struct Field {
  std::string_view key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(fmt::format("training config: '{}' expects a number, got '{}'", key, v));
  }
}

long long to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d)) throw Error(fmt::format("training config: '{}' expects an integer, got '{}'", key, v));
  return static_cast<long long>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "True" || v == "1") return true;
  if (v == "false" || v == "False" || v == "0") return false;
  throw Error(fmt::format("training config: '{}' expects a boolean, got '{}'", key, v));
}

template <typename T>
Field num(std::string_view key, T TrainConfig::*member) {
  return {key,
          [key, member](TrainConfig& c, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>) {
              c.*member = to_double(std::string(key), v);
            } else {
              c.*member = static_cast<T>(to_int(std::string(key), v));
            }
          },
          [member](const TrainConfig& c) { return fmt::format("{}", c.*member); }};
}

template <typename S, typename T>
Field nested(std::string_view key, S TrainConfig::*outer, T S::*member) {
  return {key,
          [key, outer, member](TrainConfig& c, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>) {
              c.*outer.*member = to_double(std::string(key), v);
            } else {
              c.*outer.*member = static_cast<T>(to_int(std::string(key), v));
            }
          },
          [outer, member](const TrainConfig& c) { return fmt::format("{}", c.*outer.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(num("n_embd", &TrainConfig::n_embd));
    f.push_back(num("n_layers", &TrainConfig::n_layers));
    f.push_back(num("n_heads", &TrainConfig::n_heads));
    f.push_back(num("d_head", &TrainConfig::d_head));
    f.push_back(num("n_value_extras", &TrainConfig::n_value_extras));
    f.push_back(num("dropout", &TrainConfig::dropout));
    f.push_back(num("continuous_pe_base_dim", &TrainConfig::continuous_pe_base_dim));
    f.push_back(num("logit_clamp", &TrainConfig::logit_clamp));
    f.push_back(num("max_seq_length", &TrainConfig::max_seq_length));
    f.push_back(num("lr", &TrainConfig::lr));
    f.push_back(num("gamma", &TrainConfig::gamma));
    f.push_back(num("b1", &TrainConfig::b1));
    f.push_back(num("b2", &TrainConfig::b2));
    f.push_back(num("eps", &TrainConfig::eps));
    f.push_back(num("weight_decay", &TrainConfig::weight_decay));
    f.push_back(num("clip_norm", &TrainConfig::clip_norm));
    f.push_back(num("warmup_steps", &TrainConfig::warmup_steps));
    f.push_back(num("steps", &TrainConfig::steps));
    f.push_back(num("epochs", &TrainConfig::epochs));
    f.push_back(num("batch_size", &TrainConfig::batch_size));
    f.push_back(num("eval_every", &TrainConfig::eval_every));
    f.push_back(num("val_fraction", &TrainConfig::val_fraction));
    f.push_back(num("val_limit", &TrainConfig::val_limit));
    f.push_back(num("seed", &TrainConfig::seed));
    f.push_back(num("workers", &TrainConfig::workers));
    f.push_back(nested("SL_sigma", &TrainConfig::loss, &LossConfig::sl_sigma));
    f.push_back(nested("soft_labels_scale", &TrainConfig::loss, &LossConfig::soft_scale));
    f.push_back(nested("mae_loss_scale", &TrainConfig::loss, &LossConfig::mae_scale));
    f.push_back(nested("split_loss_scale", &TrainConfig::loss, &LossConfig::split_scale));
    f.push_back(nested("augmentation_chance", &TrainConfig::augment, &AugmentConfig::noise_chance));
    f.push_back(nested("augmentation_rate", &TrainConfig::augment, &AugmentConfig::noise_rate));
    f.push_back(nested("random_removal_chance", &TrainConfig::augment, &AugmentConfig::removal_chance));
    f.push_back(nested("random_removal_rate", &TrainConfig::augment, &AugmentConfig::removal_rate));
    f.push_back(nested("random_block_removal_chance", &TrainConfig::augment, &AugmentConfig::block_chance));
    f.push_back(nested("random_block_removal_rate", &TrainConfig::augment, &AugmentConfig::block_rate));
    f.push_back(nested("random_block_removal_number", &TrainConfig::augment, &AugmentConfig::block_count));
    f.push_back(nested("random_modality_subset_chance", &TrainConfig::augment, &AugmentConfig::subset_chance));
    f.push_back(nested("random_modality_subset_fraction", &TrainConfig::augment, &AugmentConfig::subset_fraction));
    f.push_back(nested("random_modality_exclusion_chance", &TrainConfig::augment, &AugmentConfig::exclusion_chance));
    return f;
  }();
  return table;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

TrainConfig TrainConfig::parse(std::string_view text) {
  TrainConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find_first_of("=:");
    if (eq == std::string::npos) {
      throw Error(fmt::format("training config line {}: expected key=value, got '{}'", lineno, t));
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key == "batch_per_gpu") {
      c.batch_size = static_cast<int>(to_int(key, value));
      continue;
    }
    if (key == "use_value_extras") {
      if (!to_bool(key, value)) c.n_value_extras = 0;
      continue;
    }
    if (key == "optimizer") {
      if (value != "adamw") throw Error(fmt::format("training config: unsupported optimizer '{}'", value));
      continue;
    }
    if (key == "dim_feedforward_scaling") {
      if (to_int(key, value) != 4) throw Error("training config: dim_feedforward_scaling must be 4");
      continue;
    }
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw Error(fmt::format("training config line {}: unknown key '{}'", lineno, key));
    it->set(c, value);
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("missing file '{}' (training config)", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string TrainConfig::to_string() const {
  std::string out;
  for (const auto& f : fields()) out += fmt::format("{}={}\n", f.key, f.get(*this));
  return out;
}

std::string TrainConfig::hash() const {
  // Thread count does not change results, so it does not change the hash.
  TrainConfig c = *this;
  c.workers = 1;
  return hex64(fnv1a64(c.to_string()));
}

void TrainConfig::validate() const {
  auto require = [](bool ok, std::string_view what) {
    if (!ok) throw Error(fmt::format("training config: {}", what));
  };
  require(n_embd > 0 && n_layers > 0 && n_heads > 0, "model sizes must be positive");
  require(d_head >= 0, "d_head must be >= 0");
  require(d_head > 0 || n_embd % n_heads == 0, "n_embd must be divisible by n_heads when d_head is 0");
  require(lr > 0.0, "lr must be positive");
  require(gamma >= 0.0 && gamma <= 1.0, "gamma must be in [0, 1]");
  require(b1 >= 0.0 && b1 < 1.0 && b2 >= 0.0 && b2 < 1.0, "betas must be in [0, 1)");
  require(batch_size > 0, "batch_size must be positive");
  require(steps >= 0 && epochs >= 0 && (steps > 0 || epochs > 0), "need steps or epochs");
  require(warmup_steps >= 0, "warmup_steps must be >= 0");
  require(eval_every > 0, "eval_every must be positive");
  require(val_fraction >= 0.0 && val_fraction < 1.0, "val_fraction must be in [0, 1)");
  require(loss.sl_sigma > 0.0, "SL_sigma must be positive");
  require(workers >= 1, "workers must be >= 1");
  augment.validate();
}

ModelConfig TrainConfig::model_config(const Vocabulary& vocab) const {
  ModelConfig m = ModelConfig::for_vocabulary(vocab, n_embd, n_layers, n_heads);
  if (d_head > 0) m.d_head = d_head;
  m.n_value_extras = n_value_extras;
  m.dropout = dropout;
  m.cont_pe_dim = continuous_pe_base_dim;
  m.logit_clamp = logit_clamp;
  m.max_seq_len = max_seq_length;
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Training loop

std::pair<std::vector<EncodedParticipant>, std::vector<EncodedParticipant>> split_train_val(
    const std::vector<EncodedParticipant>& all, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(all.size())));
  if (val_fraction > 0.0 && n_val == 0 && all.size() >= 2) n_val = 1;
  std::vector<char> is_val(all.size(), 0);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = 1;
  std::pair<std::vector<EncodedParticipant>, std::vector<EncodedParticipant>> out;
  for (std::size_t i = 0; i < all.size(); ++i) (is_val[i] ? out.second : out.first).push_back(all[i]);
  return out;
}

namespace {

struct PerSequence {
  LossComponents parts;
  bool has_loss = false;
  std::vector<Tensor> grads;
};

LossComponents average(std::span<const PerSequence> per) {
  LossComponents out;
  std::size_t n = 0;
  std::size_t n_split = 0;
  for (const auto& p : per) {
    if (!p.has_loss) continue;
    ++n;
    out.total += p.parts.total;
    out.soft += p.parts.soft;
    out.mae += p.parts.mae;
    if (p.parts.n_split > 0) {
      out.split += p.parts.split;
      ++n_split;
    }
    out.n_targets += p.parts.n_targets;
    out.n_split += p.parts.n_split;
  }
  if (n > 0) {
    out.total /= static_cast<double>(n);
    out.soft /= static_cast<double>(n);
    out.mae /= static_cast<double>(n);
  }
  if (n_split > 0) out.split /= static_cast<double>(n_split);
  return out;
}

}  // namespace

LossComponents evaluate_loss(const Model& model, std::span<const EncodedParticipant> participants,
                             const Vocabulary& vocab, const LossConfig& config, int workers) {
  std::vector<PerSequence> per(participants.size());
  parallel_for(participants.size(), workers, [&](std::size_t i) {
    Tape tape(false);
    const auto bound = model.bind(tape);
    const auto loss = loss_total(model, tape, bound, participants[i], vocab, config);
    per[i].has_loss = loss.total.valid();
    per[i].parts = loss.parts;
  });
  return average(per);
}

LossComponents batch_gradient(const Model& model, std::span<const EncodedParticipant> batch,
                              const Vocabulary& vocab, const LossConfig& config,
                              std::vector<Tensor>& grads, bool train_mode,
                              std::span<const std::uint64_t> dropout_seeds, int workers) {
  const ModelParams& params = model.params();
  if (train_mode && dropout_seeds.size() != batch.size()) {
    throw Error("batch_gradient needs one dropout seed per participant");
  }
  std::vector<PerSequence> per(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    Tape tape;
    const auto bound = model.bind(tape);
    std::mt19937_64 rng(train_mode ? dropout_seeds[i] : 0);
    ForwardOptions opts;
    opts.train = train_mode;
    opts.rng = &rng;
    const auto loss = loss_total(model, tape, bound, batch[i], vocab, config, opts);
    per[i].parts = loss.parts;
    per[i].has_loss = loss.total.valid();
    if (!per[i].has_loss) return;
    tape.backward(loss.total);
    per[i].grads.reserve(bound.size());
    for (std::size_t j = 0; j < bound.size(); ++j) {
      const Tensor* g = tape.grad(bound[j]);
      per[i].grads.push_back(g ? *g : Tensor(params.at(j).shape(), 0.0));
    }
  });
  grads.clear();
  for (std::size_t j = 0; j < params.size(); ++j) grads.emplace_back(params.at(j).shape(), 0.0);
  std::size_t n = 0;
  for (const auto& p : per) {
    if (!p.has_loss) continue;
    ++n;
    for (std::size_t j = 0; j < grads.size(); ++j) grads[j].add_(p.grads[j]);
  }
  if (n > 0) {
    for (auto& g : grads) g.scale_(1.0 / static_cast<double>(n));
  }
  return average(per);
}

std::string metrics_row(const TrainRecord& r) {
  return fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{}", r.step, r.lr, r.loss.total, r.loss.soft,
                     r.loss.mae, r.loss.split, r.val_loss ? fmt::format("{:.9g}", *r.val_loss) : "");
}

TrainResult train(const std::vector<EncodedParticipant>& train_set,
                  const std::vector<EncodedParticipant>& val_set, const Vocabulary& vocab,
                  const TrainConfig& config, const TrainCallback& on_step) {
  config.validate();
  if (train_set.empty()) throw Error("training set is empty");
  const ModelConfig mc = config.model_config(vocab);
  Model model = Model::init(mc, config.seed);

  std::mt19937_64 order_rng(config.seed + 1);
  std::mt19937_64 aug_rng(config.seed + 2);
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t per_epoch = (train_set.size() + batch - 1) / batch;
  const int total = config.steps > 0 ? config.steps : static_cast<int>(per_epoch) * config.epochs;
  const ScheduleConfig schedule{config.lr, config.lr * config.gamma, config.warmup_steps, total};
  AdamW opt(model.params(), {config.b1, config.b2, config.eps, config.weight_decay, config.clip_norm});

  std::span<const EncodedParticipant> val(val_set);
  if (config.val_limit > 0 && val.size() > static_cast<std::size_t>(config.val_limit)) {
    val = val.first(static_cast<std::size_t>(config.val_limit));
  }
  auto validate_now = [&](const Model& m) {
    if (val.empty()) return 0.0;
    return evaluate_loss(m, val, vocab, config.loss, config.workers).total;
  };

  TrainResult result;
  result.initial_val_loss = validate_now(model);
  result.best_val_loss = result.initial_val_loss;
  result.best = model;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::vector<Tensor> grads;
  for (int step = 1; step <= total; ++step) {
    std::vector<EncodedParticipant> items;
    std::vector<std::uint64_t> seeds;
    while (items.size() < batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      EncodedParticipant p = train_set[order[cursor++]];
      p.seq = augment(p.seq, vocab, config.augment, aug_rng);
      items.push_back(std::move(p));
      seeds.push_back(aug_rng());
    }
    TrainRecord rec;
    rec.step = step;
    rec.lr = lr_at(step, schedule);
    rec.loss = batch_gradient(model, items, vocab, config.loss, grads, true, seeds, config.workers);
    bool finite = std::isfinite(rec.loss.total);
    for (const auto& g : grads) {
      for (double v : g.data()) finite = finite && std::isfinite(v);
    }
    if (!finite) {
      result.diverged = true;
      result.history.push_back(rec);
      if (on_step) on_step(rec);
      break;
    }
    opt.step(model.params(), grads, rec.lr);
    if (step % config.eval_every == 0 || step == total) {
      const double v = validate_now(model);
      rec.val_loss = v;
      if (val.empty() || v < result.best_val_loss) {
        result.best_val_loss = v;
        result.best_step = step;
        result.best = model;
      }
    }
    result.history.push_back(rec);
    if (on_step) on_step(rec);
  }
  result.last = model;
  return result;
}

}  // namespace trajlm
