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

#include "trajlm/model.h"

#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "trajlm/common.h"

namespace trajlm {

using nn::BoolMatrix;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

std::vector<std::pair<std::string, Shape>> layout(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto width = static_cast<std::size_t>(c.n_heads * c.d_head);
  const auto ff = static_cast<std::size_t>(c.d_ff);
  const auto pe = static_cast<std::size_t>(c.cont_pe_dim);
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("tok_emb", Shape{static_cast<std::size_t>(c.vocab_size) + 1, d});
  out.emplace_back("cont_proj", Shape{pe, d});
  out.emplace_back("mod_emb", Shape{static_cast<std::size_t>(c.n_modalities) + 1, d});
  for (int i = 0; i < 7; ++i) {
    out.emplace_back(fmt::format("time_emb.{}", i),
                     Shape{static_cast<std::size_t>(c.temporal_vocab_sizes[i]), d});
  }
  out.emplace_back("age_proj", Shape{pe, d});
  out.emplace_back("sex_emb", Shape{3, d});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = fmt::format("layers.{}.", l);
    out.emplace_back(p + "ln1.g", Shape{d});
    out.emplace_back(p + "ln1.b", Shape{d});
    out.emplace_back(p + "wq", Shape{d, width});
    out.emplace_back(p + "wk", Shape{d, width});
    out.emplace_back(p + "wv", Shape{d, width});
    for (int e = 0; e < c.n_value_extras; ++e) {
      out.emplace_back(fmt::format("{}v_extra.{}", p, e), Shape{d, width});
    }
    if (c.n_value_extras > 0) {
      out.emplace_back(p + "gates", Shape{static_cast<std::size_t>(c.n_heads),
                                          static_cast<std::size_t>(c.n_value_extras)});
    }
    out.emplace_back(p + "wo", Shape{width, d});
    out.emplace_back(p + "ln2.g", Shape{d});
    out.emplace_back(p + "ln2.b", Shape{d});
    out.emplace_back(p + "ff.w1", Shape{d, ff});
    out.emplace_back(p + "ff.b1", Shape{ff});
    out.emplace_back(p + "ff.w2", Shape{ff, d});
    out.emplace_back(p + "ff.b2", Shape{d});
  }
  out.emplace_back("ln_f.g", Shape{d});
  out.emplace_back("ln_f.b", Shape{d});
  for (const char* q : {"q_mod", "q_time"}) {
    out.emplace_back(fmt::format("{}.w1", q), Shape{d, d});
    out.emplace_back(fmt::format("{}.b1", q), Shape{d});
    out.emplace_back(fmt::format("{}.w2", q), Shape{d, d});
    out.emplace_back(fmt::format("{}.b2", q), Shape{d});
  }
  out.emplace_back("out.w", Shape{static_cast<std::size_t>(c.vocab_size), d});
  out.emplace_back("out.b", Shape{static_cast<std::size_t>(c.vocab_size)});
  return out;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::for_vocabulary(const Vocabulary& vocab, int d_model, int n_layers,
                                        int n_heads) {
  ModelConfig c;
  c.d_model = d_model;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.d_head = d_model / n_heads;
  c.d_ff = 4 * d_model;
  c.vocab_size = vocab.total_tokens();
  c.n_modalities = vocab.modality_count();
  c.value_scales.clear();
  for (const auto& m : vocab.modalities()) {
    c.value_scales.push_back(m.continuous() && m.train_sd > 0.0 ? m.train_sd : 1.0);
  }
  c.value_scales.push_back(1.0);
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](int v, std::string_view name) {
    if (v <= 0) throw Error(fmt::format("model config: {} must be positive, got {}", name, v));
  };
  positive(d_model, "d_model");
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(d_head, "d_head");
  positive(vocab_size, "vocab_size");
  positive(n_modalities, "n_modalities");
  positive(max_seq_len, "max_seq_len");
  positive(cont_pe_dim, "cont_pe_dim");
  if (d_ff != 4 * d_model) {
    throw Error(fmt::format("model config: d_ff must be 4 * d_model ({}), got {}", 4 * d_model, d_ff));
  }
  if (n_value_extras < 0) throw Error("model config: n_value_extras must be >= 0");
  if (d_model % 2 != 0 || cont_pe_dim % 2 != 0) {
    throw Error("model config: d_model and cont_pe_dim must be even");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("model config: dropout must be in [0, 1)");
  if (!(logit_clamp > 0.0)) throw Error("model config: logit_clamp must be positive");
  for (int s : temporal_vocab_sizes) positive(s, "temporal_vocab_sizes");
  if (value_scales.size() != static_cast<std::size_t>(n_modalities) + 1) {
    throw Error(fmt::format("model config: value_scales has {} entries, expected {}",
                            value_scales.size(), n_modalities + 1));
  }
  for (double s : value_scales) {
    if (!(s > 0.0) || !std::isfinite(s)) throw Error("model config: value_scales must be positive");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_head"] = d_head;
  j["d_ff"] = d_ff;
  j["n_value_extras"] = n_value_extras;
  j["dropout"] = dropout;
  j["logit_clamp"] = logit_clamp;
  j["cont_pe_dim"] = cont_pe_dim;
  j["vocab_size"] = vocab_size;
  j["n_modalities"] = n_modalities;
  j["temporal_vocab_sizes"] = temporal_vocab_sizes;
  j["max_seq_len"] = max_seq_len;
  j["year_base"] = year_base;
  j["value_scales"] = value_scales;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("malformed model config JSON: {}", e.what()));
  }
  ModelConfig c;
  try {
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_head = j.at("d_head").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.n_value_extras = j.at("n_value_extras").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.logit_clamp = j.at("logit_clamp").get<double>();
    c.cont_pe_dim = j.at("cont_pe_dim").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.n_modalities = j.at("n_modalities").get<int>();
    c.temporal_vocab_sizes = j.at("temporal_vocab_sizes").get<std::array<int, 7>>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.year_base = j.at("year_base").get<int>();
    c.value_scales = j.at("value_scales").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("model config JSON: {}", e.what()));
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// ModelParams

Tensor& ModelParams::add(std::string name, Shape shape) {
  if (index_.contains(name)) throw Error(fmt::format("duplicate parameter '{}'", name));
  index_.emplace(name, tensors_.size());
  names_.push_back(std::move(name));
  tensors_.emplace_back(std::move(shape));
  return tensors_.back();
}

Tensor& ModelParams::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(fmt::format("unknown parameter '{}'", name));
  return tensors_[it->second];
}

const Tensor& ModelParams::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(fmt::format("unknown parameter '{}'", name));
  return tensors_[it->second];
}

bool ModelParams::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

std::size_t parameter_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& [name, shape] : layout(config)) {
    n += std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
  return n;
}

// ---------------------------------------------------------------------------
// Masks and inputs

BoolMatrix build_mask(const MaskKind& kind, int rows) {
  if (rows < 0) throw Error("mask size must be >= 0");
  const auto n = static_cast<std::size_t>(rows);
  BoolMatrix m(n, n);
  switch (kind.kind) {
    case MaskKind::Kind::kCausal:
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c <= r; ++c) m.set(r, c, true);
      }
      break;
    case MaskKind::Kind::kSplitContext: {
      if (kind.boundary < 0 || kind.boundary > rows) {
        throw Error(fmt::format("split boundary {} outside [0, {}]", kind.boundary, rows));
      }
      const auto b = static_cast<std::size_t>(kind.boundary);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < b; ++c) m.set(r, c, true);
        if (r >= b) {
          for (std::size_t c = b; c <= r; ++c) m.set(r, c, true);
        }
      }
      break;
    }
    case MaskKind::Kind::kParallelV2: {
      if (kind.n_ctx < 0 || kind.n_targets < 0 || kind.n_ctx + 2 * kind.n_targets != rows) {
        throw Error(fmt::format("parallel mask with {} context and {} targets needs {} rows, got {}",
                                kind.n_ctx, kind.n_targets, kind.n_ctx + 2 * kind.n_targets, rows));
      }
      const auto ctx = static_cast<std::size_t>(kind.n_ctx);
      for (std::size_t r = 0; r < ctx; ++r) {
        for (std::size_t c = 0; c <= r; ++c) m.set(r, c, true);
      }
      for (int i = 0; i < kind.n_targets; ++i) {
        const auto f = ctx + 2 * static_cast<std::size_t>(i);
        const auto p = f + 1;
        m.set(f, f, true);
        for (std::size_t c = 0; c < ctx; ++c) m.set(p, c, true);
        m.set(p, f, true);
        m.set(p, p, true);
      }
      break;
    }
  }
  return m;
}

void ForwardInput::check() const {
  const std::size_t t = tokens.size();
  if (values.size() != t || modalities.size() != t || times.size() != t || positions.size() != t ||
      query_modalities.size() != t || query_times.size() != t) {
    throw Error(fmt::format(
        "forward input streams out of sync: tokens {}, values {}, modalities {}, times {}, "
        "positions {}, query modalities {}, query times {}",
        t, values.size(), modalities.size(), times.size(), positions.size(),
        query_modalities.size(), query_times.size()));
  }
}

ForwardInput ForwardInput::from_sequence(const TokenSequence& seq, double age, Sex sex) {
  seq.check_aligned();
  ForwardInput in;
  const auto t = static_cast<std::size_t>(seq.size());
  in.tokens = seq.tokens;
  in.values = seq.values;
  in.modalities.assign(seq.modalities.begin(), seq.modalities.begin() + static_cast<long>(t));
  in.times.assign(seq.times.begin(), seq.times.begin() + static_cast<long>(t));
  in.positions.resize(t);
  std::iota(in.positions.begin(), in.positions.end(), 0);
  in.query_modalities.assign(seq.modalities.begin() + 1, seq.modalities.end());
  in.query_times.assign(seq.times.begin() + 1, seq.times.end());
  in.age = age;
  in.sex = sex;
  return in;
}

ForwardInput parallel_v2_input(const TokenSequence& seq, int n_ctx, double age, Sex sex,
                               std::span<const QueryTarget> targets, int pad_token) {
  if (n_ctx < 1 || n_ctx > seq.size()) {
    throw Error(fmt::format("parallel input needs 1..{} context positions, got {}", seq.size(), n_ctx));
  }
  ForwardInput in = ForwardInput::from_sequence(seq.prefix(n_ctx), age, sex);
  const auto last = static_cast<std::size_t>(n_ctx - 1);
  for (const QueryTarget& q : targets) {
    // Probe: announces the target's modality and time.
    in.tokens.push_back(pad_token);
    in.values.push_back(0.0);
    in.modalities.push_back(q.modality);
    in.times.push_back(q.time);
    in.positions.push_back(n_ctx);
    in.query_modalities.push_back(q.modality);
    in.query_times.push_back(q.time);
    // Prediction row: restates the last context position, queried for the
    // target.
    in.tokens.push_back(in.tokens[last]);
    in.values.push_back(in.values[last]);
    in.modalities.push_back(in.modalities[last]);
    in.times.push_back(in.times[last]);
    in.positions.push_back(in.positions[last]);
    in.query_modalities.push_back(q.modality);
    in.query_times.push_back(q.time);
  }
  return in;
}

void sinusoid(double x, int dim, double* out) {
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double w = std::pow(10000.0, -2.0 * i / dim);
    out[2 * i] = std::sin(x * w);
    out[2 * i + 1] = std::cos(x * w);
  }
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig config, ModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto expected = layout(config_);
  if (expected.size() != params_.size()) {
    throw Error(fmt::format("model has {} parameter arrays, config expects {}", params_.size(),
                            expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].first != params_.name(i) || expected[i].second != params_.at(i).shape()) {
      throw Error(fmt::format("parameter {} is '{}' {}, config expects '{}' {}", i, params_.name(i),
                              nn::shape_string(params_.at(i).shape()), expected[i].first,
                              nn::shape_string(expected[i].second)));
    }
  }
}

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  ModelParams params;
  for (auto& [name, shape] : layout(config)) {
    Tensor& t = params.add(name, shape);
    if (ends_with(name, ".g")) {
      t.fill(1.0);
    } else if (ends_with(name, ".b") || ends_with(name, ".b1") || ends_with(name, ".b2") ||
               ends_with(name, "gates") || name == "q_mod.w2" || name == "q_time.w2") {
      // Zero: biases, value-extra gates and the query MLPs' last layer.
    } else {
      for (double& v : t.data()) v = normal(rng);
    }
  }
  return Model(config, std::move(params));
}

std::vector<Var> Model::bind(Tape& tape) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) out.push_back(tape.param(params_.at(i)));
  return out;
}

namespace {

/// Sequential reader over bound parameters; follows the layout order.
class Cursor {
 public:
  explicit Cursor(std::span<const Var> vars) : vars_(vars) {}
  Var next() {
    if (i_ >= vars_.size()) throw Error("bound parameter list too short");
    return vars_[i_++];
  }
  void skip(std::size_t n) { i_ += n; }

 private:
  std::span<const Var> vars_;
  std::size_t i_ = 0;
};

Var time_embedding(Tape& tape, std::span<const Var> tables, std::span<const TimeFeatures> times,
                   const std::array<int, 7>& sizes) {
  (void)tape;
  Var sum;
  std::vector<int> column(times.size());
  for (int d = 0; d < 7; ++d) {
    for (std::size_t r = 0; r < times.size(); ++r) {
      const int v = times[r][static_cast<std::size_t>(d)];
      if (v < 0 || v >= sizes[static_cast<std::size_t>(d)]) {
        throw Error(fmt::format("time feature {} value {} out of table range [0, {})", d, v,
                                sizes[static_cast<std::size_t>(d)]));
      }
      column[r] = v;
    }
    Var e = nn::embedding(tables[static_cast<std::size_t>(d)], column);
    sum = sum.valid() ? nn::add(sum, e) : e;
  }
  return sum;
}

Var query_mlp(Var x, Var w1, Var b1, Var w2, Var b2) {
  return nn::add_row(nn::matmul(nn::gelu(nn::add_row(nn::matmul(x, w1), b1)), w2), b2);
}

}  // namespace

Var Model::embed_inputs(Tape& tape, std::span<const Var> bound, const ForwardInput& in) const {
  in.check();
  const ModelConfig& c = config_;
  const auto t = static_cast<std::size_t>(in.size());
  if (t == 0) throw Error("forward on an empty sequence");
  if (in.size() > c.max_seq_len) {
    throw Error(fmt::format("sequence of {} exceeds max_seq_len {}", in.size(), c.max_seq_len));
  }
  Cursor cur(bound);
  const Var tok_emb = cur.next();
  const Var cont_proj = cur.next();
  const Var mod_emb = cur.next();
  std::array<Var, 7> time_tables;
  for (auto& v : time_tables) v = cur.next();
  const Var age_proj = cur.next();
  const Var sex_emb = cur.next();

  for (int m : in.modalities) {
    if (m < 0 || m > c.n_modalities) {
      throw Error(fmt::format("modality index {} out of table range [0, {}]", m, c.n_modalities));
    }
  }

  const auto pe_dim = static_cast<std::size_t>(c.cont_pe_dim);
  Tensor enc = Tensor::matrix(t, pe_dim);
  for (std::size_t r = 0; r < t; ++r) {
    const double scale = c.value_scales[static_cast<std::size_t>(in.modalities[r])];
    sinusoid(in.values[r] / scale, c.cont_pe_dim, enc.ptr() + r * pe_dim);
  }
  const auto d = static_cast<std::size_t>(c.d_model);
  Tensor pe = Tensor::matrix(t, d);
  for (std::size_t r = 0; r < t; ++r) {
    if (in.positions[r] < 0) throw Error("negative position index");
    sinusoid(static_cast<double>(in.positions[r]), c.d_model, pe.ptr() + r * d);
  }
  Tensor age_enc = Tensor::matrix(1, pe_dim);
  sinusoid(in.age / 10.0, c.cont_pe_dim, age_enc.ptr());
  const int sex_row = static_cast<int>(in.sex);

  Var h = nn::embedding(tok_emb, in.tokens);
  h = nn::add(h, nn::matmul(tape.constant(std::move(enc)), cont_proj));
  h = nn::add(h, nn::embedding(mod_emb, in.modalities));
  h = nn::add(h, time_embedding(tape, time_tables, in.times, c.temporal_vocab_sizes));
  h = nn::add(h, tape.constant(std::move(pe)));
  h = nn::add_row(h, nn::matmul(tape.constant(std::move(age_enc)), age_proj));
  h = nn::add_row(h, nn::embedding(sex_emb, std::span<const int>(&sex_row, 1)));
  return h;
}

ForwardResult Model::forward(Tape& tape, std::span<const Var> bound, const ForwardInput& in,
                             const BoolMatrix& mask, const ForwardOptions& options) const {
  const ModelConfig& c = config_;
  if (bound.size() != params_.size()) throw Error("bound parameters do not match the model");
  const auto t = static_cast<std::size_t>(in.size());
  Var h = embed_inputs(tape, bound, in);
  if (mask.rows() != t || mask.cols() != t) {
    throw Error(fmt::format("mask {}x{} for {} rows", mask.rows(), mask.cols(), t));
  }
  const bool drop = options.train && c.dropout > 0.0;
  if (drop && !options.rng) throw Error("training forward needs an rng for dropout");

  Cursor cur(bound);
  cur.skip(3 + 7 + 2);
  const auto dh = static_cast<std::size_t>(c.d_head);
  const auto heads = static_cast<std::size_t>(c.n_heads);
  for (int l = 0; l < c.n_layers; ++l) {
    const Var ln1g = cur.next(), ln1b = cur.next();
    const Var wq = cur.next(), wk = cur.next(), wv = cur.next();
    std::vector<Var> extras;
    for (int e = 0; e < c.n_value_extras; ++e) extras.push_back(cur.next());
    const Var gates = c.n_value_extras > 0 ? cur.next() : Var();
    const Var wo = cur.next();
    const Var ln2g = cur.next(), ln2b = cur.next();
    const Var w1 = cur.next(), b1 = cur.next(), w2 = cur.next(), b2 = cur.next();

    const Var x = nn::layer_norm(h, ln1g, ln1b);
    Var v = nn::matmul(x, wv);
    for (std::size_t e = 0; e < extras.size(); ++e) {
      v = nn::add(v, nn::head_gate(nn::matmul(x, extras[e]), gates, e, dh));
    }
    Var a = nn::attention(nn::matmul(x, wq), nn::matmul(x, wk), v, mask, heads, dh);
    a = nn::matmul(a, wo);
    if (drop) a = nn::dropout(a, c.dropout, *options.rng);
    h = nn::add(h, a);

    const Var x2 = nn::layer_norm(h, ln2g, ln2b);
    Var f = nn::add_row(nn::matmul(nn::gelu(nn::add_row(nn::matmul(x2, w1), b1)), w2), b2);
    if (drop) f = nn::dropout(f, c.dropout, *options.rng);
    h = nn::add(h, f);
  }
  const Var lnfg = cur.next(), lnfb = cur.next();
  const Var hidden = nn::layer_norm(h, lnfg, lnfb);
  const Var qm_w1 = cur.next(), qm_b1 = cur.next(), qm_w2 = cur.next(), qm_b2 = cur.next();
  const Var qt_w1 = cur.next(), qt_b1 = cur.next(), qt_w2 = cur.next(), qt_b2 = cur.next();
  const Var out_w = cur.next(), out_b = cur.next();

  std::vector<std::size_t> rows = options.rows;
  if (rows.empty()) {
    rows.resize(t);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  }
  std::vector<int> q_mods;
  std::vector<TimeFeatures> q_times;
  for (std::size_t r : rows) {
    if (r >= t) throw Error(fmt::format("requested row {} of {}", r, t));
    const int m = in.query_modalities[r];
    if (m < 0 || m > c.n_modalities) {
      throw Error(fmt::format("query modality {} out of table range [0, {}]", m, c.n_modalities));
    }
    q_mods.push_back(m);
    q_times.push_back(in.query_times[r]);
  }
  Cursor tables(bound);
  tables.skip(2);
  const Var mod_emb = tables.next();
  std::array<Var, 7> time_tables;
  for (auto& v : time_tables) v = tables.next();

  Var ht = nn::select_rows(hidden, rows);
  ht = nn::add(ht, query_mlp(nn::embedding(mod_emb, q_mods), qm_w1, qm_b1, qm_w2, qm_b2));
  ht = nn::add(ht, query_mlp(time_embedding(tape, time_tables, q_times, c.temporal_vocab_sizes),
                             qt_w1, qt_b1, qt_w2, qt_b2));
  Var z = nn::add_row(nn::matmul_nt(ht, out_w), out_b);
  return {nn::tanh_clamp(z, c.logit_clamp), hidden};
}

Tensor Model::logits(const ForwardInput& in, const BoolMatrix& mask,
                     std::vector<std::size_t> rows) const {
  Tape tape(false);
  const auto bound = bind(tape);
  ForwardOptions opts;
  opts.rows = std::move(rows);
  return forward(tape, bound, in, mask, opts).logits.value();
}

std::vector<double> Model::extract_embedding(const TokenSequence& seq, double age, Sex sex) const {
  if (seq.size() == 0) throw Error("embedding of an empty sequence");
  const ForwardInput in = ForwardInput::from_sequence(seq, age, sex);
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < in.tokens.size(); ++r) {
    if (in.tokens[r] != config_.vocab_size) keep.push_back(r);
  }
  if (keep.empty()) throw Error("embedding of a sequence with no measurement positions");
  Tape tape(false);
  const auto bound = bind(tape);
  ForwardOptions opts;
  opts.rows = {0};
  const Var hidden = forward(tape, bound, in, build_mask(MaskKind::causal(), in.size()), opts).hidden;
  const Tensor pooled = nn::mean_rows(nn::select_rows(hidden, keep)).value();
  return {pooled.data().begin(), pooled.data().end()};
}

}  // namespace trajlm
