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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails. Every expected value here comes
// from an oracle computed in this file (brute force, Boost.Math, extended
// precision) or from the planted ground truth of the synthetic cohort.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/uuid/detail/sha1.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "trajlm/common.h"
#include "trajlm/corpus.h"
#include "trajlm/eval.h"
#include "trajlm/intervene.h"
#include "trajlm/model.h"
#include "trajlm/objective.h"
#include "trajlm/stats.h"
#include "trajlm/synth.h"
#include "trajlm/vocab.h"

namespace fs = std::filesystem;
using namespace trajlm;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<std::pair<std::string, Outcome>> g_results;

void report(const std::string& id, const std::string& title, Outcome o) {
  std::printf("%s %s %s: %s\n", o.pass ? "[PASS]" : "[FAIL]", id.c_str(), title.c_str(), o.detail.c_str());
  std::fflush(stdout);
  g_results.emplace_back(id, std::move(o));
}

void note(const std::string& text) {
  std::printf("       %s\n", text.c_str());
  std::fflush(stdout);
}

std::set<std::string> g_only;

bool selected(const std::string& id) { return g_only.empty() || g_only.count(id) > 0; }

template <typename F>
void run(const std::string& id, const std::string& title, F&& body) {
  if (!selected(id)) return;
  try {
    report(id, title, body());
  } catch (const std::exception& e) {
    report(id, title, {false, fmt::format("exception: {}", e.what())});
  }
}

std::string sha1_hex(const std::string& bytes) {
  boost::uuids::detail::sha1 h;
  h.process_bytes(bytes.data(), bytes.size());
  boost::uuids::detail::sha1::digest_type d;
  h.get_digest(d);
  std::string out;
  for (auto w : d) out += fmt::format("{:08x}", static_cast<unsigned>(w));
  return out;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<EncodedParticipant> encode(const std::vector<ParticipantRecord>& records, const Vocabulary& vocab) {
  std::vector<EncodedParticipant> out;
  for (const auto& r : records) out.push_back(encode_participant(r, vocab, 512));
  return out;
}

// ---------------------------------------------------------------------------
// C1: gradients of the full composite loss against central differences.

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  auto gcfg = GeneratorConfig::desk_default(3);
  gcfg.n_participants = 40;
  const auto cohort = generate(gcfg);
  const auto vocab = build_vocabulary(collect_raw_modalities(cohort.records));
  TrainConfig tc;
  tc.n_embd = 32;
  tc.n_layers = 2;
  tc.n_heads = 2;
  tc.dropout = 0.0;
  Model model = Model::init(tc.model_config(vocab), 11);

  // A batch of two participants, six tokens each (three per visit), so the
  // next-token, MAE and split terms all contribute: 12 tokens in total.
  std::vector<EncodedParticipant> batch;
  for (const auto& r : cohort.records) {
    auto p = encode_participant(r, vocab, 512);
    const int b = p.seq.visit_boundary;
    if (b < 3 || p.seq.size() - b < 3) continue;
    std::vector<char> keep(static_cast<std::size_t>(p.seq.size()), 0);
    for (int i = b - 3; i < b + 3; ++i) keep[static_cast<std::size_t>(i)] = 1;
    p.seq = p.seq.filtered(keep);
    batch.push_back(std::move(p));
    if (batch.size() == 2) break;
  }
  if (batch.size() != 2) return {false, "could not assemble the toy batch"};
  std::size_t tokens = 0;
  for (const auto& p : batch) tokens += static_cast<std::size_t>(p.seq.size());

  LossConfig lc;
  auto loss_value = [&](nn::Tape& tape, std::span<const nn::Var> bound) {
    nn::Var total;
    for (const auto& p : batch) {
      const auto l = loss_total(model, tape, bound, p, vocab, lc);
      total = total.valid() ? nn::add(total, l.total) : l.total;
    }
    return nn::scale(total, 1.0 / static_cast<double>(batch.size()));
  };

  auto& params = model.params();
  std::vector<nn::Tensor> analytic;
  {
    nn::Tape tape;
    const auto bound = model.bind(tape);
    const auto l = loss_value(tape, bound);
    tape.backward(l);
    for (std::size_t i = 0; i < bound.size(); ++i) {
      const auto* g = tape.grad(bound[i]);
      analytic.push_back(g ? *g : nn::Tensor(params.at(i).shape(), 0.0));
    }
  }
  auto evaluate = [&] {
    nn::Tape tape(false);
    const auto bound = model.bind(tape);
    return loss_value(tape, bound).value().item();
  };

  // Every parameter tensor contributes: up to 24 coordinates that carry a
  // gradient, plus 4 drawn uniformly.
  std::mt19937_64 rng(5);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<std::size_t> live;
    for (std::size_t j = 0; j < analytic[i].size(); ++j) {
      if (analytic[i][j] != 0.0) live.push_back(j);
    }
    std::shuffle(live.begin(), live.end(), rng);
    for (std::size_t j = 0; j < std::min<std::size_t>(24, live.size()); ++j) coords.emplace_back(i, live[j]);
    std::uniform_int_distribution<std::size_t> any(0, params.at(i).size() - 1);
    for (int j = 0; j < 4; ++j) coords.emplace_back(i, any(rng));
  }

  // Fourth-order central difference: (8[f(+h) - f(-h)] - [f(+2h) - f(-2h)]) / 12h.
  const double h = 1e-3;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [i, j] : coords) {
    double& x = params.at(i)[j];
    const double saved = x;
    auto at = [&](double d) {
      x = saved + d;
      return evaluate();
    };
    const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
    x = saved;
    const double a = analytic[i][j];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-10});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > worst) {
      worst = rel;
      worst_name = fmt::format("{}[{}] analytic {:.6e} numeric {:.6e}", params.name(i), j, a, numeric);
    }
  }
  const double secs = seconds_since(t0);
  note(fmt::format("worst coordinate: {}", worst_name));
  return {worst < 1e-4 && secs < 60.0,
          fmt::format("max relative error {:.3e} over {} coordinates of {} tensors ({} tokens, d=32, 2 layers) in {:.1f} s",
                      worst, coords.size(), params.size(), tokens, secs)};
}

// ---------------------------------------------------------------------------
// C2: exhaustive tokenizer identities on a 2,000-token vocabulary.

Outcome tokenizer_oracle() {
  std::mt19937_64 rng(2024);
  std::vector<RawModality> raw;
  constexpr int kContinuous = 19;
  constexpr int kBins = 100;
  constexpr std::size_t kValues = 10000;
  for (int m = 0; m < kContinuous; ++m) {
    RawModality r;
    r.name = fmt::format("c{}", m);
    r.bin_override = kBins;
    std::set<double> distinct;
    std::lognormal_distribution<double> dist(0.0, 0.3 + 0.1 * m);
    while (distinct.size() < kValues) distinct.insert(dist(rng) * (m + 1));
    r.values.assign(distinct.begin(), distinct.end());
    std::shuffle(r.values.begin(), r.values.end(), rng);
    raw.push_back(std::move(r));
  }
  for (int m = 0; m < 2; ++m) {
    RawModality r;
    r.name = fmt::format("k{}", m);
    r.kind = ModalityKind::kCategorical;
    for (int c = 0; c < 50; ++c) r.categories.push_back(fmt::format("cat{:02d}", c));
    r.category_values = r.categories;
    raw.push_back(std::move(r));
  }
  const auto vocab = build_vocabulary(raw);
  if (vocab.total_tokens() != 2000) return {false, fmt::format("vocabulary has {} tokens", vocab.total_tokens())};

  // decode then encode is the identity on every token.
  std::size_t roundtrip_failures = 0;
  for (int t = 0; t < vocab.total_tokens(); ++t) {
    const auto d = decode_token(vocab, t);
    const int back = vocab.modality(d.modality).continuous() ? encode_value(vocab, d.modality, d.midpoint)
                                                             : encode_category(vocab, d.modality, d.category);
    if (back != t) ++roundtrip_failures;
  }

  // Brute-force bin occupancy from the published edges: value v is in bin b
  // iff it is not below interior edge b-1 and below interior edge b.
  std::size_t occupancy_failures = 0;
  std::size_t encode_failures = 0;
  int worst_dev = 0;
  for (int m = 0; m < kContinuous; ++m) {
    const auto& spec = vocab.modality(m);
    if (spec.bin_count() != kBins) return {false, fmt::format("{} has {} bins", spec.name, spec.bin_count())};
    std::vector<int> counts(kBins, 0);
    for (double v : raw[static_cast<std::size_t>(m)].values) {
      int b = 0;
      while (b + 1 < kBins && v >= spec.bin_edges[static_cast<std::size_t>(b + 1)]) ++b;
      ++counts[static_cast<std::size_t>(b)];
      if (encode_value(vocab, m, v) != spec.cum_base + b) ++encode_failures;
    }
    for (int c : counts) {
      const int dev = std::abs(c - static_cast<int>(kValues / kBins));
      worst_dev = std::max(worst_dev, dev);
      if (dev > 2) ++occupancy_failures;
    }
  }

  // Quantile matching never inverts the order of external values.
  std::size_t rank_failures = 0;
  std::normal_distribution<double> ext(3.0, 2.0);
  for (int m = 0; m < kContinuous; ++m) {
    std::vector<double> external(1000);
    for (double& v : external) v = ext(rng);
    const auto tokens = quantile_match(vocab, m, external);
    std::vector<std::size_t> order(external.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return external[a] < external[b]; });
    for (std::size_t i = 1; i < order.size(); ++i) {
      if (tokens[order[i]] < tokens[order[i - 1]]) ++rank_failures;
    }
  }
  return {roundtrip_failures == 0 && occupancy_failures == 0 && encode_failures == 0 && rank_failures == 0,
          fmt::format("decode/encode failures {}/2000, bin occupancy violations {} (max |count - n/K| = {}), "
                      "encode/brute-force mismatches {}, quantile-match rank inversions {} over {}x1000 externals",
                      roundtrip_failures, occupancy_failures, worst_dev, encode_failures, rank_failures, kContinuous)};
}

// ---------------------------------------------------------------------------
// Random models and inputs for the mask and bound checks.

Vocabulary small_vocab() {
  auto gcfg = GeneratorConfig::desk_default(19);
  gcfg.n_participants = 60;
  return build_vocabulary(collect_raw_modalities(generate(gcfg).records));
}

TimeFeatures random_time(std::mt19937_64& rng) {
  TimeFeatures f{};
  for (std::size_t d = 0; d < f.size(); ++d) {
    std::uniform_int_distribution<int> u(0, kTemporalVocabSizes[d] - 1);
    f[d] = u(rng);
  }
  return f;
}

// A random valid measurement at position `i` of `seq`.
void random_position(TokenSequence& seq, std::size_t i, const Vocabulary& vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> tok(0, vocab.total_tokens() - 1);
  const int t = tok(rng);
  const auto d = decode_token(vocab, t);
  seq.tokens[i] = t;
  seq.values[i] = vocab.modality(d.modality).continuous() ? d.midpoint : 0.0;
  seq.modalities[i] = d.modality;
  seq.times[i] = random_time(rng);
}

TokenSequence random_sequence(int n, const Vocabulary& vocab, std::mt19937_64& rng) {
  TokenSequence s;
  s.tokens.resize(static_cast<std::size_t>(n));
  s.values.resize(static_cast<std::size_t>(n));
  s.modalities.resize(static_cast<std::size_t>(n) + 1);
  s.times.resize(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i < n; ++i) random_position(s, static_cast<std::size_t>(i), vocab, rng);
  std::uniform_int_distribution<int> mod(0, vocab.modality_count() - 1);
  s.modalities.back() = mod(rng);
  s.times.back() = random_time(rng);
  s.visit_boundary = n;
  return s;
}

ModelConfig random_config(const Vocabulary& vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> layers(1, 3);
  std::uniform_int_distribution<int> heads(1, 4);
  auto c = ModelConfig::for_vocabulary(vocab, 16, layers(rng), heads(rng));
  c.d_head = 8;
  c.d_ff = 64;
  c.cont_pe_dim = 32;
  c.dropout = 0.0;
  return c;
}

// Gaussian jitter on every parameter, including the zero-initialized
// value-extra gates, so that every input path is live.
void perturb_params(Model& model, std::mt19937_64& rng, double spread) {
  std::normal_distribution<double> n(0.0, spread);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    auto& t = model.params().at(i);
    for (auto& v : t.data()) v += n(rng);
  }
}

bool rows_equal(const nn::Tensor& a, const nn::Tensor& b, std::size_t ra, std::size_t rb) {
  return std::memcmp(a.ptr() + ra * a.cols(), b.ptr() + rb * b.cols(), a.cols() * sizeof(double)) == 0;
}

// C3: causal faithfulness and ParallelV2 target independence.
Outcome mask_correctness() {
  const auto vocab = small_vocab();
  std::mt19937_64 rng(77);
  std::size_t causal_violations = 0, causal_rows = 0, causal_changed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto cfg = random_config(vocab, rng);
    Model model = Model::init(cfg, 1000 + static_cast<std::uint64_t>(trial));
    perturb_params(model, rng, 0.05);
    std::uniform_int_distribution<int> len(4, 24);
    const int n = len(rng);
    auto seq = random_sequence(n, vocab, rng);
    std::uniform_real_distribution<double> age(20, 80);
    const double a = age(rng);
    const auto base_in = ForwardInput::from_sequence(seq, a, Sex::kFemale);
    std::uniform_int_distribution<int> cut(0, n - 2);
    const int p = cut(rng);
    // Every stream entry after row p's own query is replaced.
    auto alt = seq;
    for (int i = p + 1; i < n; ++i) random_position(alt, static_cast<std::size_t>(i), vocab, rng);
    std::uniform_int_distribution<int> mod(0, vocab.modality_count() - 1);
    alt.modalities.back() = mod(rng);
    alt.times.back() = random_time(rng);
    auto alt_in = ForwardInput::from_sequence(alt, a, Sex::kFemale);
    // from_sequence reads the query of row p from entry p+1; restore it so
    // only rows after p differ.
    alt_in.query_modalities[static_cast<std::size_t>(p)] = base_in.query_modalities[static_cast<std::size_t>(p)];
    alt_in.query_times[static_cast<std::size_t>(p)] = base_in.query_times[static_cast<std::size_t>(p)];
    const auto mask = build_mask(MaskKind::causal(), n);
    const auto z0 = model.logits(base_in, mask);
    const auto z1 = model.logits(alt_in, mask);
    for (int r = 0; r <= p; ++r) {
      ++causal_rows;
      if (!rows_equal(z0, z1, static_cast<std::size_t>(r), static_cast<std::size_t>(r))) ++causal_violations;
    }
    for (int r = p + 1; r < n; ++r) {
      if (!rows_equal(z0, z1, static_cast<std::size_t>(r), static_cast<std::size_t>(r))) ++causal_changed;
    }
  }

  std::size_t pv_violations = 0, pv_rows = 0, pv_changed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto cfg = random_config(vocab, rng);
    Model model = Model::init(cfg, 5000 + static_cast<std::uint64_t>(trial));
    perturb_params(model, rng, 0.05);
    std::uniform_int_distribution<int> len(2, 16);
    std::uniform_int_distribution<int> nt(2, 6);
    const int n = len(rng);
    const int k = nt(rng);
    const auto seq = random_sequence(n, vocab, rng);
    std::uniform_int_distribution<int> cont(0, 11);
    std::vector<QueryTarget> targets;
    for (int i = 0; i < k; ++i) targets.push_back({cont(rng), random_time(rng)});
    const auto mask = build_mask(MaskKind::parallel_v2(n, k), n + 2 * k);
    const auto z0 = model.logits(parallel_v2_input(seq, n, 55.0, Sex::kMale, targets, vocab.pad_token()), mask);
    for (int j = 0; j < k; ++j) {
      auto other = targets;
      do {
        other[static_cast<std::size_t>(j)] = {cont(rng), random_time(rng)};
      } while (other[static_cast<std::size_t>(j)].modality == targets[static_cast<std::size_t>(j)].modality);
      const auto z1 = model.logits(parallel_v2_input(seq, n, 55.0, Sex::kMale, other, vocab.pad_token()), mask);
      for (int i = 0; i < k; ++i) {
        const auto row = static_cast<std::size_t>(parallel_v2_row(n, i));
        if (i == j) {
          if (!rows_equal(z0, z1, row, row)) ++pv_changed;
          continue;
        }
        ++pv_rows;
        if (!rows_equal(z0, z1, row, row)) ++pv_violations;
      }
    }
  }
  return {causal_violations == 0 && pv_violations == 0 && causal_changed > 0 && pv_changed > 0,
          fmt::format("causal: {} violations over {} protected rows (perturbed rows that changed: {}); "
                      "ParallelV2: {} violations over {} other-target rows (perturbed targets that changed: {})",
                      causal_violations, causal_rows, causal_changed, pv_violations, pv_rows, pv_changed)};
}

// ---------------------------------------------------------------------------
// C4: limits of the composite loss.

Outcome loss_limits() {
  const auto vocab = small_vocab();
  std::mt19937_64 rng(4);
  // Soft targets are normalized for every width, bin and bandwidth.
  double worst_sum = 0.0;
  for (int w = 1; w <= 200; ++w) {
    for (double sigma : {0.01, 0.1, 0.5, 1.0, 3.0, 10.0, 1e3}) {
      for (int k = 0; k < w; ++k) {
        const auto q = soft_target(w, k, sigma);
        double s = 0.0;
        for (double v : q) s += v;
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      }
    }
  }
  // sigma = 0.01 against an independent one-hot cross-entropy.
  std::normal_distribution<double> z(0.0, 3.0);
  double worst_ce = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<LossTarget> targets;
    for (int m = 0; m < vocab.modality_count(); ++m) {
      const auto& spec = vocab.modality(m);
      std::uniform_int_distribution<int> b(0, spec.bin_count() - 1);
      const int bin = b(rng);
      targets.push_back({targets.size(), spec.cum_base + bin, m, spec.continuous() ? spec.midpoints[static_cast<std::size_t>(bin)] : 0.0});
    }
    nn::Tensor logits(nn::Shape{targets.size(), static_cast<std::size_t>(vocab.total_tokens())});
    for (auto& v : logits.data()) v = z(rng);
    nn::Tape tape;
    const auto l = range_loss(tape.leaf(logits), targets, vocab, 0.01);
    double oracle = 0.0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
      const auto& spec = vocab.modality(targets[r].modality);
      long double mx = -1e300L;
      for (int i = 0; i < spec.bin_count(); ++i) mx = std::max<long double>(mx, logits.at(r, static_cast<std::size_t>(spec.cum_base + i)));
      long double s = 0.0L;
      for (int i = 0; i < spec.bin_count(); ++i) s += std::exp(static_cast<long double>(logits.at(r, static_cast<std::size_t>(spec.cum_base + i))) - mx);
      oracle += static_cast<double>(mx + std::log(s) - logits.at(r, static_cast<std::size_t>(targets[r].token)));
    }
    oracle /= static_cast<double>(targets.size());
    worst_ce = std::max(worst_ce, std::abs(l.soft.value().item() - oracle));
  }
  // A point mass on the bin whose midpoint is the true value.
  double worst_mae = 0.0;
  for (int m = 0; m < vocab.modality_count(); ++m) {
    const auto& spec = vocab.modality(m);
    if (!spec.continuous()) continue;
    for (int b = 0; b < spec.bin_count(); ++b) {
      nn::Tensor logits(nn::Shape{1, static_cast<std::size_t>(vocab.total_tokens())}, -1e4);
      logits[static_cast<std::size_t>(spec.cum_base + b)] = 0.0;
      const LossTarget t{0, spec.cum_base + b, m, spec.midpoints[static_cast<std::size_t>(b)]};
      nn::Tape tape;
      const auto l = range_loss(tape.leaf(logits), std::span(&t, 1), vocab, 0.01);
      worst_mae = std::max(worst_mae, std::abs(l.mae.value().item()));
    }
  }
  return {worst_ce <= 1e-9 && worst_sum <= 1e-12 && worst_mae == 0.0,
          fmt::format("|soft(0.01) - one-hot CE| max {:.2e}; |sum q - 1| max {:.2e}; point-mass MAE max {:.1e}",
                      worst_ce, worst_sum, worst_mae)};
}

// C5: logits stay inside the clamp and expectations inside the midpoint hull.
Outcome clamp_and_decoding() {
  const auto vocab = small_vocab();
  std::mt19937_64 rng(5);
  double max_abs = 0.0;
  std::size_t logits_checked = 0, decodes = 0, out_of_hull = 0, non_finite = 0;
  for (int trial = 0; trial < 40; ++trial) {
    auto cfg = random_config(vocab, rng);
    Model model = Model::init(cfg, 9000 + static_cast<std::uint64_t>(trial));
    // Large weights push the pre-clamp logits far beyond the clamp scale.
    perturb_params(model, rng, trial < 20 ? 0.5 : 5.0);
    std::uniform_int_distribution<int> len(1, 20);
    const auto seq = random_sequence(len(rng), vocab, rng);
    const auto in = ForwardInput::from_sequence(seq, 60.0, Sex::kUnknown);
    const auto z = model.logits(in, build_mask(MaskKind::causal(), in.size()));
    for (double v : z.data()) {
      if (!std::isfinite(v)) ++non_finite;
      max_abs = std::max(max_abs, std::abs(v));
      ++logits_checked;
    }
    for (std::size_t r = 0; r < z.rows(); ++r) {
      std::span<const double> row(z.ptr() + r * z.cols(), z.cols());
      for (int m = 0; m < vocab.modality_count(); ++m) {
        const auto& spec = vocab.modality(m);
        if (!spec.continuous()) continue;
        const double e = decode_expected(row, vocab, m);
        const auto [lo, hi] = std::minmax_element(spec.midpoints.begin(), spec.midpoints.end());
        ++decodes;
        if (!(e >= *lo && e <= *hi)) ++out_of_hull;
      }
    }
  }
  // Adversarial raw logit rows straight into the decoder.
  std::uniform_real_distribution<double> wild(-1e6, 1e6);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> row(static_cast<std::size_t>(vocab.total_tokens()));
    for (double& v : row) v = wild(rng);
    for (int m = 0; m < vocab.modality_count(); ++m) {
      const auto& spec = vocab.modality(m);
      if (!spec.continuous()) continue;
      const double e = decode_expected(row, vocab, m);
      const auto [lo, hi] = std::minmax_element(spec.midpoints.begin(), spec.midpoints.end());
      ++decodes;
      if (!(e >= *lo && e <= *hi)) ++out_of_hull;
    }
  }
  return {max_abs < 50.0 && non_finite == 0 && out_of_hull == 0,
          fmt::format("max |logit| {:.17g} over {} logits ({} non-finite); {} of {} expectations outside the midpoint hull",
                      max_abs, logits_checked, non_finite, out_of_hull, decodes)};
}

// ---------------------------------------------------------------------------
// C6-C8 share one desk-scale model.

struct Desk {
  GeneratedCohort cohort;
  Vocabulary vocab;
  TrainConfig config;
  std::vector<EncodedParticipant> train, val;
  TrainResult result;
  double seconds = 0.0;
};

Desk train_desk(const fs::path& config_path) {
  Desk d;
  d.cohort = generate(GeneratorConfig::desk_default(7));
  d.vocab = build_vocabulary(collect_raw_modalities(d.cohort.records));
  d.config = TrainConfig::load(config_path);
  const auto all = encode(d.cohort.records, d.vocab);
  std::tie(d.train, d.val) = split_train_val(all, d.config.val_fraction, d.config.seed);
  note(fmt::format("training desk model: {} train / {} validation participants, {} steps, config hash {}",
                   d.train.size(), d.val.size(), d.config.steps, d.config.hash()));
  const auto t0 = Clock::now();
  d.result = train(d.train, d.val, d.vocab, d.config, [&](const TrainRecord& r) {
    if (r.val_loss && r.step % 500 == 0) {
      note(fmt::format("step {:4d}  train {:.4f}  val {:.4f}  ({:.0f} s)", r.step, r.loss.total, *r.val_loss,
                       seconds_since(t0)));
    }
  });
  d.seconds = seconds_since(t0);
  return d;
}

Outcome crossmodal_recovery(const Desk& d) {
  const int x = d.vocab.index_of("x");
  const int y = d.vocab.index_of("y");
  const auto curve = crossmodal_sweep(d.result.best, d.vocab, x, y);
  std::vector<double> got, planted;
  for (const auto& p : curve) {
    got.push_back(p.expected);
    planted.push_back(d.cohort.truth.conditional_mean("y", "x", p.input));
  }
  const double r = pearson(got, planted);
  // Validation loss on the full split, from the same initialization train() starts from.
  const auto init = Model::init(d.config.model_config(d.vocab), d.config.seed);
  const double l0 = evaluate_loss(init, d.val, d.vocab, d.config.loss).total;
  const double l1 = evaluate_loss(d.result.best, d.val, d.vocab, d.config.loss).total;
  note(fmt::format("validation loss {:.4f} -> {:.4f} ({:.1f}% drop; >= 30% expected of the desk run)", l0, l1,
                   100.0 * (1.0 - l1 / l0)));
  const auto ntp = eval_within_visit(d.result.best, d.val, d.vocab);
  if (const auto* m = ntp.find("y"); m && m->correlation) {
    note(fmt::format("within-visit next-token r on planted modality y: {:.3f}", m->correlation->r));
  }
  return {r >= 0.9 && d.seconds <= 1200.0,
          fmt::format("Pearson(E[y|x] curve, planted 2x) = {:.4f} over {} bins; training {:.0f} s on one core",
                      r, curve.size(), d.seconds)};
}

Outcome intervention_recovery(const Desk& d) {
  const int ldl = d.vocab.index_of("ldl");
  const int tsh = d.vocab.index_of("tsh");
  const int med = d.vocab.index_of("medication");
  const auto statin = InterventionSpec::append(med, d.vocab.modality(med).category_index("statin"), 1, 24, "statin");
  const double planted = 100.0 * GeneratorConfig::desk_default().interventions.at(0).effect_fraction;
  const double tsh_sd = d.vocab.modality(tsh).train_sd;
  int sign_hits = 0, magnitude_hits = 0, control_hits = 0;
  double worst_control = 0.0;
  std::string effects;
  for (int s = 0; s < 10; ++s) {
    auto gc = GeneratorConfig::desk_default(1000 + static_cast<std::uint64_t>(s));
    gc.n_participants = 200;
    const auto cohort = generate(gc);
    const auto pop = encode(visit1_only(cohort.records, gc), d.vocab);
    ArmOptions o;
    o.horizon_months = gc.visit_gap_months;
    o.seed = static_cast<std::uint64_t>(s);
    const auto arm = simulate_arms(d.result.best, pop, statin, d.vocab, ldl, o);
    const auto neg = simulate_arms(d.result.best, pop, statin, d.vocab, tsh, o);
    if (std::signbit(arm.signed_percent) == std::signbit(planted) && arm.signed_percent != 0.0) ++sign_hits;
    if (std::abs(arm.signed_percent - planted) <= 0.5 * std::abs(planted)) ++magnitude_hits;
    const double ctrl = std::abs(neg.mean_delta) / tsh_sd;
    worst_control = std::max(worst_control, ctrl);
    if (ctrl < 0.05) ++control_hits;
    effects += fmt::format("{}{:.1f}", effects.empty() ? "" : ", ", arm.signed_percent);
  }
  note(fmt::format("ldl signed effect % per seed: {}", effects));
  return {sign_hits * 100 >= 95 * 10 && magnitude_hits == 10 && control_hits == 10,
          fmt::format("sign correct {}/10, within +-50% of {:.0f}% in {}/10, negative control (tsh) |delta| < 5% sd "
                      "in {}/10 (worst {:.2f}% of sd)",
                      sign_hits, planted, magnitude_hits, control_hits, 100.0 * worst_control)};
}

Outcome longitudinal_ordering(const Desk& d) {
  const std::vector<BaselineKind> kinds{BaselineKind::kLocf, BaselineKind::kLinear};
  const auto rep = eval_longitudinal(d.result.best, d.val, d.vocab, kinds, d.train);
  const auto* row = rep.find("drift");
  if (row == nullptr) return {false, "no drift row in the longitudinal report"};
  const double locf = row->baselines.at("locf").r;
  note(fmt::format("drift: n={} model r={:.3f} locf r={:.3f} linear r={:.3f}", row->n, row->model.r, locf,
                   row->baselines.at("linear").r));
  return {row->model.r - locf >= 0.05,
          fmt::format("model V2 r {:.3f} vs LOCF {:.3f} (margin {:+.3f}) on the drifting modality, n = {}",
                      row->model.r, locf, row->model.r - locf, row->n)};
}

// ---------------------------------------------------------------------------
// C9: statistics against independent evaluations.

Outcome statistics_oracles() {
  using mp = boost::multiprecision::cpp_bin_float_50;
  // Data with sample correlation 0.5 (to rounding) over 103 pairs.
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  const std::size_t n = 103;
  std::vector<double> x(n), e(n);
  for (auto& v : x) v = g(rng);
  for (auto& v : e) v = g(rng);
  auto center_scale = [](std::vector<double>& v) {
    double m = 0;
    for (double a : v) m += a;
    m /= static_cast<double>(v.size());
    double ss = 0;
    for (double& a : v) {
      a -= m;
      ss += a * a;
    }
    for (double& a : v) a /= std::sqrt(ss);
  };
  center_scale(x);
  double proj = 0;
  for (std::size_t i = 0; i < n; ++i) proj += x[i] * e[i];
  for (std::size_t i = 0; i < n; ++i) e[i] -= proj * x[i];
  center_scale(e);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 0.5 * x[i] + std::sqrt(0.75) * e[i];
  const auto c = pearson_with_ci(x, y);
  const mp zr = boost::multiprecision::atanh(mp(1) / 2);
  const mp se = mp(1) / boost::multiprecision::sqrt(mp(100));
  const double lo196 = static_cast<double>(boost::multiprecision::tanh(zr - mp("1.96") * se));
  const double hi = static_cast<double>(boost::multiprecision::tanh(zr + mp("1.96") * se));
  const double ci_err = std::max(std::abs(c.ci_low - lo196), std::abs(c.ci_high - hi));
  note(fmt::format("Fisher-Z CI r=0.5 n=103: ({:.12f}, {:.12f}) vs oracle ({:.12f}, {:.12f})", c.ci_low, c.ci_high,
                   lo196, hi));

  // Benjamini-Hochberg against the definition, every p-vector over a grid.
  const std::vector<double> grid{0.0004, 0.0061, 0.0133, 0.0262, 0.0391, 0.31};
  std::size_t bh_cases = 0, bh_failures = 0;
  for (std::size_t m = 1; m <= 8; ++m) {
    std::vector<std::size_t> idx(m, 0);
    while (true) {
      std::vector<double> p(m);
      for (std::size_t i = 0; i < m; ++i) p[i] = grid[idx[i]];
      // Largest k with p_(k) <= k q / m; reject every p <= p_(k).
      std::vector<double> s = p;
      std::sort(s.begin(), s.end());
      double cut = -1.0;
      for (std::size_t k = 1; k <= m; ++k) {
        if (s[k - 1] <= static_cast<double>(k) * 0.05 / static_cast<double>(m)) cut = s[k - 1];
      }
      const auto got = bh_fdr(p, 0.05);
      for (std::size_t i = 0; i < m; ++i) {
        if (static_cast<bool>(got[i]) != (p[i] <= cut)) {
          ++bh_failures;
          break;
        }
      }
      ++bh_cases;
      std::size_t pos = 0;
      while (pos < m && ++idx[pos] == grid.size()) idx[pos++] = 0;
      if (pos == m) break;
    }
  }

  // Student t two-sided p-values against Boost's regularized incomplete beta.
  const std::vector<std::pair<double, double>> fixtures{
      {0.0, 5},    {0.5, 3},     {1.0, 1},    {1.96, 1000}, {2.0, 10},    {-2.5, 20},  {3.0, 2},
      {0.1, 100},  {4.0, 30},    {-1.3, 7},   {10.0, 50},   {6.5, 101},   {2.2, 4.5},  {0.75, 12},
      {-3.3, 15},  {1.5, 200},   {5.0, 8},    {25.0, 98},   {0.01, 1},    {-7.0, 3}};
  double worst_t = 0.0;
  for (const auto& [t, df] : fixtures) {
    const double oracle = boost::math::ibeta(df / 2.0, 0.5, df / (df + t * t));
    const double got = student_t_two_sided_p(t, df);
    worst_t = std::max(worst_t, std::abs(got - oracle) / std::max(oracle, 1e-300));
  }
  return {ci_err <= 1e-9 && bh_failures == 0 && worst_t <= 1e-9,
          fmt::format("Fisher-Z CI error {:.2e}; BH-FDR mismatches {}/{} exhaustive cases (m <= 8); "
                      "t p-value max relative error {:.2e} over {} fixtures",
                      ci_err, bh_failures, bh_cases, worst_t, fixtures.size())};
}

// C10: concordance scorer on the published comparison rows.
Outcome concordance_fixture(const fs::path& path) {
  const auto j = nlohmann::json::parse(read_bytes(path));
  std::vector<ConcordanceRow> rows;
  for (const auto& r : j.at("rows")) {
    ConcordanceRow c;
    c.name = r.at("name").get<std::string>();
    c.predicted = r.at("predicted").get<double>();
    c.published = {r.at("point").get<double>(), r.at("ci_low").get<double>(), r.at("ci_high").get<double>()};
    rows.push_back(c);
  }
  const auto rep = concordance(rows);
  return {rep.n == 41 && rep.direction_hits == 41 && rep.ci_hits == 30,
          fmt::format("{} rows: {} direction hits, {} CI hits", rep.n, rep.direction_hits, rep.ci_hits)};
}

// C11: truncated-normal sample means against numerical integration.
Outcome truncated_normal() {
  struct Fixture {
    double mean, sd, low, high;
  };
  const std::vector<Fixture> fixtures{
      {50, 10, 18, 90}, {130, 30, 130, 250}, {5.7, 0.8, 4.0, 6.4}, {27, 5, 30, 45}, {0, 1, -0.5, 3.0}};
  std::string detail;
  bool ok = true;
  std::mt19937_64 rng(11);
  constexpr int kDraws = 20000;
  for (const auto& f : fixtures) {
    auto pdf = [&](double x) {
      const double z = (x - f.mean) / f.sd;
      return std::exp(-0.5 * z * z);
    };
    using boost::math::quadrature::gauss_kronrod;
    const double z0 = gauss_kronrod<double, 61>::integrate(pdf, f.low, f.high, 15, 1e-14);
    const double z1 = gauss_kronrod<double, 61>::integrate([&](double x) { return x * pdf(x); }, f.low, f.high, 15, 1e-14);
    const double z2 =
        gauss_kronrod<double, 61>::integrate([&](double x) { return x * x * pdf(x); }, f.low, f.high, 15, 1e-14);
    const double mu = z1 / z0;
    const double sd = std::sqrt(z2 / z0 - mu * mu);
    TruncatedNormal sampler(f.mean, f.sd, f.low, f.high);
    double s = 0.0;
    for (int i = 0; i < kDraws; ++i) {
      const double v = sampler(rng);
      if (v < f.low || v > f.high) ok = false;
      s += v;
    }
    const double mean = s / kDraws;
    const double se = sd / std::sqrt(static_cast<double>(kDraws));
    const double zscore = (mean - mu) / se;
    if (std::abs(zscore) > 2.0) ok = false;
    detail += fmt::format("{}N({},{})[{},{}]: {:.4f} vs {:.4f} ({:+.2f} SE)", detail.empty() ? "" : "; ", f.mean,
                          f.sd, f.low, f.high, mean, mu, zscore);
  }
  return {ok, detail};
}

// C12: same seed, same bytes.
Outcome determinism(const fs::path& work) {
  fs::create_directories(work);
  auto run_once = [&](const std::string& tag, int workers) {
    std::map<std::string, std::string> h;
    auto gcfg = GeneratorConfig::desk_default(7);
    gcfg.n_participants = 80;
    const auto g = generate(gcfg);
    write_cohort(work / (tag + "_cohort.jsonl"), g.records);
    h["cohort"] = sha1_hex(read_bytes(work / (tag + "_cohort.jsonl")));
    h["truth"] = sha1_hex(g.truth.to_json());
    const auto vocab = build_vocabulary(collect_raw_modalities(g.records));
    h["vocab"] = sha1_hex(vocab.to_json());
    TrainConfig tc;
    tc.steps = 30;
    tc.batch_size = 4;
    tc.eval_every = 10;
    tc.warmup_steps = 5;
    tc.workers = workers;
    tc.seed = 42;
    const auto all = encode(g.records, vocab);
    const auto [tr, va] = split_train_val(all, tc.val_fraction, tc.seed);
    const auto res = train(tr, va, vocab, tc);
    CheckpointMeta meta{vocab.fingerprint(), tc.seed, tc.hash(), std::string(kVersion), {}};
    save_checkpoint(work / (tag + ".ckpt"), res.best, meta);
    h["checkpoint"] = sha1_hex(read_bytes(work / (tag + ".ckpt")));
    const ReportMeta rm{std::string(kVersion), tc.seed, tc.hash(), hex64(vocab.fingerprint())};
    h["ntp_report"] = sha1_hex(eval_within_visit(res.best, va, vocab, workers).to_csv(rm));
    const std::vector<BaselineKind> kinds{BaselineKind::kLocf, BaselineKind::kLinear};
    h["longitudinal_report"] = sha1_hex(eval_longitudinal(res.best, va, vocab, kinds, tr, workers).to_csv(rm));
    const int med = vocab.index_of("medication");
    ArmOptions o;
    o.seed = 3;
    o.workers = workers;
    const auto arm = simulate_arms(res.best, va, InterventionSpec::append(med, 0, 2, 6, "statin"), vocab,
                                   vocab.index_of("ldl"), o);
    h["arm_report"] = sha1_hex(arm_to_csv(arm, rm));
    return h;
  };
  const auto a = run_once("a", 1);
  const auto b = run_once("b", 1);
  const auto c = run_once("c", 2);
  std::size_t equal = 0, equal_workers = 0;
  for (const auto& [k, v] : a) {
    if (b.at(k) == v) ++equal;
    if (c.at(k) == v) {
      ++equal_workers;
    } else {
      note(fmt::format("{} differs between 1 and 2 workers", k));
    }
  }
  note(fmt::format("checkpoint sha1 {}", a.at("checkpoint")));
  return {equal == a.size() && equal_workers == a.size(),
          fmt::format("{}/{} artifacts byte-identical across reruns (cohort, truth, vocab, checkpoint, 3 reports); "
                      "{}/{} identical with 2 workers",
                      equal, a.size(), equal_workers, a.size())};
}

}  // namespace

int main(int argc, char** argv) {
  // Usage: acceptance [source-dir [criterion-id ...]]
  const fs::path source = argc > 1 ? fs::path(argv[1]) : fs::path(TRAJLM_SOURCE_DIR);
  for (int i = 2; i < argc; ++i) g_only.insert(argv[i]);
  const fs::path work = fs::temp_directory_path() / fmt::format("trajlm_acceptance_{}", ::getpid());
  const auto t0 = Clock::now();

  run("C1", "gradient fidelity", gradient_fidelity);
  run("C2", "tokenizer oracle equivalence", tokenizer_oracle);
  run("C3", "mask correctness", mask_correctness);
  run("C4", "loss limits", loss_limits);
  run("C5", "clamp and decoding bounds", clamp_and_decoding);

  std::optional<Desk> desk;
  if (selected("C6") || selected("C7") || selected("C8")) {
    try {
      desk = train_desk(source / "configs" / "desk.cfg");
    } catch (const std::exception& e) {
      note(fmt::format("desk training failed: {}", e.what()));
    }
  }
  auto with_desk = [&](Outcome (*f)(const Desk&)) {
    return [&desk, f]() -> Outcome {
      if (!desk) return {false, "desk model unavailable"};
      return f(*desk);
    };
  };
  run("C6", "planted cross-modal recovery", with_desk(crossmodal_recovery));
  run("C7", "planted intervention recovery", with_desk(intervention_recovery));
  run("C8", "longitudinal baseline ordering", with_desk(longitudinal_ordering));
  run("C9", "statistics oracles", statistics_oracles);
  run("C10", "concordance scorer fixture",
      [&] { return concordance_fixture(source / "tests" / "acceptance" / "concordance_fixture.json"); });
  run("C11", "truncated-normal sampler", truncated_normal);
  run("C12", "determinism", [&] { return determinism(work); });

  std::error_code ec;
  fs::remove_all(work, ec);
  std::size_t passed = 0;
  for (const auto& [id, o] : g_results) passed += o.pass ? 1 : 0;
  std::printf("acceptance: %zu/%zu criteria passed in %.0f s\n", passed, g_results.size(), seconds_since(t0));
  return passed == g_results.size() ? 0 : 1;
}
