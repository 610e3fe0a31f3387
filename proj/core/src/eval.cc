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

#include "trajlm/eval.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "trajlm/common.h"
#include "trajlm/parallel.h"

namespace trajlm {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::span<const double> row_of(const nn::Tensor& t, std::size_t r) {
  return t.data().subspan(r * t.cols(), t.cols());
}

void check_row(std::span<const double> logits, const Vocabulary& vocab, int modality) {
  if (modality < 0 || modality >= vocab.modality_count()) {
    throw Error(fmt::format("modality id {} out of range", modality));
  }
  if (logits.size() < static_cast<std::size_t>(vocab.total_tokens())) {
    throw Error(fmt::format("logit row has {} entries, vocabulary needs {}", logits.size(),
                            vocab.total_tokens()));
  }
}

std::optional<Correlation> try_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() < 4) return std::nullopt;
  try {
    return pearson_with_ci(x, y);
  } catch (const Error&) {
    return std::nullopt;  // zero variance: r undefined
  }
}

nlohmann::ordered_json meta_json(const ReportMeta& meta) {
  return {{"library_version", meta.library_version},
          {"seed", meta.seed},
          {"config_hash", meta.config_hash},
          {"vocab_fingerprint", meta.vocab_fingerprint}};
}

std::string csv_preamble(const ReportMeta& meta) {
  return fmt::format("# library_version={} seed={} config_hash={} vocab_fingerprint={}\n",
                     meta.library_version, meta.seed, meta.config_hash, meta.vocab_fingerprint);
}

std::string num(double v) { return fmt::format("{:.6g}", v); }

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

nlohmann::ordered_json correlation_json(const Correlation& c) {
  return {{"n", c.n}, {"r", c.r}, {"p", c.p}, {"ci_low", c.ci_low}, {"ci_high", c.ci_high}};
}

}  // namespace

std::vector<double> modality_probs(std::span<const double> logits, const Vocabulary& vocab,
                                   int modality) {
  check_row(logits, vocab, modality);
  const auto& spec = vocab.modality(modality);
  const auto a = static_cast<std::size_t>(spec.cum_base);
  const auto k = static_cast<std::size_t>(spec.bin_count());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, logits[a + i]);
  std::vector<double> p(k);
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) z += p[i] = std::exp(logits[a + i] - mx);
  for (auto& v : p) v /= z;
  return p;
}

double decode_expected(std::span<const double> logits, const Vocabulary& vocab, int modality) {
  check_row(logits, vocab, modality);
  const auto& spec = vocab.modality(modality);
  if (!spec.continuous()) {
    throw Error(fmt::format("modality '{}' is categorical: use top-K", spec.name));
  }
  const auto p = modality_probs(logits, vocab, modality);
  double e = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) e += p[i] * spec.midpoints[i];
  // Rounding can leave the sum an ulp outside the midpoint hull.
  const auto [lo, hi] = std::minmax_element(spec.midpoints.begin(), spec.midpoints.end());
  return std::clamp(e, *lo, *hi);
}

std::vector<int> rank_categories(std::span<const double> logits, const Vocabulary& vocab,
                                 int modality) {
  check_row(logits, vocab, modality);
  const auto& spec = vocab.modality(modality);
  std::vector<int> order(static_cast<std::size_t>(spec.bin_count()));
  std::iota(order.begin(), order.end(), 0);
  const auto base = static_cast<std::size_t>(spec.cum_base);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return logits[base + static_cast<std::size_t>(a)] > logits[base + static_cast<std::size_t>(b)];
  });
  return order;
}

bool topk_hit(std::span<const double> logits, int true_category, const Vocabulary& vocab,
              int modality, int k) {
  const auto& spec = vocab.modality(modality);
  if (spec.continuous()) throw Error(fmt::format("modality '{}' is not categorical", spec.name));
  if (k < 1 || k > spec.bin_count()) {
    throw Error(fmt::format("top-{} exceeds the {} categories of '{}'", k, spec.bin_count(), spec.name));
  }
  const auto order = rank_categories(logits, vocab, modality);
  return std::find(order.begin(), order.begin() + k, true_category) != order.begin() + k;
}

double topk_accuracy(const std::vector<std::vector<double>>& logit_rows,
                     std::span<const int> true_categories, const Vocabulary& vocab, int modality,
                     int k) {
  if (logit_rows.size() != true_categories.size()) {
    throw Error("topk_accuracy: rows and labels differ in length");
  }
  if (logit_rows.empty()) throw Error("topk_accuracy: no rows");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logit_rows.size(); ++i) {
    hits += topk_hit(logit_rows[i], true_categories[i], vocab, modality, k) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(logit_rows.size());
}

const ModalityMetric* MetricReport::find(std::string_view modality) const {
  for (const auto& m : modalities) {
    if (m.modality == modality) return &m;
  }
  return nullptr;
}

MetricReport summarize(const Predictions& predictions, const Vocabulary& vocab,
                       const std::map<std::string, std::string>& groups) {
  MetricReport report;
  std::map<std::string, std::vector<double>> by_group;
  for (const auto& [m, set] : predictions) {
    const auto& spec = vocab.modality(m);
    ModalityMetric metric;
    metric.modality = spec.name;
    metric.continuous = spec.continuous();
    metric.n = spec.continuous() ? set.predicted.size() : set.top1_hit.size();
    if (metric.n < 2) continue;
    if (spec.continuous()) {
      metric.correlation = try_correlation(set.predicted, set.actual);
      if (metric.correlation) {
        const auto g = groups.find(spec.name);
        by_group[g == groups.end() ? std::string("continuous") : g->second].push_back(metric.correlation->r);
      }
    } else {
      auto frac = [](const std::vector<char>& hits) {
        return static_cast<double>(std::count(hits.begin(), hits.end(), 1)) /
               static_cast<double>(hits.size());
      };
      metric.top1 = frac(set.top1_hit);
      if (spec.bin_count() >= 5) metric.top5 = frac(set.top5_hit);
    }
    report.modalities.push_back(std::move(metric));
  }
  for (auto& [g, rs] : by_group) {
    report.aggregates.push_back({g, rs.size(), median(rs), mean(rs)});
  }
  return report;
}

std::string MetricReport::to_csv(const ReportMeta& meta) const {
  std::string out = csv_preamble(meta);
  out += "modality,n,r,p,ci_low,ci_high,top1,top5\n";
  for (const auto& m : modalities) {
    const auto& c = m.correlation;
    out += fmt::format("{},{},{},{},{},{},{},{}\n", m.modality, m.n, c ? num(c->r) : "",
                       c ? num(c->p) : "", c ? num(c->ci_low) : "", c ? num(c->ci_high) : "",
                       opt_num(m.top1), opt_num(m.top5));
  }
  return out;
}

std::string MetricReport::to_json(const ReportMeta& meta) const {
  nlohmann::ordered_json j;
  j["meta"] = meta_json(meta);
  auto mods = nlohmann::ordered_json::array();
  for (const auto& m : modalities) {
    nlohmann::ordered_json e;
    e["modality"] = m.modality;
    e["kind"] = m.continuous ? "continuous" : "categorical";
    e["n"] = m.n;
    if (m.correlation) e["correlation"] = correlation_json(*m.correlation);
    if (m.top1) e["top1"] = *m.top1;
    if (m.top5) e["top5"] = *m.top5;
    mods.push_back(e);
  }
  j["modalities"] = mods;
  auto agg = nlohmann::ordered_json::array();
  for (const auto& a : aggregates) {
    agg.push_back({{"group", a.group}, {"count", a.count}, {"median_r", a.median_r}, {"mean_r", a.mean_r}});
  }
  j["aggregates"] = agg;
  return j.dump(2) + "\n";
}

Predictions predict_within_visit(const Model& model, std::span<const EncodedParticipant> cohort,
                                 const Vocabulary& vocab, int workers) {
  std::vector<Predictions> local(cohort.size());
  parallel_for(cohort.size(), workers, [&](std::size_t i) {
    const auto& p = cohort[i];
    const int t = p.seq.size();
    if (t < 2) return;
    const auto in = ForwardInput::from_sequence(p.seq, p.age, p.sex);
    const auto logits = model.logits(in, build_mask(MaskKind::causal(), t));
    for (int pos = 0; pos + 1 < t; ++pos) {
      const auto next = static_cast<std::size_t>(pos + 1);
      const int token = p.seq.tokens[next];
      if (token == vocab.pad_token()) continue;
      const int m = p.seq.modalities[next];
      const auto& spec = vocab.modality(m);
      const auto row = row_of(logits, static_cast<std::size_t>(pos));
      auto& set = local[i][m];
      set.participant.push_back(i);
      if (spec.continuous()) {
        set.predicted.push_back(decode_expected(row, vocab, m));
        set.actual.push_back(p.seq.values[next]);
      } else {
        const int cat = token - spec.cum_base;
        set.top1_hit.push_back(topk_hit(row, cat, vocab, m, 1) ? 1 : 0);
        set.top5_hit.push_back(topk_hit(row, cat, vocab, m, std::min(5, spec.bin_count())) ? 1 : 0);
      }
    }
  });
  Predictions merged;
  for (auto& part : local) {
    for (auto& [m, set] : part) {
      auto& dst = merged[m];
      dst.predicted.insert(dst.predicted.end(), set.predicted.begin(), set.predicted.end());
      dst.actual.insert(dst.actual.end(), set.actual.begin(), set.actual.end());
      dst.participant.insert(dst.participant.end(), set.participant.begin(), set.participant.end());
      dst.top1_hit.insert(dst.top1_hit.end(), set.top1_hit.begin(), set.top1_hit.end());
      dst.top5_hit.insert(dst.top5_hit.end(), set.top5_hit.begin(), set.top5_hit.end());
    }
  }
  return merged;
}

MetricReport eval_within_visit(const Model& model, std::span<const EncodedParticipant> cohort,
                               const Vocabulary& vocab, int workers) {
  return summarize(predict_within_visit(model, cohort, vocab, workers), vocab);
}

std::vector<VisitPair> visit_pairs(std::span<const EncodedParticipant> cohort,
                                   const Vocabulary& vocab) {
  const auto bmi = vocab.find("bmi");
  std::vector<VisitPair> pairs;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& seq = cohort[i].seq;
    const int b = seq.visit_boundary;
    if (b <= 0 || b >= seq.size()) continue;
    std::map<int, int> last_v1;
    std::optional<int> bmi_token;
    for (int p = 0; p < b; ++p) {
      const auto u = static_cast<std::size_t>(p);
      last_v1[seq.modalities[u]] = p;
      if (bmi && seq.modalities[u] == *bmi) bmi_token = seq.tokens[u];
    }
    std::vector<char> seen(static_cast<std::size_t>(vocab.modality_count()), 0);
    for (int p = b; p < seq.size(); ++p) {
      const auto u = static_cast<std::size_t>(p);
      const int m = seq.modalities[u];
      if (seq.tokens[u] == vocab.pad_token() || seen[static_cast<std::size_t>(m)]) continue;
      seen[static_cast<std::size_t>(m)] = 1;
      VisitPair vp;
      vp.participant = i;
      vp.modality = m;
      vp.v2_time = seq.times[u];
      vp.v2_value = seq.values[u];
      vp.v2_token = seq.tokens[u];
      if (const auto it = last_v1.find(m); it != last_v1.end()) {
        const auto q = static_cast<std::size_t>(it->second);
        vp.v1_value = seq.values[q];
        vp.v1_token = seq.tokens[q];
      }
      vp.age = cohort[i].age;
      vp.sex = cohort[i].sex;
      vp.bmi_token = bmi_token;
      pairs.push_back(vp);
    }
  }
  return pairs;
}

LongitudinalOutput predict_longitudinal(const Model& model,
                                        std::span<const EncodedParticipant> cohort,
                                        std::span<const VisitPair> pairs, const Vocabulary& vocab,
                                        int workers) {
  // Contiguous runs of pairs belonging to one participant.
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j].participant == pairs[i].participant) ++j;
    runs.emplace_back(i, j);
    i = j;
  }
  LongitudinalOutput out;
  out.expected.assign(pairs.size(), kNaN);
  out.top1_hit.assign(pairs.size(), 0);
  out.top5_hit.assign(pairs.size(), 0);
  parallel_for(runs.size(), workers, [&](std::size_t r) {
    const auto [lo, hi] = runs[r];
    const auto& p = cohort[pairs[lo].participant];
    const int n_ctx = p.seq.visit_boundary;
    std::vector<QueryTarget> targets;
    for (std::size_t i = lo; i < hi; ++i) targets.push_back({pairs[i].modality, pairs[i].v2_time});
    const auto in = parallel_v2_input(p.seq, n_ctx, p.age, p.sex, targets, vocab.pad_token());
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      rows.push_back(static_cast<std::size_t>(parallel_v2_row(n_ctx, static_cast<int>(i))));
    }
    const auto mask = build_mask(MaskKind::parallel_v2(n_ctx, static_cast<int>(targets.size())), in.size());
    const auto logits = model.logits(in, mask, rows);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto row = row_of(logits, i - lo);
      const int m = pairs[i].modality;
      const auto& spec = vocab.modality(m);
      if (spec.continuous()) {
        out.expected[i] = decode_expected(row, vocab, m);
      } else {
        const int cat = pairs[i].v2_token - spec.cum_base;
        out.top1_hit[i] = topk_hit(row, cat, vocab, m, 1) ? 1 : 0;
        out.top5_hit[i] = topk_hit(row, cat, vocab, m, std::min(5, spec.bin_count())) ? 1 : 0;
      }
    }
  });
  return out;
}

std::string_view to_string(BaselineKind kind) {
  return kind == BaselineKind::kLocf ? "locf" : "linear";
}

BaselineKind parse_baseline(std::string_view name) {
  if (name == "locf") return BaselineKind::kLocf;
  if (name == "linear") return BaselineKind::kLinear;
  throw Error(fmt::format("unknown baseline '{}' (expected locf or linear)", name));
}

std::vector<double> baseline_predict(BaselineKind kind, std::span<const VisitPair> train,
                                     std::span<const VisitPair> test,
                                     std::vector<std::string>* skipped, const Vocabulary* vocab) {
  std::vector<double> out(test.size(), kNaN);
  if (kind == BaselineKind::kLocf) {
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (test[i].v1_value) out[i] = *test[i].v1_value;
    }
    return out;
  }
  auto features = [](const VisitPair& p) {
    Eigen::Vector<double, 5> f;
    f << 1.0, static_cast<double>(*p.v1_token), p.age, static_cast<double>(static_cast<int>(p.sex)),
        static_cast<double>(p.bmi_token.value_or(0));
    return f;
  };
  auto name_of = [&](int m) { return vocab ? vocab->modality(m).name : fmt::format("modality {}", m); };
  std::map<int, std::vector<const VisitPair*>> by_modality;
  std::size_t missing_bmi = 0;
  for (const auto& p : train) {
    if (!p.v1_token || (vocab && !vocab->modality(p.modality).continuous())) continue;
    by_modality[p.modality].push_back(&p);
    if (!p.bmi_token) ++missing_bmi;
  }
  std::map<int, Eigen::VectorXd> weights;
  for (const auto& [m, rows] : by_modality) {
    if (rows.size() < 5) {
      if (skipped) {
        skipped->push_back(fmt::format("linear: {} skipped ({} training pairs < 5)", name_of(m), rows.size()));
      }
      continue;
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), 5);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = features(*rows[i]).transpose();
      y(static_cast<Eigen::Index>(i)) = rows[i]->v2_value;
    }
    weights[m] = x.colPivHouseholderQr().solve(y);
  }
  if (skipped && missing_bmi > 0) {
    skipped->push_back(fmt::format("linear: bmi token missing for {} training pairs (feature set to 0)", missing_bmi));
  }
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto it = weights.find(test[i].modality);
    if (it == weights.end() || !test[i].v1_token) continue;
    out[i] = features(test[i]).dot(it->second);
  }
  return out;
}

const LongitudinalRow* LongitudinalReport::find(std::string_view modality) const {
  for (const auto& r : comparison) {
    if (r.modality == modality) return &r;
  }
  return nullptr;
}

LongitudinalReport eval_longitudinal(const Model& model,
                                     std::span<const EncodedParticipant> test,
                                     const Vocabulary& vocab,
                                     std::span<const BaselineKind> baselines,
                                     std::span<const EncodedParticipant> train, int workers) {
  LongitudinalReport report;
  const auto pairs = visit_pairs(test, vocab);
  if (pairs.empty()) return report;
  const auto out = predict_longitudinal(model, test, pairs, vocab, workers);

  Predictions preds;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& set = preds[pairs[i].modality];
    set.participant.push_back(pairs[i].participant);
    if (vocab.modality(pairs[i].modality).continuous()) {
      set.predicted.push_back(out.expected[i]);
      set.actual.push_back(pairs[i].v2_value);
    } else {
      set.top1_hit.push_back(out.top1_hit[i]);
      set.top5_hit.push_back(out.top5_hit[i]);
    }
  }
  report.model = summarize(preds, vocab);

  const auto train_pairs = visit_pairs(train, vocab);
  std::vector<std::pair<std::string, std::vector<double>>> base_preds;
  for (const auto kind : baselines) {
    base_preds.emplace_back(std::string(to_string(kind)),
                            baseline_predict(kind, train_pairs, pairs, &report.skipped, &vocab));
  }
  for (int m = 0; m < vocab.modality_count(); ++m) {
    if (!vocab.modality(m).continuous()) continue;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (pairs[i].modality != m || !pairs[i].v1_value) continue;
      const bool all = std::all_of(base_preds.begin(), base_preds.end(),
                                   [&](const auto& b) { return std::isfinite(b.second[i]); });
      if (all) idx.push_back(i);
    }
    if (idx.size() < 4) continue;
    auto gather = [&](auto&& f) {
      std::vector<double> v;
      for (auto i : idx) v.push_back(f(i));
      return v;
    };
    const auto actual = gather([&](std::size_t i) { return pairs[i].v2_value; });
    LongitudinalRow row;
    row.modality = vocab.modality(m).name;
    row.n = idx.size();
    const auto mc = try_correlation(gather([&](std::size_t i) { return out.expected[i]; }), actual);
    if (!mc) {
      report.skipped.push_back(fmt::format("{}: model predictions constant, no comparison", row.modality));
      continue;
    }
    row.model = *mc;
    for (const auto& [name, pred] : base_preds) {
      const auto bc = try_correlation(gather([&](std::size_t i) { return pred[i]; }), actual);
      if (!bc) {
        report.skipped.push_back(fmt::format("{}: {} predictions constant", row.modality, name));
        continue;
      }
      row.baselines[name] = *bc;
      if (std::abs(row.model.r) < 1.0 && std::abs(bc->r) < 1.0) {
        row.versus[name] = fisher_z_compare(row.model.r, bc->r, row.n);
      }
    }
    report.comparison.push_back(std::move(row));
  }
  return report;
}

std::string LongitudinalReport::to_csv(const ReportMeta& meta) const {
  std::vector<std::string> names;
  for (const auto& r : comparison) {
    for (const auto& [n, _] : r.baselines) {
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
    }
  }
  std::string out = csv_preamble(meta);
  out += "modality,n,model_r,model_p,model_ci_low,model_ci_high";
  for (const auto& n : names) out += fmt::format(",{0}_r,{0}_ci_low,{0}_ci_high,z_vs_{0},p_vs_{0}", n);
  out += "\n";
  for (const auto& r : comparison) {
    out += fmt::format("{},{},{},{},{},{}", r.modality, r.n, num(r.model.r), num(r.model.p),
                       num(r.model.ci_low), num(r.model.ci_high));
    for (const auto& n : names) {
      const auto b = r.baselines.find(n);
      const auto v = r.versus.find(n);
      out += fmt::format(",{},{},{},{},{}", b != r.baselines.end() ? num(b->second.r) : "",
                         b != r.baselines.end() ? num(b->second.ci_low) : "",
                         b != r.baselines.end() ? num(b->second.ci_high) : "",
                         v != r.versus.end() ? num(v->second.z) : "",
                         v != r.versus.end() ? num(v->second.p) : "");
    }
    out += "\n";
  }
  return out;
}

std::string LongitudinalReport::to_json(const ReportMeta& meta) const {
  auto j = nlohmann::ordered_json::parse(model.to_json(meta));
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : comparison) {
    nlohmann::ordered_json e;
    e["modality"] = r.modality;
    e["n"] = r.n;
    e["model"] = correlation_json(r.model);
    for (const auto& [n, c] : r.baselines) e["baselines"][n] = correlation_json(c);
    for (const auto& [n, z] : r.versus) e["versus"][n] = {{"z", z.z}, {"p", z.p}};
    rows.push_back(e);
  }
  j["comparison"] = rows;
  j["skipped"] = skipped;
  return j.dump(2) + "\n";
}

std::vector<CurvePoint> crossmodal_sweep(const Model& model, const Vocabulary& vocab, int m_in,
                                         int m_out, const ProbeOptions& options) {
  const auto& in_spec = vocab.modality(m_in);
  const auto& out_spec = vocab.modality(m_out);
  if (!out_spec.continuous()) {
    throw Error(fmt::format("output modality '{}' is categorical: use top-K", out_spec.name));
  }
  const auto tf = time_features(options.time, false, model.config().year_base);
  std::vector<CurvePoint> curve;
  for (int b = 0; b < in_spec.bin_count(); ++b) {
    const auto u = static_cast<std::size_t>(b);
    const double mid = in_spec.continuous() ? in_spec.midpoints[u] : static_cast<double>(b);
    TokenSequence seq;
    seq.tokens = {in_spec.cum_base + b};
    seq.values = {in_spec.continuous() ? mid : 0.0};
    seq.modalities = {m_in, m_out};
    seq.times = {tf, tf};
    seq.visit_boundary = 1;
    const auto in = ForwardInput::from_sequence(seq, options.age, options.sex);
    const auto logits = model.logits(in, build_mask(MaskKind::causal(), 1));
    curve.push_back({mid, decode_expected(row_of(logits, 0), vocab, m_out)});
  }
  return curve;
}

BioAgeResult bioage(const std::vector<std::vector<double>>& embeddings,
                    std::span<const double> ages, double alpha, int folds) {
  const std::size_t n = embeddings.size();
  if (n != ages.size()) throw Error("bioage: embeddings and ages differ in length");
  if (n < 10) throw Error(fmt::format("bioage: need at least 10 participants, got {}", n));
  if (folds < 2 || static_cast<std::size_t>(folds) > n) throw Error("bioage: invalid fold count");
  if (!(alpha >= 0.0)) throw Error("bioage: alpha must be >= 0");
  const auto [amin, amax] = std::minmax_element(ages.begin(), ages.end());
  if (*amin == *amax) throw Error("bioage: chronological ages are constant");
  const std::size_t d = embeddings.front().size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (embeddings[i].size() != d) throw Error("bioage: embeddings have inconsistent width");
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = embeddings[i][j];
    y(static_cast<Eigen::Index>(i)) = ages[i];
  }

  BioAgeResult res;
  res.predicted.assign(n, 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> tr, te;
    for (std::size_t i = 0; i < n; ++i) {
      (static_cast<int>(i % static_cast<std::size_t>(folds)) == f ? te : tr).push_back(static_cast<Eigen::Index>(i));
    }
    const Eigen::MatrixXd xt = x(tr, Eigen::all);
    const Eigen::VectorXd yt = y(tr);
    const Eigen::RowVectorXd xm = xt.colwise().mean();
    const double ym = yt.mean();
    const Eigen::MatrixXd xc = xt.rowwise() - xm;
    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += alpha;
    const Eigen::VectorXd beta = gram.ldlt().solve(xc.transpose() * (yt.array() - ym).matrix());
    for (auto i : te) {
      res.predicted[static_cast<std::size_t>(i)] = ym + (x.row(i) - xm).dot(beta);
    }
  }
  const double ybar = y.mean();
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ss_res += (ages[i] - res.predicted[i]) * (ages[i] - res.predicted[i]);
    ss_tot += (ages[i] - ybar) * (ages[i] - ybar);
  }
  res.r2 = 1.0 - ss_res / ss_tot;

  // Residualize predicted age on chronological age.
  const double pbar = mean(res.predicted);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (ages[i] - ybar) * (res.predicted[i] - pbar);
    sxx += (ages[i] - ybar) * (ages[i] - ybar);
  }
  const double slope = sxy / sxx;
  res.acceleration.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    res.acceleration[i] = res.predicted[i] - (pbar + slope * (ages[i] - ybar));
  }
  return res;
}

}  // namespace trajlm
