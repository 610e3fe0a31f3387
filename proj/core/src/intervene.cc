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

#include "trajlm/intervene.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "trajlm/common.h"
#include "trajlm/parallel.h"
#include "trajlm/stats.h"

namespace trajlm {
namespace {

using json = nlohmann::json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct FrequencyName {
  std::string_view name;
  int tokens_per_month;
};
constexpr std::array<FrequencyName, 10> kFrequencyNames = {{{"monthly", 1},
                                                           {"bi-weekly", 2},
                                                           {"weekly", 3},
                                                           {"twice-per-week", 4},
                                                           {"every-3-days", 6},
                                                           {"every-2-days", 8},
                                                           {"daily", 10},
                                                           {"twice-daily", 15},
                                                           {"three-times-daily", 20},
                                                           {"three-times-weekly", kThreeTimesWeekly}}};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("missing file '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(std::string_view text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(fmt::format("malformed JSON in {}: {}", what, e.what()));
  }
}

template <typename T>
T field(const json& j, const char* key, std::string_view what) {
  if (!j.contains(key)) throw Error(fmt::format("{}: missing field '{}'", what, key));
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(fmt::format("{}: field '{}' has the wrong type", what, key));
  }
}

DateTime last_time(const TokenSequence& ctx, int year_base) {
  const auto n = static_cast<std::size_t>(ctx.size());
  return datetime_of(ctx.times[n == 0 ? 0 : n - 1], year_base);
}

// Number of doses strictly before `months` after the schedule start.
int doses_before(const InterventionSpec& spec, double months) {
  const double limit = months * spec.frequency;
  int n = static_cast<int>(std::ceil(limit - 1e-9));
  return std::clamp(n, 0, spec.token_count());
}

// Applies every spec: scales first, then all append schedules merged in
// time order. `max_months` keeps only doses strictly before that many
// months after the context's last position.
TokenSequence apply_all(const TokenSequence& context, std::span<const InterventionSpec> specs,
                        const Vocabulary& vocab, int year_base, std::optional<double> max_months,
                        std::optional<int> max_doses = std::nullopt) {
  std::set<int> scaled;
  for (const auto& s : specs) {
    s.validate(vocab);
    if (s.kind != InterventionSpec::Kind::kContinuousScale) continue;
    for (int m : s.scale_modalities) {
      if (!scaled.insert(m).second) {
        throw Error(fmt::format("conflicting scale interventions on modality '{}'", vocab.modality(m).name));
      }
    }
  }
  TokenSequence out = context;
  const int n = context.size();
  for (const auto& s : specs) {
    if (s.kind != InterventionSpec::Kind::kContinuousScale || s.factor == 1.0) continue;
    for (int p = 0; p < n; ++p) {
      const auto u = static_cast<std::size_t>(p);
      if (std::find(s.scale_modalities.begin(), s.scale_modalities.end(), out.modalities[u]) ==
          s.scale_modalities.end()) {
        continue;
      }
      out.values[u] *= s.factor;
      out.tokens[u] = encode_value(vocab, out.modalities[u], out.values[u]);
    }
  }

  const DateTime start = last_time(context, year_base);
  std::vector<Dose> doses;
  for (const auto& s : specs) {
    if (s.kind != InterventionSpec::Kind::kCategoricalAppend) continue;
    auto sched = dosing_schedule(s, vocab, start);
    int keep = static_cast<int>(sched.size());
    if (max_months) keep = std::min(keep, doses_before(s, *max_months));
    if (max_doses) keep = std::min(keep, *max_doses);
    doses.insert(doses.end(), sched.begin(), sched.begin() + keep);
  }
  if (doses.empty()) return out;
  std::stable_sort(doses.begin(), doses.end(), [](const Dose& a, const Dose& b) { return a.time < b.time; });
  const int slot_modality = out.modalities.back();
  const TimeFeatures slot_time = out.times.back();
  out.modalities.pop_back();
  out.times.pop_back();
  for (const auto& d : doses) {
    out.tokens.push_back(d.token);
    out.values.push_back(0.0);
    out.modalities.push_back(decode_token(vocab, d.token).modality);
    out.times.push_back(time_features(d.time, false, year_base));
  }
  out.modalities.push_back(slot_modality);
  out.times.push_back(slot_time);
  out.visit_boundary = out.size();
  return out;
}

std::vector<TokenSequence> contexts_of(std::span<const EncodedParticipant> cohort) {
  std::vector<TokenSequence> out;
  out.reserve(cohort.size());
  for (const auto& p : cohort) out.push_back(visit1_context(p.seq));
  return out;
}

std::vector<std::optional<DateTime>> query_times(std::span<const TokenSequence> contexts,
                                                 double horizon_months, int year_base) {
  std::vector<std::optional<DateTime>> out;
  for (const auto& c : contexts) {
    if (c.size() == 0) {
      out.emplace_back();
    } else {
      out.emplace_back(last_time(c, year_base).plus_months(horizon_months));
    }
  }
  return out;
}

std::vector<double> predict_at(const Model& model, std::span<const EncodedParticipant> cohort,
                               std::span<const TokenSequence> contexts,
                               std::span<const std::optional<DateTime>> times, const Vocabulary& vocab,
                               int outcome, int workers) {
  std::vector<double> out(contexts.size(), kNaN);
  const int yb = model.config().year_base;
  parallel_for(contexts.size(), workers, [&](std::size_t i) {
    if (!times[i] || contexts[i].size() == 0) return;
    TokenSequence ctx = contexts[i];
    ctx.modalities.back() = outcome;
    ctx.times.back() = time_features(*times[i], false, yb);
    const int n = ctx.size();
    const auto in = ForwardInput::from_sequence(ctx, cohort[i].age, cohort[i].sex);
    const auto logits = model.logits(in, build_mask(MaskKind::causal(), n),
                                     {static_cast<std::size_t>(n - 1)});
    out[i] = decode_expected(logits.data(), vocab, outcome);
  });
  return out;
}

void check_outcome(const Vocabulary& vocab, int outcome, double horizon) {
  if (outcome < 0 || outcome >= vocab.modality_count()) throw Error("outcome modality out of range");
  if (!vocab.modality(outcome).continuous()) {
    throw Error(fmt::format("outcome '{}' is categorical; arms need a continuous outcome",
                            vocab.modality(outcome).name));
  }
  if (!(horizon > 0.0 && horizon <= 24.0)) {
    throw Error(fmt::format("horizon {} months outside (0, 24]", horizon));
  }
}

}  // namespace

int parse_frequency(std::string_view text) {
  for (const auto& f : kFrequencyNames) {
    if (f.name == text) return f.tokens_per_month;
  }
  int v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(fmt::format("unknown dosing frequency '{}'", text));
  }
  return v;
}

InterventionSpec InterventionSpec::append(int modality, int category, int frequency, int duration,
                                          std::string label) {
  InterventionSpec s;
  s.kind = Kind::kCategoricalAppend;
  s.modality = modality;
  s.category = category;
  s.frequency = frequency;
  s.duration = duration;
  s.label = std::move(label);
  return s;
}

InterventionSpec InterventionSpec::scale(std::vector<int> modalities, double factor, std::string label) {
  InterventionSpec s;
  s.kind = Kind::kContinuousScale;
  s.scale_modalities = std::move(modalities);
  s.factor = factor;
  s.label = std::move(label);
  return s;
}

void InterventionSpec::validate(const Vocabulary& vocab) const {
  auto check_modality = [&](int m) {
    if (m < 0 || m >= vocab.modality_count()) {
      throw Error(fmt::format("intervention '{}': modality id {} out of range", label, m));
    }
  };
  if (kind == Kind::kCategoricalAppend) {
    check_modality(modality);
    const auto& spec = vocab.modality(modality);
    if (spec.continuous()) {
      throw Error(fmt::format("intervention '{}': append target '{}' is continuous", label, spec.name));
    }
    if (category < 0 || category >= spec.bin_count()) {
      throw Error(fmt::format("intervention '{}': category index {} outside '{}' (0..{})", label,
                              category, spec.name, spec.bin_count() - 1));
    }
    if (frequency != kThreeTimesWeekly &&
        std::find(kDosingFrequencies.begin(), kDosingFrequencies.end(), frequency) == kDosingFrequencies.end()) {
      throw Error(fmt::format("intervention '{}': frequency {} is not a dosing-grid level", label, frequency));
    }
    if (std::find(kDosingDurations.begin(), kDosingDurations.end(), duration) == kDosingDurations.end()) {
      throw Error(fmt::format("intervention '{}': duration {} is not a dosing-grid level", label, duration));
    }
  } else {
    if (!(factor > 0.0) || !std::isfinite(factor)) {
      throw Error(fmt::format("intervention '{}': scale factor must be positive", label));
    }
    for (int m : scale_modalities) {
      check_modality(m);
      if (!vocab.modality(m).continuous()) {
        throw Error(fmt::format("intervention '{}': scale target '{}' is categorical", label,
                                vocab.modality(m).name));
      }
    }
  }
}

std::vector<Dose> dosing_schedule(const InterventionSpec& spec, const Vocabulary& vocab, DateTime start) {
  spec.validate(vocab);
  if (spec.kind != InterventionSpec::Kind::kCategoricalAppend) return {};
  const int token = vocab.modality(spec.modality).cum_base + spec.category;
  std::vector<Dose> out;
  out.reserve(static_cast<std::size_t>(spec.token_count()));
  for (int k = 0; k < spec.token_count(); ++k) {
    out.push_back({token, start.plus_months(static_cast<double>(k) / spec.frequency)});
  }
  return out;
}

TokenSequence visit1_context(const TokenSequence& seq) { return seq.prefix(seq.visit_boundary); }

TokenSequence apply_intervention(const TokenSequence& context, const InterventionSpec& spec,
                                 const Vocabulary& vocab, int year_base, std::optional<int> max_doses) {
  return apply_all(context, std::span(&spec, 1), vocab, year_base, std::nullopt, max_doses);
}

std::vector<double> predict_outcome(const Model& model, std::span<const EncodedParticipant> cohort,
                                    std::span<const TokenSequence> contexts, const Vocabulary& vocab,
                                    int outcome, double horizon_months, int workers) {
  if (cohort.size() != contexts.size()) throw Error("predict_outcome: cohort and contexts differ in length");
  const auto times = query_times(contexts, horizon_months, model.config().year_base);
  return predict_at(model, cohort, contexts, times, vocab, outcome, workers);
}

ArmResult make_arm(std::string label, std::span<const EncodedParticipant> cohort,
                   std::vector<double> control, std::vector<double> treatment,
                   const ArmOptions& options) {
  ArmResult arm;
  arm.label = std::move(label);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (!std::isfinite(control[i]) || !std::isfinite(treatment[i])) continue;
    arm.ids.push_back(cohort[i].id);
    arm.control.push_back(control[i]);
    arm.treatment.push_back(treatment[i]);
    arm.delta.push_back(treatment[i] - control[i]);
  }
  if (arm.ids.empty()) throw Error(fmt::format("arm '{}': no participant has a visit-1 context", arm.label));
  arm.mean_control = mean(arm.control);
  arm.mean_treatment = mean(arm.treatment);
  arm.mean_delta = mean(arm.delta);
  if (arm.mean_control == 0.0) throw Error(fmt::format("arm '{}': undefined percent effect (control mean is 0)", arm.label));
  arm.effect_percent = 100.0 * std::abs(arm.mean_treatment - arm.mean_control) / arm.mean_control;
  arm.signed_percent = 100.0 * (arm.mean_treatment - arm.mean_control) / arm.mean_control;

  // Percentile bootstrap of the signed percent effect, resampling participants.
  const std::size_t n = arm.ids.size();
  std::mt19937_64 rng(options.seed ^ fnv1a64(arm.label));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> stats(static_cast<std::size_t>(std::max(1, options.bootstrap_resamples)));
  for (auto& s : stats) {
    double c = 0.0, t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = pick(rng);
      c += arm.control[j];
      t += arm.treatment[j];
    }
    s = c == 0.0 ? 0.0 : 100.0 * (t - c) / c;
  }
  std::sort(stats.begin(), stats.end());
  auto q = [&](double level) {
    const double h = (static_cast<double>(stats.size()) - 1.0) * level;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, stats.size() - 1);
    return stats[lo] + (h - static_cast<double>(lo)) * (stats[hi] - stats[lo]);
  };
  arm.ci_low = q(0.025);
  arm.ci_high = q(0.975);
  return arm;
}

ArmResult simulate_arms(const Model& model, std::span<const EncodedParticipant> cohort,
                        const InterventionSpec& spec, const Vocabulary& vocab, int outcome,
                        const ArmOptions& options) {
  check_outcome(vocab, outcome, options.horizon_months);
  spec.validate(vocab);
  const int yb = model.config().year_base;
  const auto ctrl_ctx = contexts_of(cohort);
  const auto times = query_times(ctrl_ctx, options.horizon_months, yb);
  std::vector<TokenSequence> treat_ctx;
  treat_ctx.reserve(ctrl_ctx.size());
  for (const auto& c : ctrl_ctx) {
    treat_ctx.push_back(c.size() == 0 ? c : apply_all(c, std::span(&spec, 1), vocab, yb, options.horizon_months));
  }
  auto control = predict_at(model, cohort, ctrl_ctx, times, vocab, outcome, options.workers);
  auto treatment = predict_at(model, cohort, treat_ctx, times, vocab, outcome, options.workers);
  return make_arm(spec.label, cohort, std::move(control), std::move(treatment), options);
}

std::optional<EligibilityRule> default_rule(std::string_view modality_name, const Vocabulary& vocab) {
  struct Row {
    std::string_view name;
    EligibilityRule::Comparator cmp;
    double threshold;
  };
  using C = EligibilityRule::Comparator;
  static constexpr std::array<Row, 9> kRules = {{{"ldl", C::kAtLeast, 130.0},
                                                 {"sbp", C::kAtLeast, 140.0},
                                                 {"dbp", C::kAtLeast, 90.0},
                                                 {"glucose", C::kAtLeast, 100.0},
                                                 {"hba1c", C::kAtLeast, 5.7},
                                                 {"hdl", C::kAtMost, 40.0},
                                                 {"tg", C::kAtLeast, 150.0},
                                                 {"bmi", C::kAtLeast, 30.0},
                                                 {"vitd", C::kAtMost, 20.0}}};
  for (const auto& r : kRules) {
    if (r.name != modality_name) continue;
    const auto m = vocab.find(modality_name);
    if (!m) return std::nullopt;
    return EligibilityRule{*m, r.cmp, r.threshold};
  }
  return std::nullopt;
}

EligibilityResult filter_eligible(const Model& model, std::span<const EncodedParticipant> cohort,
                                  const EligibilityRule& rule, const Vocabulary& vocab, int outcome,
                                  double horizon_months, int workers) {
  check_outcome(vocab, outcome, horizon_months);
  if (!std::isfinite(rule.threshold)) throw Error("eligibility threshold must be finite");
  const auto ctx = contexts_of(cohort);
  const auto control = predict_outcome(model, cohort, ctx, vocab, outcome, horizon_months, workers);
  EligibilityResult res;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    std::optional<double> baseline;
    for (int p = 0; p < ctx[i].size(); ++p) {
      if (ctx[i].modalities[static_cast<std::size_t>(p)] == rule.modality) baseline = ctx[i].values[static_cast<std::size_t>(p)];
    }
    if (!baseline) {
      ++res.missing_modality;
    } else if (!rule.satisfied(*baseline)) {
      ++res.failed_baseline;
    } else if (!std::isfinite(control[i]) || !rule.satisfied(control[i])) {
      ++res.failed_prediction;
    } else {
      res.eligible.push_back(cohort[i]);
    }
  }
  return res;
}

std::vector<TrajectoryPoint> trajectory(const Model& model, std::span<const EncodedParticipant> cohort,
                                        const InterventionSpec& spec, const Vocabulary& vocab,
                                        int outcome, int months, int workers) {
  if (months < 1 || months > 24) throw Error("trajectory months must be in [1, 24]");
  check_outcome(vocab, outcome, months);
  spec.validate(vocab);
  const int yb = model.config().year_base;
  const auto ctrl_ctx = contexts_of(cohort);
  std::vector<TrajectoryPoint> out;
  for (int t = 1; t <= months; ++t) {
    const auto times = query_times(ctrl_ctx, t, yb);
    std::vector<TokenSequence> treat_ctx;
    for (const auto& c : ctrl_ctx) {
      treat_ctx.push_back(c.size() == 0 ? c : apply_all(c, std::span(&spec, 1), vocab, yb, static_cast<double>(t)));
    }
    const auto control = predict_at(model, cohort, ctrl_ctx, times, vocab, outcome, workers);
    const auto treatment = predict_at(model, cohort, treat_ctx, times, vocab, outcome, workers);
    std::vector<double> delta;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      if (std::isfinite(control[i]) && std::isfinite(treatment[i])) delta.push_back(treatment[i] - control[i]);
    }
    if (delta.empty()) throw Error("trajectory: no participant has a visit-1 context");
    TrajectoryPoint pt{t, mean(delta), 0.0};
    if (delta.size() > 1) pt.sem = sample_sd(delta) / std::sqrt(static_cast<double>(delta.size()));
    out.push_back(pt);
  }
  return out;
}

FourArmResult four_arm(const Model& model, std::span<const EncodedParticipant> cohort,
                       const InterventionSpec& a, const InterventionSpec& b, const Vocabulary& vocab,
                       int outcome, const ArmOptions& options) {
  check_outcome(vocab, outcome, options.horizon_months);
  const std::array<InterventionSpec, 2> both = {a, b};
  const int yb = model.config().year_base;
  const auto ctrl_ctx = contexts_of(cohort);
  const auto times = query_times(ctrl_ctx, options.horizon_months, yb);
  auto edited = [&](std::span<const InterventionSpec> specs) {
    std::vector<TokenSequence> out;
    for (const auto& c : ctrl_ctx) {
      out.push_back(c.size() == 0 ? c : apply_all(c, specs, vocab, yb, options.horizon_months));
    }
    return out;
  };
  const auto ctx_ab = edited(both);  // validates the combination first
  FourArmResult res;
  res.control = predict_at(model, cohort, ctrl_ctx, times, vocab, outcome, options.workers);
  auto run = [&](std::string label, const std::vector<TokenSequence>& ctx) {
    return make_arm(std::move(label), cohort, res.control,
                    predict_at(model, cohort, ctx, times, vocab, outcome, options.workers), options);
  };
  res.a = run(a.label.empty() ? "A" : a.label, edited(std::span(&a, 1)));
  res.b = run(b.label.empty() ? "B" : b.label, edited(std::span(&b, 1)));
  res.ab = run(fmt::format("{}+{}", res.a.label, res.b.label), ctx_ab);
  res.interaction = res.ab.signed_percent - res.a.signed_percent - res.b.signed_percent;
  return res;
}

InterventionCatalog InterventionCatalog::parse(std::string_view text) {
  const auto j = parse_json(text, "intervention catalog");
  if (!j.contains("entries") || !j["entries"].is_array()) {
    throw Error("intervention catalog: missing 'entries' array");
  }
  InterventionCatalog c;
  for (const auto& e : j["entries"]) {
    CatalogEntry entry;
    entry.label = field<std::string>(e, "label", "catalog entry");
    entry.modality = field<std::string>(e, "modality", entry.label);
    entry.category_index = field<int>(e, "category_index", entry.label);
    if (e.contains("frequency")) {
      entry.frequency = e["frequency"].is_string() ? parse_frequency(e["frequency"].get<std::string>())
                                                   : e["frequency"].get<int>();
    }
    if (c.contains(entry.label)) throw Error(fmt::format("intervention catalog: duplicate label '{}'", entry.label));
    c.entries_.push_back(std::move(entry));
  }
  return c;
}

InterventionCatalog InterventionCatalog::load(const std::filesystem::path& path) {
  return parse(read_file(path));
}

bool InterventionCatalog::contains(std::string_view label) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const CatalogEntry& e) { return e.label == label; });
}

const CatalogEntry& InterventionCatalog::get(std::string_view label) const {
  for (const auto& e : entries_) {
    if (e.label == label) return e;
  }
  throw Error(fmt::format("intervention catalog has no entry '{}'", label));
}

InterventionSpec parse_intervention(const std::string& text, const Vocabulary& vocab,
                                    const InterventionCatalog* catalog) {
  const auto j = parse_json(text, "intervention");
  const auto kind = field<std::string>(j, "kind", "intervention");
  const std::string label = j.value("label", std::string());
  auto modality_id = [&](const std::string& name) {
    const auto m = vocab.find(name);
    if (!m) throw Error(fmt::format("intervention '{}': modality '{}' is not in the vocabulary", label, name));
    return *m;
  };
  InterventionSpec spec;
  if (kind == "append") {
    int m = 0, cat = 0;
    std::optional<int> freq;
    std::string lbl = label;
    if (j.contains("catalog")) {
      if (!catalog) throw Error(fmt::format("intervention '{}' names a catalog entry but no catalog was given", label));
      const auto& e = catalog->get(field<std::string>(j, "catalog", "intervention"));
      m = modality_id(e.modality);
      cat = e.category_index;
      freq = e.frequency;
      if (lbl.empty()) lbl = e.label;
    } else {
      m = modality_id(field<std::string>(j, "modality", "intervention"));
      if (j.contains("category")) {
        const auto name = field<std::string>(j, "category", "intervention");
        cat = vocab.modality(m).category_index(name);
        if (cat < 0) {
          throw Error(fmt::format("intervention '{}': '{}' is not a category of '{}'", label, name, vocab.modality(m).name));
        }
      } else {
        cat = field<int>(j, "category_index", "intervention");
      }
      if (lbl.empty() && cat >= 0 && static_cast<std::size_t>(cat) < vocab.modality(m).categories.size()) {
        lbl = vocab.modality(m).categories[static_cast<std::size_t>(cat)];
      }
    }
    if (j.contains("frequency")) {
      freq = j["frequency"].is_string() ? parse_frequency(j["frequency"].get<std::string>())
                                        : field<int>(j, "frequency", "intervention");
    }
    if (!freq) throw Error(fmt::format("intervention '{}': missing field 'frequency'", lbl));
    spec = InterventionSpec::append(m, cat, *freq, field<int>(j, "duration", "intervention"), lbl);
  } else if (kind == "scale") {
    std::vector<int> mods;
    for (const auto& n : field<std::vector<std::string>>(j, "modalities", "intervention")) mods.push_back(modality_id(n));
    double factor = 1.0;
    if (j.contains("factor")) {
      factor = field<double>(j, "factor", "intervention");
    } else {
      factor = 1.0 - field<double>(j, "reduction_percent", "intervention") / 100.0;
    }
    std::string lbl = label;
    if (lbl.empty()) {
      for (int m : mods) lbl += (lbl.empty() ? "" : "+") + vocab.modality(m).name;
      lbl += fmt::format(" x{:g}", factor);
    }
    spec = InterventionSpec::scale(std::move(mods), factor, lbl);
  } else {
    throw Error(fmt::format("intervention '{}': unknown kind '{}' (expected append or scale)", label, kind));
  }
  spec.validate(vocab);
  return spec;
}

TrialSpec TrialSpec::parse(std::string_view text) {
  const auto j = parse_json(text, "trial spec");
  TrialSpec s;
  s.name = field<std::string>(j, "name", "trial spec");
  const std::string what = fmt::format("trial '{}'", s.name);
  if (!j.contains("table1") || !j["table1"].is_array()) throw Error(what + ": missing 'table1' array");
  for (const auto& v : j["table1"]) {
    s.table1.push_back({field<std::string>(v, "modality", what), field<double>(v, "mean", what),
                        field<double>(v, "sd", what), field<double>(v, "low", what),
                        field<double>(v, "high", what)});
  }
  if (!j.contains("arms") || !j["arms"].is_array()) throw Error(what + ": missing 'arms' array");
  for (const auto& a : j["arms"]) s.arms.push_back(a.dump());
  s.outcome = field<std::string>(j, "outcome", what);
  s.horizon_months = field<double>(j, "horizon_months", what);
  if (!j.contains("published")) throw Error(what + ": missing field 'published'");
  const auto& p = j["published"];
  s.published = {field<double>(p, "point", what), field<double>(p, "ci_low", what), field<double>(p, "ci_high", what)};
  s.n = j.value("n", 200);
  s.female_fraction = j.value("female_fraction", 0.5);
  s.validate();
  return s;
}

TrialSpec TrialSpec::load(const std::filesystem::path& path) {
  try {
    return parse(read_file(path));
  } catch (const Error& e) {
    throw Error(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void TrialSpec::validate() const {
  const std::string what = fmt::format("trial '{}'", name);
  if (n < 1) throw Error(what + ": n must be positive");
  if (arms.empty() || arms.size() > 2) throw Error(what + ": needs 1 (two-arm) or 2 (four-arm) interventions");
  if (!(horizon_months > 0.0 && horizon_months <= 24.0)) throw Error(what + ": horizon_months outside (0, 24]");
  if (!(published.ci_low <= published.point && published.point <= published.ci_high)) {
    throw Error(what + ": published interval must satisfy ci_low <= point <= ci_high");
  }
  if (!(female_fraction >= 0.0 && female_fraction <= 1.0)) throw Error(what + ": female_fraction outside [0, 1]");
  for (const auto& v : table1) {
    if (!(v.low < v.high)) throw Error(fmt::format("{}: variable '{}' needs low < high", what, v.modality));
    if (!(v.sd >= 0.0)) throw Error(fmt::format("{}: variable '{}' needs sd >= 0", what, v.modality));
  }
}

TruncatedNormal::TruncatedNormal(double mean, double sd, double low, double high)
    : mean_(mean), sd_(sd), low_(low), high_(high), mass_(1.0) {
  if (!(low < high)) throw Error("truncated normal needs low < high");
  if (!(sd >= 0.0)) throw Error("truncated normal needs sd >= 0");
  if (sd == 0.0) {
    if (mean < low || mean > high) throw Error("infeasible truncation: degenerate mean outside the bounds");
    return;
  }
  auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0))); };
  mass_ = cdf(high) - cdf(low);
  if (mass_ < 1e-3) {
    throw Error(fmt::format("infeasible truncation: [{}, {}] holds {:.3g} of N({}, {}^2)", low, high, mass_, mean, sd));
  }
}

double TruncatedNormal::operator()(std::mt19937_64& rng) const {
  if (sd_ == 0.0) return mean_;
  std::normal_distribution<double> normal(mean_, sd_);
  for (;;) {
    const double x = normal(rng);
    if (x >= low_ && x <= high_) return x;
  }
}

std::vector<ParticipantRecord> sample_trial_population(const TrialSpec& spec, std::mt19937_64& rng,
                                                       DateTime visit) {
  spec.validate();
  std::vector<TruncatedNormal> samplers;
  for (const auto& v : spec.table1) samplers.emplace_back(v.mean, v.sd, v.low, v.high);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ParticipantRecord> out;
  out.reserve(static_cast<std::size_t>(spec.n));
  for (int i = 0; i < spec.n; ++i) {
    ParticipantRecord r;
    r.id = fmt::format("{}-{:04d}", spec.name, i);
    r.age = 50.0;
    r.sex = unit(rng) < spec.female_fraction ? Sex::kFemale : Sex::kMale;
    r.visits = {visit};
    for (std::size_t v = 0; v < spec.table1.size(); ++v) {
      const double x = samplers[v](rng);
      if (spec.table1[v].modality == "age") {
        r.age = x;
      } else {
        r.events.push_back({visit.plus_minutes(static_cast<std::int64_t>(v)), spec.table1[v].modality, x, false});
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

ConcordanceReport concordance(std::span<const ConcordanceRow> rows) {
  auto sign = [](double x) { return (x > 0.0) - (x < 0.0); };
  ConcordanceReport rep;
  for (auto row : rows) {
    const int s = sign(row.predicted);
    row.direction_hit = s != 0 && s == sign(row.published.point);
    row.ci_hit = row.published.ci_low <= row.predicted && row.predicted <= row.published.ci_high;
    rep.direction_hits += row.direction_hit ? 1 : 0;
    rep.ci_hits += row.ci_hit ? 1 : 0;
    rep.rows.push_back(std::move(row));
  }
  rep.n = rep.rows.size();
  return rep;
}

TrialResult run_trial(const Model& model, const Vocabulary& vocab, const TrialSpec& spec,
                      std::uint64_t seed, const InterventionCatalog* catalog, int workers) {
  spec.validate();
  const int outcome = vocab.index_of(spec.outcome);
  std::vector<InterventionSpec> arms;
  for (const auto& a : spec.arms) arms.push_back(parse_intervention(a, vocab, catalog));
  std::mt19937_64 rng(seed ^ fnv1a64(spec.name));
  const auto records = sample_trial_population(spec, rng);
  std::vector<EncodedParticipant> cohort;
  cohort.reserve(records.size());
  for (const auto& r : records) {
    cohort.push_back(encode_participant(r, vocab, model.config().max_seq_len, model.config().year_base));
  }
  ArmOptions opt;
  opt.horizon_months = spec.horizon_months;
  opt.seed = seed ^ fnv1a64(spec.name);
  opt.workers = workers;
  TrialResult res;
  res.name = spec.name;
  res.n = cohort.size();
  if (arms.size() == 1) {
    res.primary = simulate_arms(model, cohort, arms[0], vocab, outcome, opt);
    res.arms = {res.primary};
  } else {
    auto four = four_arm(model, cohort, arms[0], arms[1], vocab, outcome, opt);
    res.primary = four.ab;
    res.arms = {four.a, four.b, four.ab};
  }
  ConcordanceRow row{spec.name, res.primary.signed_percent, spec.published, false, false};
  res.score = concordance(std::span(&row, 1)).rows.front();
  return res;
}

std::string trials_to_csv(std::span<const TrialResult> trials, const ReportMeta& meta) {
  std::string out = fmt::format("# library_version={} seed={} config_hash={} vocab_fingerprint={}\n",
                                meta.library_version, meta.seed, meta.config_hash, meta.vocab_fingerprint);
  out += "trial,n,predicted_percent,ci_low,ci_high,published_point,published_ci_low,published_ci_high,direction_hit,ci_hit\n";
  std::size_t dir = 0, ci = 0;
  for (const auto& t : trials) {
    out += fmt::format("{},{},{:.6g},{:.6g},{:.6g},{:.6g},{:.6g},{:.6g},{},{}\n", t.name, t.n,
                       t.primary.signed_percent, t.primary.ci_low, t.primary.ci_high, t.score.published.point,
                       t.score.published.ci_low, t.score.published.ci_high, t.score.direction_hit ? 1 : 0,
                       t.score.ci_hit ? 1 : 0);
    dir += t.score.direction_hit ? 1 : 0;
    ci += t.score.ci_hit ? 1 : 0;
  }
  out += fmt::format("# direction_hits={}/{} ci_hits={}/{}\n", dir, trials.size(), ci, trials.size());
  return out;
}

std::string arm_to_csv(const ArmResult& arm, const ReportMeta& meta) {
  std::string out = fmt::format("# library_version={} seed={} config_hash={} vocab_fingerprint={}\n",
                                meta.library_version, meta.seed, meta.config_hash, meta.vocab_fingerprint);
  out += fmt::format(
      "# arm={} n={} mean_control={:.6g} mean_treatment={:.6g} mean_delta={:.6g} effect_percent={:.6g} "
      "signed_percent={:.6g} ci_low={:.6g} ci_high={:.6g}\n",
      arm.label, arm.ids.size(), arm.mean_control, arm.mean_treatment, arm.mean_delta, arm.effect_percent,
      arm.signed_percent, arm.ci_low, arm.ci_high);
  out += "id,control,treatment,delta\n";
  for (std::size_t i = 0; i < arm.ids.size(); ++i) {
    out += fmt::format("{},{:.9g},{:.9g},{:.9g}\n", arm.ids[i], arm.control[i], arm.treatment[i], arm.delta[i]);
  }
  return out;
}

}  // namespace trajlm
