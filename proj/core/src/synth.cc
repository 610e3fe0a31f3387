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

#include "trajlm/synth.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "trajlm/common.h"

namespace trajlm {
namespace {

const PlannedModality& planned(const GeneratorConfig& c, const std::string& name) {
  for (const auto& m : c.modalities) {
    if (m.name == name) return m;
  }
  throw Error(fmt::format("generator has no modality '{}'", name));
}

PlannedModality continuous(std::string name, double mean, double loading, double noise,
                           double presence = 1.0) {
  PlannedModality m;
  m.name = std::move(name);
  m.mean = mean;
  m.loading = loading;
  m.noise_sd = noise;
  m.presence = presence;
  return m;
}

}  // namespace

GeneratorConfig GeneratorConfig::desk_default(std::uint64_t seed) {
  GeneratorConfig c;
  c.seed = seed;
  c.modalities = {
      continuous("x", 0.0, 1.0, 0.1),
      continuous("y", 0.0, 2.0, 0.2),
      continuous("ldl", 130.0, 25.0, 8.0),
      continuous("sbp", 125.0, 10.0, 6.0, 0.95),
      continuous("glucose", 95.0, 8.0, 5.0, 0.95),
      continuous("hba1c", 5.5, 0.3, 0.15, 0.95),
      continuous("bmi", 27.0, 3.0, 1.0, 0.95),
      continuous("tg", 140.0, 30.0, 15.0, 0.95),
      continuous("hdl", 55.0, -6.0, 4.0, 0.95),
      continuous("alt", 25.0, 5.0, 4.0, 0.95),
      continuous("drift", 50.0, 3.0, 1.0),
      continuous("tsh", 2.0, 0.5, 0.05),
  };
  auto& drift = c.modalities[10];
  drift.age_drift_per_year = 4.0;
  PlannedModality med;
  med.name = "medication";
  med.kind = ModalityKind::kCategorical;
  med.categories = {"statin", "vitamin"};
  med.presence = 0.0;  // emitted only by the intervention schedule
  PlannedModality smoker;
  smoker.name = "smoker";
  smoker.kind = ModalityKind::kCategorical;
  smoker.categories = {"no", "yes"};
  smoker.category_probs = {0.7, 0.3};
  c.modalities.push_back(med);
  c.modalities.push_back(smoker);
  c.interventions = {{"medication", "statin", "ldl", -0.20, 0.0, 1}};
  c.categorical_effects = {{"smoker", "yes", "sbp", 8.0}};
  c.placebo_category = "vitamin";
  return c;
}

void GeneratorConfig::validate() const {
  if (n_participants <= 0) throw Error("generator: n_participants must be positive");
  if (n_visits < 1) throw Error("generator: n_visits must be >= 1");
  if (!(treated_fraction >= 0.0 && treated_fraction <= 1.0)) {
    throw Error("generator: treated_fraction must be in [0, 1]");
  }
  if (!(age_max >= age_min)) throw Error("generator: age_max must be >= age_min");
  if (last_year < first_year) throw Error("generator: last_year must be >= first_year");
  for (const auto& m : modalities) {
    if (m.noise_sd < 0.0) throw Error(fmt::format("generator: modality '{}' has negative noise", m.name));
    if (m.presence < 0.0 || m.presence > 1.0) {
      throw Error(fmt::format("generator: modality '{}' presence outside [0, 1]", m.name));
    }
    if (m.kind == ModalityKind::kCategorical) {
      if (m.categories.empty()) throw Error(fmt::format("generator: modality '{}' has no categories", m.name));
      if (!m.category_probs.empty() && m.category_probs.size() != m.categories.size()) {
        throw Error(fmt::format("generator: modality '{}' category_probs size mismatch", m.name));
      }
    }
  }
  for (const auto& r : interventions) {
    if (!(r.effect_fraction > -1.0 && r.effect_fraction < 1.0)) {
      throw Error("generator: effect fraction must be in (-1, 1)");
    }
    if (r.tokens_per_month <= 0) throw Error("generator: tokens_per_month must be positive");
    const auto& trig = planned(*this, r.trigger_modality);
    if (std::find(trig.categories.begin(), trig.categories.end(), r.category) == trig.categories.end()) {
      throw Error(fmt::format("generator: '{}' is not a category of '{}'", r.category, r.trigger_modality));
    }
    if (planned(*this, r.target_modality).kind != ModalityKind::kContinuous) {
      throw Error("generator: intervention target must be continuous");
    }
  }
  for (const auto& e : categorical_effects) {
    planned(*this, e.source_modality);
    planned(*this, e.target_modality);
  }
}

GeneratedCohort generate(const GeneratorConfig& config) {
  config.validate();
  GeneratedCohort out;
  out.truth.config = config;
  const int n_days = static_cast<int>(
      (DateTime::from_civil(config.last_year, 12, 31).minutes_since_epoch() -
       DateTime::from_civil(config.first_year, 1, 1).minutes_since_epoch()) /
      (24 * 60));
  const DateTime origin = DateTime::from_civil(config.first_year, 1, 1);

  auto substream = [&](std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed & 0xffffffffu),
                      static_cast<std::uint32_t>(config.seed >> 32), stream};
    return std::mt19937_64(seq);
  };
  const auto n = static_cast<std::size_t>(config.n_participants);

  // Latent states first: treatment is assigned by stratified randomization
  // on the latent so the arms are balanced in size and in health state.
  std::vector<double> latent(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = substream(static_cast<std::uint32_t>(i));
    latent[i] = std::normal_distribution<double>(0.0, 1.0)(rng);
  }
  std::vector<std::size_t> rank(n);
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return latent[a] < latent[b]; });
  std::vector<char> treated(n, 0);
  {
    // Systematic assignment along the latent ranking with a seeded offset.
    auto rng = substream(0xffffffffu);
    const double offset = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    for (std::size_t r = 0; r < n; ++r) {
      const double f = config.treated_fraction;
      treated[rank[r]] = std::floor((static_cast<double>(r) + 1.0) * f + offset) >
                                 std::floor(static_cast<double>(r) * f + offset)
                             ? 1
                             : 0;
    }
  }

  for (int i = 0; i < config.n_participants; ++i) {
    auto rng = substream(static_cast<std::uint32_t>(i));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    ParticipantRecord rec;
    ParticipantTruth truth;
    rec.id = fmt::format("P{:05d}", i);
    truth.id = rec.id;
    const double s = normal(rng);
    truth.latent = s;
    rec.age = std::round((config.age_min + (config.age_max - config.age_min) * unit(rng)) * 10.0) / 10.0;
    rec.sex = unit(rng) < 0.5 ? Sex::kFemale : Sex::kMale;
    truth.treated = treated[static_cast<std::size_t>(i)] != 0;
    const bool placebo = !truth.treated && !config.placebo_category.empty() && unit(rng) < config.placebo_fraction;

    const auto day = static_cast<std::int64_t>(unit(rng) * n_days);
    const DateTime v1 = origin.plus_minutes(day * 24 * 60 + 8 * 60);
    for (int v = 0; v < config.n_visits; ++v) {
      rec.visits.push_back(v1.plus_months(config.visit_gap_months * v));
    }

    // Categorical state first: continuous channels may depend on it.
    std::vector<std::vector<std::string>> cat_values(config.modalities.size(),
                                                     std::vector<std::string>(static_cast<std::size_t>(config.n_visits)));
    for (std::size_t m = 0; m < config.modalities.size(); ++m) {
      const auto& pm = config.modalities[m];
      if (pm.kind != ModalityKind::kCategorical || pm.category_probs.empty()) continue;
      double u = unit(rng);
      std::size_t c = 0;
      while (c + 1 < pm.categories.size() && u >= pm.category_probs[c]) u -= pm.category_probs[c++];
      for (auto& slot : cat_values[m]) slot = pm.categories[c];
    }

    truth.untreated_target.assign(config.interventions.size(), 0.0);
    truth.planted_delta.assign(config.interventions.size(), 0.0);
    DateTime last_v1_event = rec.visits.front();
    std::vector<Event> visit1_events;
    for (int v = 0; v < config.n_visits; ++v) {
      const double years = config.visit_gap_months * v / 12.0;
      for (std::size_t m = 0; m < config.modalities.size(); ++m) {
        const auto& pm = config.modalities[m];
        const bool present = pm.kind == ModalityKind::kCategorical ? !pm.category_probs.empty()
                                                                   : unit(rng) < pm.presence;
        const double noise = normal(rng);
        const auto minute = static_cast<std::int64_t>(unit(rng) * 240.0);
        if (!present) continue;
        Event ev;
        ev.time = rec.visits[static_cast<std::size_t>(v)].plus_minutes(minute);
        ev.modality = pm.name;
        if (pm.kind == ModalityKind::kCategorical) {
          ev.value = cat_values[m][static_cast<std::size_t>(v)];
        } else {
          const double rate = pm.drift_per_year + pm.age_drift_per_year * (rec.age - 50.0) / 10.0;
          double mean = pm.mean + pm.loading * s + rate * years;
          for (const auto& ce : config.categorical_effects) {
            if (ce.target_modality != pm.name) continue;
            const auto src = static_cast<std::size_t>(
                std::find_if(config.modalities.begin(), config.modalities.end(),
                             [&](const PlannedModality& x) { return x.name == ce.source_modality; }) -
                config.modalities.begin());
            if (cat_values[src][static_cast<std::size_t>(v)] == ce.category) mean += ce.shift;
          }
          for (std::size_t r = 0; r < config.interventions.size(); ++r) {
            const auto& rule = config.interventions[r];
            if (rule.target_modality != pm.name || v == 0) continue;
            truth.untreated_target[r] = mean;
            if (truth.treated && config.visit_gap_months * v >= rule.onset_months) {
              truth.planted_delta[r] = rule.effect_fraction * mean;
              mean += truth.planted_delta[r];
            }
          }
          ev.value = mean + pm.noise_sd * noise;
        }
        if (v == 0) last_v1_event = std::max(last_v1_event, ev.time);
        rec.events.push_back(std::move(ev));
      }
    }

    // Dosing tokens: one every 1/tokens_per_month months starting at the
    // last visit-1 measurement, stopping before the second visit.
    if (config.n_visits >= 2) {
      for (std::size_t r = 0; r < config.interventions.size(); ++r) {
        const auto& rule = config.interventions[r];
        std::string category;
        if (truth.treated) {
          category = rule.category;
        } else if (placebo && r == 0) {
          category = config.placebo_category;
        } else {
          continue;
        }
        const int n = static_cast<int>(std::floor(config.visit_gap_months * rule.tokens_per_month));
        for (int k = 0; k < n; ++k) {
          const DateTime t = last_v1_event.plus_months(static_cast<double>(k) / rule.tokens_per_month);
          if (t >= rec.visits[1]) break;
          rec.events.push_back({t, rule.trigger_modality, category, false});
        }
      }
    }
    out.records.push_back(std::move(rec));
    out.truth.participants.push_back(std::move(truth));
  }
  return out;
}

std::vector<ParticipantRecord> visit1_only(const std::vector<ParticipantRecord>& records,
                                           const GeneratorConfig& config) {
  std::vector<std::string> dosing;
  for (const auto& r : config.interventions) dosing.push_back(r.trigger_modality);
  std::vector<ParticipantRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    ParticipantRecord c = r;
    if (c.visits.size() > 1) {
      const DateTime cut = c.visits[1];
      std::erase_if(c.events, [&](const Event& e) { return e.time >= cut; });
      c.visits.resize(1);
    }
    std::erase_if(c.events, [&](const Event& e) {
      return std::find(dosing.begin(), dosing.end(), e.modality) != dosing.end();
    });
    out.push_back(std::move(c));
  }
  return out;
}

double GroundTruth::conditional_slope(const std::string& out, const std::string& in) const {
  const auto& o = planned(config, out);
  const auto& i = planned(config, in);
  const double var_in = i.loading * i.loading + i.noise_sd * i.noise_sd;
  if (var_in == 0.0) throw Error(fmt::format("modality '{}' has zero variance", in));
  return o.loading * i.loading / var_in;
}

double GroundTruth::conditional_mean(const std::string& out, const std::string& in, double x) const {
  return planned(config, out).mean + conditional_slope(out, in) * (x - planned(config, in).mean);
}

double GroundTruth::correlation(const std::string& a, const std::string& b) const {
  const auto& pa = planned(config, a);
  const auto& pb = planned(config, b);
  return pa.loading * pb.loading /
         std::sqrt((pa.loading * pa.loading + pa.noise_sd * pa.noise_sd) *
                   (pb.loading * pb.loading + pb.noise_sd * pb.noise_sd));
}

std::string GroundTruth::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = config.seed;
  j["n_participants"] = config.n_participants;
  j["visit_gap_months"] = config.visit_gap_months;
  auto mods = nlohmann::ordered_json::array();
  for (const auto& m : config.modalities) {
    nlohmann::ordered_json e;
    e["name"] = m.name;
    e["kind"] = std::string(to_string(m.kind));
    if (m.kind == ModalityKind::kContinuous) {
      e["mean"] = m.mean;
      e["loading"] = m.loading;
      e["noise_sd"] = m.noise_sd;
      e["drift_per_year"] = m.drift_per_year;
      e["age_drift_per_year"] = m.age_drift_per_year;
    } else {
      e["categories"] = m.categories;
    }
    mods.push_back(e);
  }
  j["modalities"] = mods;
  auto rules = nlohmann::ordered_json::array();
  for (const auto& r : config.interventions) {
    rules.push_back({{"trigger", r.trigger_modality},
                     {"category", r.category},
                     {"target", r.target_modality},
                     {"effect_fraction", r.effect_fraction},
                     {"onset_months", r.onset_months},
                     {"tokens_per_month", r.tokens_per_month}});
  }
  j["interventions"] = rules;
  auto parts = nlohmann::ordered_json::array();
  for (const auto& p : participants) {
    parts.push_back({{"id", p.id},
                     {"latent", p.latent},
                     {"treated", p.treated},
                     {"untreated_target", p.untreated_target},
                     {"planted_delta", p.planted_delta}});
  }
  j["participants"] = parts;
  return j.dump(1);
}

}  // namespace trajlm
