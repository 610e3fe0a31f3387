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
#include <string>
#include <vector>

#include "trajlm/corpus.h"

namespace trajlm {

/// One measured channel of the generator. Continuous values follow
///   x = mean + loading * s + drift(age) * years_since_v1 + noise
/// where s ~ N(0, 1) is the participant's latent state and
/// drift(age) = drift_per_year + age_drift_per_year * (age - 50) / 10.
struct PlannedModality {
  std::string name;
  ModalityKind kind = ModalityKind::kContinuous;
  double mean = 0.0;
  double loading = 0.0;
  double noise_sd = 0.0;
  double drift_per_year = 0.0;
  double age_drift_per_year = 0.0;
  /// Probability the channel is measured at a visit.
  double presence = 1.0;
  /// Categorical only.
  std::vector<std::string> categories;
  std::vector<double> category_probs;
};

/// Treated participants receive `category` tokens of `trigger_modality`
/// at `tokens_per_month` from the last visit-1 measurement until visit 2;
/// after `onset_months` the target shifts by effect_fraction times its
/// untreated value.
struct InterventionRule {
  std::string trigger_modality;
  std::string category;
  std::string target_modality;
  double effect_fraction = -0.2;
  double onset_months = 0.0;
  int tokens_per_month = 1;
};

/// Categorical channel that adds `shift` to a continuous channel when it
/// takes `category`.
struct CategoricalEffect {
  std::string source_modality;
  std::string category;
  std::string target_modality;
  double shift = 0.0;
};

struct GeneratorConfig {
  int n_participants = 500;
  std::vector<PlannedModality> modalities;
  std::vector<InterventionRule> interventions;
  std::vector<CategoricalEffect> categorical_effects;
  /// Untreated participants who instead receive the placebo category of the
  /// first rule's trigger modality, at the same schedule.
  std::string placebo_category;
  double placebo_fraction = 0.5;
  /// Assigned systematically along the latent ranking, so treated and
  /// untreated groups have matching latent distributions.
  double treated_fraction = 0.5;
  double visit_gap_months = 24.0;
  int n_visits = 2;
  double age_min = 30.0;
  double age_max = 70.0;
  int first_year = 2018;
  int last_year = 2020;
  std::uint64_t seed = 7;

  /// The planted desk-scale plan: 12 continuous and 2 categorical channels.
  static GeneratorConfig desk_default(std::uint64_t seed = 7);
  void validate() const;
};

struct ParticipantTruth {
  std::string id;
  double latent = 0.0;
  bool treated = false;
  /// Untreated (counterfactual) mean of each intervention target at each
  /// visit after the first, keyed by rule index.
  std::vector<double> untreated_target;
  /// Planted treatment delta on each rule's target at visit 2.
  std::vector<double> planted_delta;
};

struct GroundTruth {
  GeneratorConfig config;
  std::vector<ParticipantTruth> participants;

  /// Analytic E[out | in = x] at visit 1 for two continuous channels.
  double conditional_mean(const std::string& out, const std::string& in, double x) const;
  /// Analytic slope of E[out | in].
  double conditional_slope(const std::string& out, const std::string& in) const;
  /// Analytic visit-1 correlation between two continuous channels.
  double correlation(const std::string& a, const std::string& b) const;
  std::string to_json() const;
};

struct GeneratedCohort {
  std::vector<ParticipantRecord> records;
  GroundTruth truth;
};

/// Deterministic in config.seed; participant i draws from its own
/// substream, so results do not depend on generation order.
GeneratedCohort generate(const GeneratorConfig& config);

/// The generated cohort restricted to visit-1 measurements, without dosing
/// tokens: the context an intervention simulation starts from.
std::vector<ParticipantRecord> visit1_only(const std::vector<ParticipantRecord>& records,
                                           const GeneratorConfig& config);

}  // namespace trajlm
