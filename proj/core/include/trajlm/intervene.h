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

#include "trajlm/corpus.h"
#include "trajlm/eval.h"
#include "trajlm/model.h"
#include "trajlm/vocab.h"

namespace trajlm {

/// Allowed tokens-per-month and duration levels of the dosing grid.
inline constexpr std::array<int, 9> kDosingFrequencies = {1, 2, 3, 4, 6, 8, 10, 15, 20};
inline constexpr std::array<int, 9> kDosingDurations = {1, 2, 3, 4, 6, 9, 12, 18, 24};
/// Exercise level "three-times-weekly". It is accepted outside the grid and
/// encodes more tokens per month than "daily"; callers should flag it.
inline constexpr int kThreeTimesWeekly = 12;

/// Frequency level by name ("monthly", "bi-weekly", "weekly",
/// "twice-per-week", "every-3-days", "every-2-days", "daily", "twice-daily",
/// "three-times-daily", "three-times-weekly"), or a plain integer.
int parse_frequency(std::string_view text);

struct InterventionSpec {
  enum class Kind { kCategoricalAppend, kContinuousScale };
  Kind kind = Kind::kContinuousScale;
  std::string label;
  // Append.
  int modality = 0;
  int category = 0;
  int frequency = 1;
  int duration = 1;
  // Scale.
  std::vector<int> scale_modalities;
  double factor = 1.0;

  static InterventionSpec append(int modality, int category, int frequency, int duration,
                                 std::string label = {});
  static InterventionSpec scale(std::vector<int> modalities, double factor, std::string label = {});

  int token_count() const { return frequency * duration; }
  /// Grid membership, factor > 0, ids inside the vocabulary, kinds match.
  void validate(const Vocabulary& vocab) const;
};

struct Dose {
  int token = 0;
  DateTime time;
};

/// f * d tokens at start + k / f months, k = 0 .. f * d - 1.
std::vector<Dose> dosing_schedule(const InterventionSpec& spec, const Vocabulary& vocab,
                                  DateTime start);

/// Visit-1 context of a sequence: positions before the visit boundary.
TokenSequence visit1_context(const TokenSequence& seq);

/// Edits a visit-1 context. Append adds the dosing tokens after the last
/// context position (the schedule starts at that position's time); Scale
/// multiplies every targeted value and re-bins its token. `max_doses`
/// truncates an append schedule.
TokenSequence apply_intervention(const TokenSequence& context, const InterventionSpec& spec,
                                 const Vocabulary& vocab, int year_base = kDefaultYearBase,
                                 std::optional<int> max_doses = std::nullopt);

struct ArmOptions {
  double horizon_months = 12.0;
  int bootstrap_resamples = 1000;
  std::uint64_t seed = 0;
  int workers = 1;
};

/// Expected value of `outcome` queried `horizon_months` after the last
/// position of each context, from the causal last row. Participants with an
/// empty context get NaN.
std::vector<double> predict_outcome(const Model& model, std::span<const EncodedParticipant> cohort,
                                    std::span<const TokenSequence> contexts, const Vocabulary& vocab,
                                    int outcome, double horizon_months, int workers = 1);

struct ArmResult {
  std::string label;
  std::vector<std::string> ids;
  std::vector<double> control;
  std::vector<double> treatment;
  std::vector<double> delta;
  double mean_control = 0.0;
  double mean_treatment = 0.0;
  double mean_delta = 0.0;
  /// 100 * |mean_treatment - mean_control| / mean_control.
  double effect_percent = 0.0;
  /// Same, keeping the sign of mean_delta.
  double signed_percent = 0.0;
  /// Percentile bootstrap interval of signed_percent over participants.
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Paired arms from precomputed control predictions.
ArmResult make_arm(std::string label, std::span<const EncodedParticipant> cohort,
                   std::vector<double> control, std::vector<double> treatment,
                   const ArmOptions& options);

ArmResult simulate_arms(const Model& model, std::span<const EncodedParticipant> cohort,
                        const InterventionSpec& spec, const Vocabulary& vocab, int outcome,
                        const ArmOptions& options = {});

struct EligibilityRule {
  enum class Comparator { kAtLeast, kAtMost };
  int modality = 0;
  Comparator comparator = Comparator::kAtLeast;
  double threshold = 0.0;

  bool satisfied(double value) const {
    return comparator == Comparator::kAtLeast ? value >= threshold : value <= threshold;
  }
};

/// Default clinical thresholds by modality name (ldl >= 130, sbp >= 140,
/// dbp >= 90, glucose >= 100, hba1c >= 5.7, hdl <= 40, tg >= 150,
/// bmi >= 30, vitd <= 20); nullopt when the name has no default or the
/// vocabulary lacks it.
std::optional<EligibilityRule> default_rule(std::string_view modality_name, const Vocabulary& vocab);

struct EligibilityResult {
  std::vector<EncodedParticipant> eligible;
  std::size_t missing_modality = 0;
  std::size_t failed_baseline = 0;
  std::size_t failed_prediction = 0;
};

/// Keeps participants whose last visit-1 value of the rule's modality and
/// whose control-arm prediction of `outcome` both satisfy the rule.
EligibilityResult filter_eligible(const Model& model, std::span<const EncodedParticipant> cohort,
                                  const EligibilityRule& rule, const Vocabulary& vocab,
                                  int outcome, double horizon_months, int workers = 1);

struct TrajectoryPoint {
  int month = 0;
  double mean_delta = 0.0;
  double sem = 0.0;
};

/// Month t = 1..months: treatment carries the dosing tokens of the first t
/// months and is queried at month t, control is queried at the same t.
std::vector<TrajectoryPoint> trajectory(const Model& model,
                                        std::span<const EncodedParticipant> cohort,
                                        const InterventionSpec& spec, const Vocabulary& vocab,
                                        int outcome, int months = 12, int workers = 1);

struct FourArmResult {
  std::vector<double> control;
  ArmResult a;
  ArmResult b;
  ArmResult ab;
  /// effect(A+B) - effect(A) - effect(B), signed percent.
  double interaction = 0.0;
};

FourArmResult four_arm(const Model& model, std::span<const EncodedParticipant> cohort,
                       const InterventionSpec& a, const InterventionSpec& b,
                       const Vocabulary& vocab, int outcome, const ArmOptions& options = {});

/// Maps intervention labels to (modality, category index) pairs.
struct CatalogEntry {
  std::string label;
  std::string modality;
  int category_index = 0;
  std::optional<int> frequency;
};

class InterventionCatalog {
 public:
  static InterventionCatalog parse(std::string_view json);
  static InterventionCatalog load(const std::filesystem::path& path);
  const CatalogEntry& get(std::string_view label) const;
  bool contains(std::string_view label) const;
  const std::vector<CatalogEntry>& entries() const { return entries_; }

 private:
  std::vector<CatalogEntry> entries_;
};

/// Parses one arm object:
///   {"kind":"append","modality":"medication","category":"statin",
///    "frequency":"daily","duration":12}
///   {"kind":"append","catalog":"rosuvastatin","duration":12}
///   {"kind":"scale","modalities":["ldl"],"factor":0.7}
InterventionSpec parse_intervention(const std::string& json, const Vocabulary& vocab,
                                    const InterventionCatalog* catalog = nullptr);

struct TrialVariable {
  std::string modality;  // "age" sets the participant age
  double mean = 0.0;
  double sd = 0.0;
  double low = 0.0;
  double high = 0.0;
};

struct PublishedEffect {
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct TrialSpec {
  std::string name;
  std::vector<TrialVariable> table1;
  int n = 200;
  /// Raw arm objects; resolved against a vocabulary by run_trial.
  std::vector<std::string> arms;
  std::string outcome;
  double horizon_months = 12.0;
  PublishedEffect published;
  double female_fraction = 0.5;

  static TrialSpec parse(std::string_view json);
  static TrialSpec load(const std::filesystem::path& path);
  void validate() const;
};

/// Rejection sample from N(mean, sd) truncated to [low, high]. Throws
/// "infeasible truncation" when the interval holds < 0.1% of the mass.
class TruncatedNormal {
 public:
  TruncatedNormal(double mean, double sd, double low, double high);
  double operator()(std::mt19937_64& rng) const;
  double mass() const { return mass_; }

 private:
  double mean_, sd_, low_, high_, mass_;
};

/// Single-visit records, one event per non-age table-1 variable at a fixed
/// visit date.
std::vector<ParticipantRecord> sample_trial_population(const TrialSpec& spec, std::mt19937_64& rng,
                                                       DateTime visit = DateTime::from_civil(2020, 1, 15, 9, 0));

struct ConcordanceRow {
  std::string name;
  double predicted = 0.0;  // signed percent
  PublishedEffect published;
  bool direction_hit = false;
  bool ci_hit = false;
};

struct ConcordanceReport {
  std::vector<ConcordanceRow> rows;
  std::size_t direction_hits = 0;
  std::size_t ci_hits = 0;
  std::size_t n = 0;
};

/// Sign agreement (sign(0) matches nothing) and published-interval
/// containment of each predicted point.
ConcordanceReport concordance(std::span<const ConcordanceRow> rows);

struct TrialResult {
  std::string name;
  std::size_t n = 0;
  std::vector<ArmResult> arms;  // 1 arm, or A, B, A+B
  ArmResult primary;            // the arm scored against the published effect
  ConcordanceRow score;
};

TrialResult run_trial(const Model& model, const Vocabulary& vocab, const TrialSpec& spec,
                      std::uint64_t seed, const InterventionCatalog* catalog = nullptr,
                      int workers = 1);

std::string trials_to_csv(std::span<const TrialResult> trials, const ReportMeta& meta);
std::string arm_to_csv(const ArmResult& arm, const ReportMeta& meta);

}  // namespace trajlm
