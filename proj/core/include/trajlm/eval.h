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

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajlm/corpus.h"
#include "trajlm/model.h"
#include "trajlm/stats.h"
#include "trajlm/vocab.h"

namespace trajlm {

/// Softmax restricted to the modality's token range.
std::vector<double> modality_probs(std::span<const double> logits, const Vocabulary& vocab,
                                   int modality);

/// Probability-weighted bin midpoint. Throws "use top-K" for categorical
/// modalities.
double decode_expected(std::span<const double> logits, const Vocabulary& vocab, int modality);

/// Local category indices of the modality ranked by logit, ties broken by
/// the lower token id.
std::vector<int> rank_categories(std::span<const double> logits, const Vocabulary& vocab,
                                 int modality);

/// Whether `true_category` is within the top K of the modality's range.
bool topk_hit(std::span<const double> logits, int true_category, const Vocabulary& vocab,
              int modality, int k);

/// Fraction of rows whose true category is within the top K.
double topk_accuracy(const std::vector<std::vector<double>>& logit_rows,
                     std::span<const int> true_categories, const Vocabulary& vocab, int modality,
                     int k);

/// Provenance stamped into every report.
struct ReportMeta {
  std::string library_version;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string vocab_fingerprint;
};

struct ModalityMetric {
  std::string modality;
  bool continuous = true;
  std::size_t n = 0;
  /// Continuous modalities with n >= 4.
  std::optional<Correlation> correlation;
  /// Categorical modalities; top5 only when the range has at least 5 tokens.
  std::optional<double> top1;
  std::optional<double> top5;
};

struct MetricReport {
  std::vector<ModalityMetric> modalities;
  /// Unweighted median and mean of r per group (default groups:
  /// "continuous"), plus categorical top-1 medians.
  struct Aggregate {
    std::string group;
    std::size_t count = 0;
    double median_r = 0.0;
    double mean_r = 0.0;
  };
  std::vector<Aggregate> aggregates;

  const ModalityMetric* find(std::string_view modality) const;
  std::string to_csv(const ReportMeta& meta) const;
  std::string to_json(const ReportMeta& meta) const;
};

/// Paired predictions for one modality, in participant order.
struct PredictionSet {
  std::vector<double> predicted;
  std::vector<double> actual;
  /// Participant index of each pair.
  std::vector<std::size_t> participant;
  /// Categorical: top-1 / top-5 hits.
  std::vector<char> top1_hit;
  std::vector<char> top5_hit;
};

using Predictions = std::map<int, PredictionSet>;

/// Builds the per-modality report from predictions. `groups` maps modality
/// names onto aggregate groups; unnamed modalities fall into their kind.
MetricReport summarize(const Predictions& predictions, const Vocabulary& vocab,
                       const std::map<std::string, std::string>& groups = {});

/// Every position after the first predicted from its causal prefix.
Predictions predict_within_visit(const Model& model, std::span<const EncodedParticipant> cohort,
                                 const Vocabulary& vocab, int workers = 1);
MetricReport eval_within_visit(const Model& model, std::span<const EncodedParticipant> cohort,
                               const Vocabulary& vocab, int workers = 1);

/// One visit-2 target of one participant. `v1_*` hold the last visit-1
/// measurement of the same modality when there is one.
struct VisitPair {
  std::size_t participant = 0;
  int modality = 0;
  TimeFeatures v2_time{};
  double v2_value = 0.0;
  int v2_token = 0;
  std::optional<double> v1_value;
  std::optional<int> v1_token;
  double age = 0.0;
  Sex sex = Sex::kUnknown;
  /// Last visit-1 token of the bmi modality, when the vocabulary has one.
  std::optional<int> bmi_token;
};

/// First occurrence of each modality after the visit boundary.
std::vector<VisitPair> visit_pairs(std::span<const EncodedParticipant> cohort,
                                   const Vocabulary& vocab);

/// Model prediction for each pair, from one ParallelV2 forward pass per
/// participant over all of its visit-2 targets. Aligned with `pairs`.
struct LongitudinalOutput {
  std::vector<double> expected;  // continuous pairs; NaN for categorical
  std::vector<char> top1_hit;
  std::vector<char> top5_hit;
};
LongitudinalOutput predict_longitudinal(const Model& model,
                                        std::span<const EncodedParticipant> cohort,
                                        std::span<const VisitPair> pairs, const Vocabulary& vocab,
                                        int workers = 1);

enum class BaselineKind { kLocf, kLinear };
std::string_view to_string(BaselineKind kind);
BaselineKind parse_baseline(std::string_view name);

/// Baseline predictions aligned with `test`; NaN where the baseline has no
/// prediction (no visit-1 value, or a skipped Linear modality). Linear
/// regresses the visit-2 value on [v1 token, age, sex code, bmi token] plus
/// an intercept; modalities with fewer than 5 training pairs are skipped
/// and listed in `skipped`.
std::vector<double> baseline_predict(BaselineKind kind, std::span<const VisitPair> train,
                                     std::span<const VisitPair> test,
                                     std::vector<std::string>* skipped = nullptr,
                                     const Vocabulary* vocab = nullptr);

/// Model and baselines scored on the identical pair set per modality:
/// continuous pairs with a visit-1 value for which every method predicts.
struct LongitudinalRow {
  std::string modality;
  std::size_t n = 0;
  Correlation model;
  std::map<std::string, Correlation> baselines;
  /// Fisher-Z of model r against each baseline r.
  std::map<std::string, ZComparison> versus;
};

struct LongitudinalReport {
  MetricReport model;  // every visit-2 target, including categorical
  std::vector<LongitudinalRow> comparison;
  std::vector<std::string> skipped;

  const LongitudinalRow* find(std::string_view modality) const;
  std::string to_csv(const ReportMeta& meta) const;
  std::string to_json(const ReportMeta& meta) const;
};

LongitudinalReport eval_longitudinal(const Model& model,
                                     std::span<const EncodedParticipant> test,
                                     const Vocabulary& vocab,
                                     std::span<const BaselineKind> baselines = {},
                                     std::span<const EncodedParticipant> train = {},
                                     int workers = 1);

struct CurvePoint {
  double input = 0.0;     // bin midpoint of the input modality
  double expected = 0.0;  // decoded expectation of the output modality
};

struct ProbeOptions {
  DateTime time = DateTime::from_civil(2019, 6, 15, 9, 0);
  double age = 50.0;
  Sex sex = Sex::kUnknown;
};

/// Two-position probe per input bin: the input token at position 0, a
/// query for the output modality at position 1, both at the fixed time.
std::vector<CurvePoint> crossmodal_sweep(const Model& model, const Vocabulary& vocab, int m_in,
                                         int m_out, const ProbeOptions& options = {});

struct BioAgeResult {
  std::vector<double> predicted;     // out-of-fold ridge predictions
  std::vector<double> acceleration;  // residual of predicted on chronological
  double r2 = 0.0;                   // out-of-fold R^2
};

/// Five-fold ridge (alpha) of age on embeddings, then the residual of an
/// OLS fit of the predictions on chronological age.
BioAgeResult bioage(const std::vector<std::vector<double>>& embeddings,
                    std::span<const double> ages, double alpha = 1000.0, int folds = 5);

}  // namespace trajlm
