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
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "trajlm/datetime.h"
#include "trajlm/vocab.h"

namespace trajlm {

enum class Sex { kFemale = 0, kMale = 1, kUnknown = 2 };

std::string_view to_string(Sex sex);
Sex parse_sex(std::string_view text);

/// A measurement is a real value (continuous modality) or a category name.
using Measurement = std::variant<double, std::string>;

struct Event {
  DateTime time;
  std::string modality;
  Measurement value;
  bool sleep = false;
};

struct ParticipantRecord {
  std::string id;
  double age = 0.0;
  Sex sex = Sex::kUnknown;
  std::vector<Event> events;
  std::vector<DateTime> visits;
};

/// [day_of_week, hour, minute, month, year - year_base, day_of_month, sleep]
using TimeFeatures = std::array<int, 7>;

inline constexpr std::array<int, 7> kTemporalVocabSizes = {8, 25, 61, 13, 147, 32, 2};
inline constexpr int kDefaultYearBase = 1900;

TimeFeatures time_features(DateTime t, bool sleep, int year_base = kDefaultYearBase);
/// Inverse of time_features up to the sleep flag.
DateTime datetime_of(const TimeFeatures& f, int year_base = kDefaultYearBase);

/// Four synchronized per-position streams for one participant.
///
/// `modalities` and `times` carry one trailing entry beyond the T measured
/// positions: the query slot naming what the position after the last token
/// is (pad modality until a caller fills it).
struct TokenSequence {
  std::vector<int> tokens;
  std::vector<double> values;
  std::vector<int> modalities;
  std::vector<TimeFeatures> times;
  /// First position of visit-2 content; equals size() for single-visit data.
  int visit_boundary = 0;

  int size() const { return static_cast<int>(tokens.size()); }
  /// Throws if the streams are out of sync.
  void check_aligned() const;

  /// Keeps positions with keep[i] != 0, preserving the trailing query slot
  /// and remapping the visit boundary.
  TokenSequence filtered(const std::vector<char>& keep) const;
  /// Positions [0, n) plus a query slot copied from position n (or the
  /// existing slot when n == size()).
  TokenSequence prefix(int n) const;

  bool operator==(const TokenSequence&) const = default;
};

/// Assembled participant: streams plus the per-participant demographics the
/// model consumes at every position.
struct EncodedParticipant {
  std::string id;
  double age = 0.0;
  Sex sex = Sex::kUnknown;
  TokenSequence seq;
};

TokenSequence assemble_sequence(const ParticipantRecord& record, const Vocabulary& vocab,
                                int max_len, int year_base = kDefaultYearBase);
EncodedParticipant encode_participant(const ParticipantRecord& record, const Vocabulary& vocab,
                                      int max_len, int year_base = kDefaultYearBase);

struct AugmentConfig {
  double noise_chance = 0.10;
  double noise_rate = 0.15;
  double removal_chance = 0.50;
  double removal_rate = 0.15;
  double block_chance = 0.20;
  double block_rate = 0.01;
  int block_count = 10;
  double subset_chance = 0.10;
  double subset_fraction = 0.10;
  double exclusion_chance = 0.05;

  /// Every probability-valued field zeroed.
  static AugmentConfig none();
  void validate() const;
};

/// Applies the five stochastic augmentations in a fixed order, each gated
/// by its own draw: value noise (re-binned), token dropout, block removal,
/// modality-subset retention, modality exclusion.
TokenSequence augment(const TokenSequence& seq, const Vocabulary& vocab,
                      const AugmentConfig& config, std::mt19937_64& rng);

// Cohort files: JSON Lines, one participant per line.
std::vector<ParticipantRecord> read_cohort(const std::filesystem::path& path);
void write_cohort(const std::filesystem::path& path,
                  const std::vector<ParticipantRecord>& records);
ParticipantRecord parse_participant(std::string_view line);
std::string participant_to_json(const ParticipantRecord& record);

/// Per-modality training material in first-appearance order; number-valued
/// modalities are continuous, string-valued ones categorical.
std::vector<RawModality> collect_raw_modalities(const std::vector<ParticipantRecord>& records,
                                                const std::map<std::string, int>& bin_overrides = {});

}  // namespace trajlm
