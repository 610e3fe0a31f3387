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

#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "test_util.h"
#include "trajlm/common.h"
#include "trajlm/corpus.h"

namespace trajlm {
namespace {

TEST(TimeFeatures, MondayMidnight) {
  const TimeFeatures f = time_features(DateTime::from_civil(2020, 1, 6, 0, 0), false);
  const TimeFeatures expected = {0, 0, 0, 1, 2020 - kDefaultYearBase, 6, 0};
  EXPECT_EQ(f, expected);
}

TEST(TimeFeatures, SundayLateAsleep) {
  const TimeFeatures f = time_features(DateTime::from_civil(2020, 1, 12, 23, 59), true);
  EXPECT_EQ(f[0], 6);
  EXPECT_EQ(f[1], 23);
  EXPECT_EQ(f[2], 59);
  EXPECT_EQ(f[6], 1);
}

TEST(TimeFeatures, RoundTripAndYearRange) {
  const DateTime t = DateTime::from_civil(2019, 7, 31, 13, 45);
  EXPECT_EQ(datetime_of(time_features(t, false)), t);
  EXPECT_THROW(time_features(DateTime::from_civil(1899, 12, 31), false), Error);
  EXPECT_THROW(time_features(DateTime::from_civil(2100, 1, 1), false), Error);
}

TEST(DateTime, ParseAndFormat) {
  EXPECT_EQ(DateTime::parse("2020-01-06").iso(), "2020-01-06T00:00");
  EXPECT_EQ(DateTime::parse("2020-01-06T08:30:59Z").iso(), "2020-01-06T08:30");
  EXPECT_EQ(DateTime::parse("2020-02-29T12:00").day_of_week(), 5u);
}

/// Ten one-category channels "m0" .. "m9".
Vocabulary ten_channel_vocab() {
  std::vector<ModalitySpec> mods;
  for (int i = 0; i < 10; ++i) {
    mods.push_back(testing::categorical_spec("m" + std::to_string(i), {"a", "b"}, 2 * i));
  }
  return Vocabulary(std::move(mods));
}

Event cat_event(DateTime t, int modality) {
  return Event{t, "m" + std::to_string(modality), std::string("a"), false};
}

TEST(AssembleSequence, SameTimestampOrderedByModality) {
  const Vocabulary vocab = ten_channel_vocab();
  ParticipantRecord r;
  r.id = "p";
  const DateTime t = DateTime::from_civil(2020, 3, 1, 9, 0);
  for (int m : {5, 2, 9}) r.events.push_back(cat_event(t, m));
  const TokenSequence seq = assemble_sequence(r, vocab, 100);
  ASSERT_EQ(seq.size(), 3);
  EXPECT_EQ(seq.modalities[0], 2);
  EXPECT_EQ(seq.modalities[1], 5);
  EXPECT_EQ(seq.modalities[2], 9);
  // Trailing query slot.
  EXPECT_EQ(seq.modalities.size(), 4u);
  EXPECT_EQ(seq.modalities.back(), vocab.pad_modality());
  seq.check_aligned();
}

TEST(AssembleSequence, VisitBoundary) {
  const Vocabulary vocab = ten_channel_vocab();
  ParticipantRecord r;
  r.id = "p";
  const DateTime v1 = DateTime::from_civil(2019, 1, 10, 8, 0);
  const DateTime v2 = DateTime::from_civil(2021, 1, 10, 8, 0);
  r.visits = {v1, v2};
  for (int i = 0; i < 4; ++i) r.events.push_back(cat_event(v1.plus_minutes(i), i));
  for (int i = 0; i < 3; ++i) r.events.push_back(cat_event(v2.plus_minutes(i), i));
  const TokenSequence seq = assemble_sequence(r, vocab, 100);
  EXPECT_EQ(seq.size(), 7);
  EXPECT_EQ(seq.visit_boundary, 4);
}

TEST(AssembleSequence, EmptyRecord) {
  const Vocabulary vocab = ten_channel_vocab();
  ParticipantRecord r;
  r.id = "empty";
  const TokenSequence seq = assemble_sequence(r, vocab, 100);
  EXPECT_EQ(seq.size(), 0);
  EXPECT_EQ(seq.visit_boundary, 0);
}

TEST(AssembleSequence, TruncationKeepsHeadAndIsDeterministic) {
  const Vocabulary vocab = ten_channel_vocab();
  ParticipantRecord r;
  r.id = "p";
  const DateTime t = DateTime::from_civil(2020, 3, 1, 9, 0);
  for (int i = 9; i >= 0; --i) r.events.push_back(cat_event(t.plus_minutes(i), i));
  const TokenSequence a = assemble_sequence(r, vocab, 4);
  const TokenSequence b = assemble_sequence(r, vocab, 4);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 4);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(a.modalities[static_cast<std::size_t>(i)], i);
}

TEST(AssembleSequence, UnencodableEventNamesParticipant) {
  const Vocabulary vocab = ten_channel_vocab();
  ParticipantRecord r;
  r.id = "subject-17";
  r.events.push_back(Event{DateTime::from_civil(2020, 1, 1), "m3", std::string("zzz"), false});
  try {
    assemble_sequence(r, vocab, 100);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("subject-17"), std::string::npos);
  }
}

TokenSequence continuous_sequence(const Vocabulary& vocab, int n) {
  ParticipantRecord r;
  r.id = "p";
  const DateTime t = DateTime::from_civil(2020, 3, 1, 9, 0);
  for (int i = 0; i < n; ++i) {
    r.events.push_back(Event{t.plus_minutes(i), i % 2 ? "sbp" : "ldl",
                             i % 2 ? 100.0 + 3 * i : 80.0 + 7 * i, false});
  }
  return assemble_sequence(r, vocab, 1000);
}

TEST(Augment, NoneIsIdentity) {
  const Vocabulary vocab = testing::small_vocab();
  const TokenSequence seq = continuous_sequence(vocab, 20);
  std::mt19937_64 rng(5);
  EXPECT_EQ(augment(seq, vocab, AugmentConfig::none(), rng), seq);
}

TEST(Augment, FullRemovalEmpties) {
  const Vocabulary vocab = testing::small_vocab();
  const TokenSequence seq = continuous_sequence(vocab, 20);
  AugmentConfig cfg = AugmentConfig::none();
  cfg.removal_chance = 1.0;
  cfg.removal_rate = 1.0;
  std::mt19937_64 rng(5);
  const TokenSequence out = augment(seq, vocab, cfg, rng);
  EXPECT_EQ(out.size(), 0);
  out.check_aligned();
}

TEST(Augment, NoiseKeepsTokenConsistentWithValue) {
  const Vocabulary vocab = testing::small_vocab();
  AugmentConfig cfg = AugmentConfig::none();
  cfg.noise_chance = 1.0;
  cfg.noise_rate = 2.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const TokenSequence seq = continuous_sequence(vocab, 1);
    std::mt19937_64 rng(seed);
    const TokenSequence out = augment(seq, vocab, cfg, rng);
    ASSERT_EQ(out.size(), 1);
    EXPECT_EQ(out.tokens[0], encode_value(vocab, out.modalities[0], out.values[0]));
  }
}

TEST(Augment, OutputStaysAligned) {
  const Vocabulary vocab = testing::small_vocab();
  const TokenSequence seq = continuous_sequence(vocab, 200);
  AugmentConfig cfg;
  cfg.noise_chance = cfg.removal_chance = cfg.block_chance = 1.0;
  cfg.subset_chance = cfg.exclusion_chance = 0.5;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    augment(seq, vocab, cfg, rng).check_aligned();
  }
}

TEST(CohortIo, ParticipantJsonRoundTrip) {
  ParticipantRecord r;
  r.id = "x1";
  r.age = 52.5;
  r.sex = Sex::kFemale;
  r.visits = {DateTime::from_civil(2019, 5, 1, 8, 0)};
  r.events.push_back(Event{DateTime::from_civil(2019, 5, 1, 8, 0), "ldl", 131.25, false});
  r.events.push_back(Event{DateTime::from_civil(2019, 5, 1, 8, 5), "medication",
                           std::string("statin"), true});
  const ParticipantRecord back = parse_participant(participant_to_json(r));
  EXPECT_EQ(participant_to_json(back), participant_to_json(r));
  EXPECT_EQ(back.events.size(), 2u);
  EXPECT_THROW(parse_participant("{\"id\": "), Error);
}

}  // namespace
}  // namespace trajlm
