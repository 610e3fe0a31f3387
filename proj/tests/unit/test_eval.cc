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

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "test_util.h"
#include "trajlm/common.h"
#include "trajlm/eval.h"

namespace trajlm {
namespace {

Vocabulary decode_vocab() {
  std::vector<ModalitySpec> mods;
  mods.push_back(testing::continuous_spec("a", {5, 15, 25}, 0));          // midpoints 10, 20
  mods.push_back(testing::continuous_spec("b", {-1.5, 1.5, 4.5}, 2));     // midpoints 0, 3
  mods.push_back(testing::categorical_spec("c", {"w", "x", "y", "z"}, 4));
  return Vocabulary(std::move(mods));
}

TEST(DecodeExpected, Examples) {
  const Vocabulary vocab = decode_vocab();
  std::vector<double> row(8, 0.0);
  EXPECT_DOUBLE_EQ(decode_expected(row, vocab, 0), 15.0);
  row[0] = 0.0;
  row[1] = -1e4;
  EXPECT_DOUBLE_EQ(decode_expected(row, vocab, 0), 10.0);
  row[2] = std::log(2.0);
  row[3] = std::log(1.0);
  EXPECT_NEAR(decode_expected(row, vocab, 1), 1.0, 1e-15);
  EXPECT_THROW(decode_expected(row, vocab, 2), Error);
  // Logits outside the modality range do not matter.
  row[5] = 1e3;
  EXPECT_NEAR(decode_expected(row, vocab, 1), 1.0, 1e-15);
}

TEST(TopK, Examples) {
  const Vocabulary vocab = decode_vocab();
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(0, 3);
  std::vector<std::vector<double>> uniform(40, std::vector<double>(8, 0.0));
  std::vector<int> truth(40);
  int lowest = 0;
  for (int& t : truth) {
    t = pick(rng);
    lowest += t == 0;
  }
  EXPECT_DOUBLE_EQ(topk_accuracy(uniform, truth, vocab, 2, 4), 1.0);
  EXPECT_DOUBLE_EQ(topk_accuracy(uniform, truth, vocab, 2, 1), lowest / 40.0);
  std::vector<std::vector<double>> point(40, std::vector<double>(8, -1e4));
  for (std::size_t i = 0; i < 40; ++i) point[i][4 + static_cast<std::size_t>(truth[i])] = 0.0;
  EXPECT_DOUBLE_EQ(topk_accuracy(point, truth, vocab, 2, 1), 1.0);
  EXPECT_THROW(topk_accuracy(point, truth, vocab, 2, 5), Error);
}

TEST(Baselines, LocfCarriesValueForward) {
  VisitPair p;
  p.modality = 0;
  p.v1_value = 7.3;
  p.v1_token = 0;
  p.v2_value = 9.0;
  const std::vector<VisitPair> test = {p};
  const auto pred = baseline_predict(BaselineKind::kLocf, {}, test);
  EXPECT_EQ(pred[0], 7.3);
  VisitPair missing = p;
  missing.v1_value.reset();
  missing.v1_token.reset();
  EXPECT_TRUE(std::isnan(baseline_predict(BaselineKind::kLocf, {}, std::vector{missing})[0]));
}

TEST(Baselines, LinearExactFit) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> tok(0, 20);
  std::uniform_real_distribution<double> age(30, 70);
  std::vector<VisitPair> train, test;
  for (int i = 0; i < 60; ++i) {
    VisitPair p;
    p.modality = 0;
    p.v1_token = tok(rng);
    p.v1_value = *p.v1_token;
    p.v2_value = *p.v1_token;
    p.age = age(rng);
    p.sex = i % 2 ? Sex::kMale : Sex::kFemale;
    (i < 40 ? train : test).push_back(p);
  }
  const auto pred = baseline_predict(BaselineKind::kLinear, train, test);
  std::vector<double> actual;
  for (std::size_t i = 0; i < test.size(); ++i) {
    EXPECT_NEAR(pred[i], test[i].v2_value, 1e-8);
    actual.push_back(test[i].v2_value);
  }
  EXPECT_NEAR(pearson(pred, actual), 1.0, 1e-12);
}

TEST(Baselines, LinearSkipsSmallModalities) {
  std::vector<VisitPair> train(4);
  for (int i = 0; i < 4; ++i) {
    train[static_cast<std::size_t>(i)].v1_token = i;
    train[static_cast<std::size_t>(i)].v1_value = i;
  }
  const Vocabulary vocab = decode_vocab();
  std::vector<std::string> skipped;
  const auto pred = baseline_predict(BaselineKind::kLinear, train, train, &skipped, &vocab);
  EXPECT_TRUE(std::isnan(pred[0]));
  ASSERT_FALSE(skipped.empty());
  EXPECT_NE(skipped[0].find("training pairs < 5"), std::string::npos) << skipped[0];
  EXPECT_EQ(parse_baseline("locf"), BaselineKind::kLocf);
  EXPECT_THROW(parse_baseline("oracle"), Error);
}

TEST(BioAge, IdentityWhenAgeIsACoordinate) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> age(30, 70);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::vector<double>> emb;
  std::vector<double> ages;
  for (int i = 0; i < 100; ++i) {
    ages.push_back(age(rng));
    emb.push_back({ages.back(), noise(rng), noise(rng)});
  }
  const BioAgeResult r = bioage(emb, ages, 1e-9);
  for (std::size_t i = 0; i < ages.size(); ++i) {
    EXPECT_NEAR(r.predicted[i], ages[i], 1e-6);
    EXPECT_NEAR(r.acceleration[i], 0.0, 1e-6);
  }
  EXPECT_NEAR(r.r2, 1.0, 1e-9);
}

TEST(BioAge, ResidualUncorrelatedWithAgeAndNullR2) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> age(30, 70);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::vector<double>> emb;
  std::vector<double> ages;
  for (int i = 0; i < 400; ++i) {
    ages.push_back(age(rng));
    std::vector<double> e(8);
    for (double& v : e) v = noise(rng);
    emb.push_back(e);
  }
  const BioAgeResult r = bioage(emb, ages);
  EXPECT_NEAR(pearson(r.acceleration, ages), 0.0, 1e-8);
  EXPECT_LT(std::abs(r.r2), 0.1);
  EXPECT_THROW(bioage(emb, std::vector<double>(400, 50.0)), Error);
}

ModelConfig tiny_config(const Vocabulary& vocab) {
  ModelConfig c = ModelConfig::for_vocabulary(vocab, 16, 1, 2);
  c.cont_pe_dim = 16;
  c.dropout = 0.0;
  return c;
}

EncodedParticipant two_visit_participant(const Vocabulary& vocab) {
  ParticipantRecord r;
  r.id = "p";
  r.age = 61;
  r.sex = Sex::kFemale;
  const DateTime v1 = DateTime::from_civil(2019, 2, 4, 8, 0);
  const DateTime v2 = DateTime::from_civil(2021, 2, 4, 8, 0);
  r.visits = {v1, v2};
  r.events.push_back(Event{v1, "ldl", 140.0, false});
  r.events.push_back(Event{v1.plus_minutes(2), "sbp", 128.0, false});
  r.events.push_back(Event{v1.plus_minutes(4), "glucose", 101.0, false});
  r.events.push_back(Event{v2, "ldl", 150.0, false});
  r.events.push_back(Event{v2.plus_minutes(1), "medication", std::string("statin"), false});
  r.events.push_back(Event{v2.plus_minutes(2), "sbp", 135.0, false});
  r.events.push_back(Event{v2.plus_minutes(3), "glucose", 99.0, false});
  return encode_participant(r, vocab, 64);
}

void perturb(Model& model) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 0.3);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    for (double& v : model.params().at(i).data()) v += n(rng);
  }
}

TEST(Longitudinal, PredictionIndependentOfOtherQueries) {
  const Vocabulary vocab = testing::small_vocab();
  Model model = Model::init(tiny_config(vocab), 1);
  perturb(model);
  const std::vector<EncodedParticipant> cohort = {two_visit_participant(vocab)};
  const auto pairs = visit_pairs(cohort, vocab);
  ASSERT_EQ(pairs.size(), 4u);
  EXPECT_TRUE(pairs[0].v1_value.has_value());
  const auto all = predict_longitudinal(model, cohort, pairs, vocab);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!vocab.modality(pairs[i].modality).continuous()) continue;
    const std::vector<VisitPair> alone = {pairs[i]};
    const auto single = predict_longitudinal(model, cohort, alone, vocab);
    EXPECT_EQ(std::memcmp(&single.expected[0], &all.expected[i], sizeof(double)), 0);
  }
}

TEST(WithinVisit, SingleTokenParticipantContributesNothing) {
  const Vocabulary vocab = testing::small_vocab();
  const Model model = Model::init(tiny_config(vocab), 2);
  ParticipantRecord r;
  r.id = "one";
  r.events.push_back(Event{DateTime::from_civil(2020, 1, 1, 8, 0), "ldl", 120.0, false});
  const std::vector<EncodedParticipant> cohort = {encode_participant(r, vocab, 64)};
  const MetricReport report = eval_within_visit(model, cohort, vocab);
  for (const auto& m : report.modalities) {
    EXPECT_FALSE(m.correlation.has_value());
  }
}

TEST(Crossmodal, SweepCoversInputBins) {
  const Vocabulary vocab = testing::small_vocab();
  const Model model = Model::init(tiny_config(vocab), 3);
  const auto curve = crossmodal_sweep(model, vocab, 0, 1);
  ASSERT_EQ(curve.size(), 4u);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    EXPECT_DOUBLE_EQ(curve[i].input, vocab.modality(0).midpoints[i]);
    EXPECT_GE(curve[i].expected, 105.0);
    EXPECT_LE(curve[i].expected, 160.0);
  }
  EXPECT_THROW(crossmodal_sweep(model, vocab, 0, 2), Error);
}

}  // namespace
}  // namespace trajlm
