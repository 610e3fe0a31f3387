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
#include <map>
#include <string>
#include <vector>

#include "trajlm/common.h"
#include "trajlm/stats.h"
#include "trajlm/synth.h"

namespace trajlm {
namespace {

/// Visit-1 values of a continuous channel, keyed by participant index.
std::map<std::size_t, double> visit1_values(const std::vector<ParticipantRecord>& records,
                                            const std::string& name) {
  std::map<std::size_t, double> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    for (const auto& e : r.events) {
      if (r.visits.size() > 1 && e.time >= r.visits[1]) break;
      if (e.modality == name && !out.count(i)) out[i] = std::get<double>(e.value);
    }
  }
  return out;
}

TEST(Synth, SameSeedSameCohort) {
  GeneratorConfig c = GeneratorConfig::desk_default(5);
  c.n_participants = 40;
  const GeneratedCohort a = generate(c);
  const GeneratedCohort b = generate(c);
  ASSERT_EQ(a.records.size(), 40u);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(participant_to_json(a.records[i]), participant_to_json(b.records[i]));
  }
  EXPECT_EQ(a.truth.to_json(), b.truth.to_json());
  c.seed = 6;
  EXPECT_NE(participant_to_json(generate(c).records[0]), participant_to_json(a.records[0]));
}

TEST(Synth, NoiselessPlantedSlope) {
  GeneratorConfig c = GeneratorConfig::desk_default(8);
  c.n_participants = 30;
  for (auto& m : c.modalities) {
    if (m.name == "x" || m.name == "y") m.noise_sd = 0.0;
  }
  const GeneratedCohort g = generate(c);
  const auto x = visit1_values(g.records, "x");
  const auto y = visit1_values(g.records, "y");
  ASSERT_EQ(x.size(), 30u);
  for (const auto& [i, xv] : x) EXPECT_NEAR(y.at(i), 2.0 * xv, 1e-12);
  EXPECT_NEAR(g.truth.conditional_slope("y", "x"), 2.0, 1e-12);
  EXPECT_NEAR(g.truth.conditional_mean("y", "x", 1.5), 3.0, 1e-12);
}

TEST(Synth, EmpiricalCorrelationMatchesTruth) {
  GeneratorConfig c = GeneratorConfig::desk_default(9);
  c.n_participants = 500;
  const GeneratedCohort g = generate(c);
  for (const auto& [a, b] : {std::pair{"x", "ldl"}, std::pair{"ldl", "hdl"}, std::pair{"x", "y"}}) {
    const auto va = visit1_values(g.records, a);
    const auto vb = visit1_values(g.records, b);
    std::vector<double> xs, ys;
    for (const auto& [i, v] : va) {
      if (vb.count(i)) {
        xs.push_back(v);
        ys.push_back(vb.at(i));
      }
    }
    EXPECT_NEAR(pearson(xs, ys), g.truth.correlation(a, b), 0.05) << a << " vs " << b;
  }
}

TEST(Synth, PlantedEffectIsFractionOfUntreated) {
  GeneratorConfig c = GeneratorConfig::desk_default(10);
  c.n_participants = 100;
  const GeneratedCohort g = generate(c);
  std::size_t treated = 0;
  for (const auto& p : g.truth.participants) {
    ASSERT_EQ(p.planted_delta.size(), 1u);
    if (p.treated) {
      ++treated;
      EXPECT_NEAR(p.planted_delta[0], -0.20 * p.untreated_target[0], 1e-9);
    } else {
      EXPECT_EQ(p.planted_delta[0], 0.0);
    }
  }
  EXPECT_EQ(treated, 50u);
}

TEST(Synth, VisitOneOnlyDropsLaterEvents) {
  GeneratorConfig c = GeneratorConfig::desk_default(11);
  c.n_participants = 20;
  const GeneratedCohort g = generate(c);
  const auto v1 = visit1_only(g.records, c);
  ASSERT_EQ(v1.size(), g.records.size());
  for (std::size_t i = 0; i < v1.size(); ++i) {
    ASSERT_FALSE(g.records[i].visits.empty());
    for (const auto& e : v1[i].events) {
      EXPECT_NE(e.modality, "medication");
      if (g.records[i].visits.size() > 1) {
        EXPECT_LT(e.time, g.records[i].visits[1]);
      }
    }
  }
}

TEST(Synth, RejectsBadConfig) {
  GeneratorConfig c = GeneratorConfig::desk_default();
  c.modalities[0].noise_sd = -1.0;
  EXPECT_THROW(generate(c), Error);
}

}  // namespace
}  // namespace trajlm
