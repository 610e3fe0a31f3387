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

#include <string>
#include <vector>

#include "trajlm/vocab.h"

namespace trajlm::testing {

/// Continuous modality with explicit edges [lo, interior..., hi].
inline ModalitySpec continuous_spec(std::string name, std::vector<double> edges, int cum_base,
                                    double train_sd = 1.0) {
  ModalitySpec m;
  m.name = std::move(name);
  m.kind = ModalityKind::kContinuous;
  m.bin_edges = std::move(edges);
  const std::size_t k = m.bin_edges.size() - 1;
  for (std::size_t i = 0; i < k; ++i) {
    m.midpoints.push_back(0.5 * (m.bin_edges[i] + m.bin_edges[i + 1]));
    m.quantile_ranges.push_back({static_cast<double>(i) / k, static_cast<double>(i + 1) / k});
  }
  m.train_sd = train_sd;
  m.cum_base = cum_base;
  return m;
}

inline ModalitySpec categorical_spec(std::string name, std::vector<std::string> categories,
                                     int cum_base) {
  ModalitySpec m;
  m.name = std::move(name);
  m.kind = ModalityKind::kCategorical;
  m.categories = std::move(categories);
  m.cum_base = cum_base;
  return m;
}

/// Small mixed vocabulary: "ldl" (4 bins over [50, 250]), "sbp" (3 bins
/// over [90, 180]), "medication" (none, statin, vitamin), "glucose" (2 bins).
inline Vocabulary small_vocab() {
  std::vector<ModalitySpec> mods;
  mods.push_back(continuous_spec("ldl", {50, 100, 130, 160, 250}, 0, 30.0));
  mods.push_back(continuous_spec("sbp", {90, 120, 140, 180}, 4, 15.0));
  mods.push_back(categorical_spec("medication", {"none", "statin", "vitamin"}, 7));
  mods.push_back(continuous_spec("glucose", {70, 100, 140}, 10, 12.0));
  return Vocabulary(std::move(mods));
}

}  // namespace trajlm::testing
