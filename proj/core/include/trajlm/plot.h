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

#include <span>
#include <string>
#include <vector>

namespace trajlm::plot {

// Minimal standalone SVG documents for offline figure review.

std::string scatter(std::span<const double> x, std::span<const double> y, const std::string& title,
                    const std::string& x_label, const std::string& y_label);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  /// Optional symmetric error band (same length as y).
  std::vector<double> err;
};

std::string lines(std::span<const Series> series, const std::string& title,
                  const std::string& x_label, const std::string& y_label);

struct ForestRow {
  std::string label;
  double point = 0.0;
  double low = 0.0;
  double high = 0.0;
  /// Published reference, drawn as a second interval when present.
  bool has_reference = false;
  double ref_point = 0.0;
  double ref_low = 0.0;
  double ref_high = 0.0;
};

std::string forest(std::span<const ForestRow> rows, const std::string& title,
                   const std::string& x_label);

}  // namespace trajlm::plot
