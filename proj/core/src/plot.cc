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

#include "trajlm/plot.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace trajlm::plot {
namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;
constexpr std::array<const char*, 6> kColors = {"#1f77b4", "#d62728", "#2ca02c",
                                                "#9467bd", "#ff7f0e", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi == lo) lo -= 0.5, hi += 0.5;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

struct Frame {
  Range x, y;
  double px(double v) const { return kLeft + (v - x.lo) / (x.hi - x.lo) * (kWidth - kLeft - kRight); }
  double py(double v) const { return kHeight - kBottom - (v - y.lo) / (y.hi - y.lo) * (kHeight - kTop - kBottom); }
};

std::string header(const std::string& title) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{3}</text>\n",
      kWidth, kHeight, kWidth / 2, escape(title));
}

std::string axes(const Frame& f, const std::string& x_label, const std::string& y_label, bool y_ticks = true) {
  std::string out = fmt::format(
      "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n"
      "<line x1=\"{0}\" y1=\"{3}\" x2=\"{0}\" y2=\"{1}\" stroke=\"black\"/>\n",
      kLeft, kHeight - kBottom, kWidth - kRight, kTop);
  for (int i = 0; i <= 4; ++i) {
    const double vx = f.x.lo + (f.x.hi - f.x.lo) * i / 4.0;
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.3g}</text>\n", f.px(vx),
                       kHeight - kBottom + 16, vx);
    if (y_ticks) {
      const double vy = f.y.lo + (f.y.hi - f.y.lo) * i / 4.0;
      out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", kLeft - 6,
                         f.py(vy) + 4, vy);
    }
  }
  out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n",
                     (kLeft + kWidth - kRight) / 2, kHeight - 20, escape(x_label));
  out += fmt::format(
      "<text x=\"16\" y=\"{0:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0:.1f})\">{1}</text>\n",
      (kTop + kHeight - kBottom) / 2, escape(y_label));
  return out;
}

}  // namespace

std::string scatter(std::span<const double> x, std::span<const double> y, const std::string& title,
                    const std::string& x_label, const std::string& y_label) {
  Frame f;
  for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i) {
    f.x.add(x[i]);
    f.y.add(y[i]);
  }
  f.x.finish();
  f.y.finish();
  std::string out = header(title) + axes(f, x_label, y_label);
  for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
    out += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.6\"/>\n",
                       f.px(x[i]), f.py(y[i]), kColors[0]);
  }
  return out + "</svg>\n";
}

std::string lines(std::span<const Series> series, const std::string& title, const std::string& x_label,
                  const std::string& y_label) {
  Frame f;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      const double e = i < s.err.size() ? s.err[i] : 0.0;
      f.x.add(s.x[i]);
      f.y.add(s.y[i] - e);
      f.y.add(s.y[i] + e);
    }
  }
  f.x.finish();
  f.y.finish();
  std::string out = header(title) + axes(f, x_label, y_label);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % kColors.size()];
    const std::size_t n = std::min(s.x.size(), s.y.size());
    if (!s.err.empty() && n > 0) {
      std::string band;
      for (std::size_t i = 0; i < n; ++i) band += fmt::format("{:.1f},{:.1f} ", f.px(s.x[i]), f.py(s.y[i] + s.err[i]));
      for (std::size_t i = n; i-- > 0;) band += fmt::format("{:.1f},{:.1f} ", f.px(s.x[i]), f.py(s.y[i] - s.err[i]));
      out += fmt::format("<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n", band, color);
    }
    std::string pts;
    for (std::size_t i = 0; i < n; ++i) pts += fmt::format("{:.1f},{:.1f} ", f.px(s.x[i]), f.py(s.y[i]));
    out += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", pts, color);
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" fill=\"{}\">{}</text>\n", kWidth - kRight - 150,
                       kTop + 14 + 16.0 * static_cast<double>(k), color, escape(s.name));
  }
  return out + "</svg>\n";
}

std::string forest(std::span<const ForestRow> rows, const std::string& title, const std::string& x_label) {
  Frame f;
  for (const auto& r : rows) {
    f.x.add(r.low);
    f.x.add(r.high);
    f.x.add(r.point);
    if (r.has_reference) {
      f.x.add(r.ref_low);
      f.x.add(r.ref_high);
    }
  }
  f.x.add(0.0);
  f.x.finish();
  f.y.lo = 0.0;
  f.y.hi = static_cast<double>(std::max<std::size_t>(rows.size(), 1)) + 1.0;
  constexpr double kLabelSpace = 150.0;
  std::string out = header(title);
  auto px = [&](double v) {
    return kLeft + kLabelSpace + (v - f.x.lo) / (f.x.hi - f.x.lo) * (kWidth - kLeft - kLabelSpace - kRight);
  };
  out += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1}\" x2=\"{0:.1f}\" y2=\"{2}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n",
                     px(0.0), kTop, kHeight - kBottom);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const double y = f.py(static_cast<double>(rows.size() - i));
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{}</text>\n", kLeft + kLabelSpace - 8,
                       y + 4, escape(r.label));
    out += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                       px(r.low), y - 3, px(r.high), y - 3, kColors[0]);
    out += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3.5\" fill=\"{}\"/>\n", px(r.point), y - 3, kColors[0]);
    if (r.has_reference) {
      out += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                         px(r.ref_low), y + 4, px(r.ref_high), y + 4, kColors[1]);
      out += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"6\" height=\"6\" fill=\"{}\"/>\n", px(r.ref_point) - 3,
                         y + 1, kColors[1]);
    }
  }
  for (int i = 0; i <= 4; ++i) {
    const double v = f.x.lo + (f.x.hi - f.x.lo) * i / 4.0;
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.3g}</text>\n", px(v),
                       kHeight - kBottom + 16, v);
  }
  out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n",
                     (kLeft + kLabelSpace + kWidth - kRight) / 2, kHeight - 20, escape(x_label));
  return out + "</svg>\n";
}

}  // namespace trajlm::plot
