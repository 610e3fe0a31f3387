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

#include "trajlm/vocab.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "trajlm/common.h"

namespace trajlm {
namespace {

using json = nlohmann::json;

double quantile_type7(std::span<const double> sorted, double p) {
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

std::string real(double v) { return fmt::format("{:.17g}", v); }

void append_reals(std::string& out, std::span<const double> xs) {
  out += '[';
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += real(xs[i]);
  }
  out += ']';
}

}  // namespace

std::string_view to_string(ModalityKind kind) {
  return kind == ModalityKind::kContinuous ? "continuous" : "categorical";
}

int ModalitySpec::bin_count() const {
  return continuous() ? static_cast<int>(midpoints.size())
                      : static_cast<int>(categories.size());
}

int ModalitySpec::bin_of(double value) const {
  // Interior edges are bin_edges[1 .. K-1]; bin i is [edge_i, edge_{i+1}).
  const auto first = bin_edges.begin() + 1;
  const auto last = bin_edges.end() - 1;
  if (first >= last) return 0;
  return static_cast<int>(std::upper_bound(first, last, value) - first);
}

int ModalitySpec::category_index(std::string_view category) const {
  const auto it = std::find(categories.begin(), categories.end(), category);
  return it == categories.end() ? -1 : static_cast<int>(it - categories.begin());
}

Vocabulary::Vocabulary(std::vector<ModalitySpec> modalities, std::vector<std::string> warnings)
    : modalities_(std::move(modalities)), warnings_(std::move(warnings)) {
  if (modalities_.empty()) throw Error("vocabulary needs at least one modality");
  int next_base = 0;
  for (std::size_t i = 0; i < modalities_.size(); ++i) {
    auto& m = modalities_[i];
    m.id = static_cast<int>(i);
    if (!by_name_.emplace(m.name, m.id).second) {
      throw Error(fmt::format("duplicate modality name '{}'", m.name));
    }
    const int k = m.bin_count();
    if (k < 1) throw Error(fmt::format("modality '{}' has no bins", m.name));
    if (m.cum_base != next_base) {
      throw Error(fmt::format("modality '{}' has cum_base {} but expected {}", m.name,
                              m.cum_base, next_base));
    }
    if (m.continuous()) {
      if (m.bin_edges.size() != static_cast<std::size_t>(k) + 1 ||
          m.quantile_ranges.size() != static_cast<std::size_t>(k)) {
        throw Error(fmt::format("modality '{}': edges/midpoints/quantile ranges disagree on K",
                                m.name));
      }
      if (!(m.train_sd > 0.0)) {
        throw Error(fmt::format("modality '{}': train_sd must be positive", m.name));
      }
    } else {
      std::set<std::string> seen(m.categories.begin(), m.categories.end());
      if (seen.size() != m.categories.size()) {
        throw Error(fmt::format("modality '{}' has duplicate category names", m.name));
      }
    }
    next_base += k;
  }
  total_tokens_ = next_base;
}

const ModalitySpec& Vocabulary::modality(int id) const {
  if (id < 0 || id >= modality_count()) {
    throw Error(fmt::format("modality id {} out of range [0, {})", id, modality_count()));
  }
  return modalities_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::find(std::string_view name) const {
  const auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::index_of(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw Error(fmt::format("unknown modality '{}'", name));
}

std::string Vocabulary::to_json() const {
  std::string out = "{\"modalities\":[";
  for (std::size_t i = 0; i < modalities_.size(); ++i) {
    const auto& m = modalities_[i];
    if (i) out += ',';
    out += "{\"name\":" + json(m.name).dump();
    out += ",\"kind\":\"" + std::string(to_string(m.kind)) + "\"";
    out += ",\"edges\":";
    append_reals(out, m.bin_edges);
    out += ",\"midpoints\":";
    append_reals(out, m.midpoints);
    out += ",\"categories\":" + json(m.categories).dump();
    out += ",\"train_sd\":" + real(m.train_sd);
    out += ",\"quantile_ranges\":[";
    for (std::size_t r = 0; r < m.quantile_ranges.size(); ++r) {
      if (r) out += ',';
      out += '[' + real(m.quantile_ranges[r].lo) + ',' + real(m.quantile_ranges[r].hi) + ']';
    }
    out += "],\"cum_base\":" + std::to_string(m.cum_base) + '}';
  }
  out += "],\"total_tokens\":" + std::to_string(total_tokens_);
  out += ",\"pad_token\":" + std::to_string(pad_token()) + "}\n";
  return out;
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(fmt::format("malformed vocabulary JSON: {}", e.what()));
  }
  std::vector<ModalitySpec> mods;
  try {
    for (const auto& jm : doc.at("modalities")) {
      ModalitySpec m;
      m.name = jm.at("name").get<std::string>();
      const auto kind = jm.at("kind").get<std::string>();
      if (kind == "continuous") {
        m.kind = ModalityKind::kContinuous;
      } else if (kind == "categorical") {
        m.kind = ModalityKind::kCategorical;
      } else {
        throw Error(fmt::format("modality '{}': unknown kind '{}'", m.name, kind));
      }
      m.bin_edges = jm.at("edges").get<std::vector<double>>();
      m.midpoints = jm.at("midpoints").get<std::vector<double>>();
      m.categories = jm.at("categories").get<std::vector<std::string>>();
      m.train_sd = jm.at("train_sd").get<double>();
      for (const auto& r : jm.at("quantile_ranges")) {
        m.quantile_ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
      }
      m.cum_base = jm.at("cum_base").get<int>();
      mods.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw Error(fmt::format("malformed vocabulary JSON: {}", e.what()));
  }
  Vocabulary v(std::move(mods));
  if (doc.value("total_tokens", -1) != v.total_tokens() ||
      doc.value("pad_token", -1) != v.pad_token()) {
    throw Error("vocabulary JSON: total_tokens/pad_token disagree with modality table");
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << to_json();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("missing file '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::uint64_t Vocabulary::fingerprint() const { return fnv1a64(to_json()); }

int choose_bin_count(std::size_t n_samples, double sd, std::optional<int> override_k,
                     std::optional<std::size_t> distinct_values) {
  if (n_samples < 2) throw Error("insufficient data: at least 2 samples required to bin");
  if (sd < 0.0 || !std::isfinite(sd)) throw Error("standard deviation must be finite and >= 0");
  if (override_k) {
    if (*override_k < 1) throw Error("bin override must be >= 1");
    return *override_k;
  }
  if (sd == 0.0 || (distinct_values && *distinct_values <= 1)) return 1;
  const double raw = std::round(std::sqrt(static_cast<double>(n_samples)) / 4.0);
  int k = static_cast<int>(std::clamp(raw, 2.0, 129.0));
  if (distinct_values && *distinct_values < static_cast<std::size_t>(k)) {
    k = static_cast<int>(*distinct_values);
  }
  return k;
}

BinFit fit_bins(std::span<const double> values, int k) {
  if (values.empty()) throw Error("fit_bins: no values");
  if (k < 1) throw Error("fit_bins: K must be >= 1");
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw Error("fit_bins: non-finite measurement");
  }
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();

  BinFit fit;
  double mean = 0.0;
  for (double v : sorted) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : sorted) ss += (v - mean) * (v - mean);
  fit.train_sd = std::sqrt(ss / static_cast<double>(n));

  const double lo = sorted.front();
  const double hi = sorted.back();
  std::vector<double> interior;
  for (int j = 1; j < k; ++j) {
    const double q = quantile_type7(sorted, static_cast<double>(j) / k);
    if (q > lo && q < hi && (interior.empty() || q > interior.back())) interior.push_back(q);
  }
  const int effective = static_cast<int>(interior.size()) + 1;
  if (lo == hi) {
    fit.warning = fmt::format("all {} training values identical; single degenerate bin", n);
  } else if (effective < k) {
    fit.warning = fmt::format("duplicate quantile edges collapsed: K {} -> {}", k, effective);
  }

  fit.bin_edges.reserve(interior.size() + 2);
  fit.bin_edges.push_back(lo);
  fit.bin_edges.insert(fit.bin_edges.end(), interior.begin(), interior.end());
  fit.bin_edges.push_back(hi);
  for (std::size_t i = 0; i + 1 < fit.bin_edges.size(); ++i) {
    fit.midpoints.push_back(0.5 * (fit.bin_edges[i] + fit.bin_edges[i + 1]));
  }

  // Quantile level of each interior edge: fraction of training values
  // strictly below it.
  double prev = 0.0;
  for (double e : interior) {
    const auto below = std::lower_bound(sorted.begin(), sorted.end(), e) - sorted.begin();
    const double level = static_cast<double>(below) / static_cast<double>(n);
    fit.quantile_ranges.push_back({prev, level});
    prev = level;
  }
  fit.quantile_ranges.push_back({prev, 1.0});
  return fit;
}

Vocabulary build_vocabulary(std::span<const RawModality> raw) {
  if (raw.empty()) throw Error("vocabulary needs at least one modality");
  std::vector<ModalitySpec> mods;
  std::vector<std::string> warnings;
  int base = 0;
  for (const auto& r : raw) {
    ModalitySpec m;
    m.name = r.name;
    m.kind = r.kind;
    m.cum_base = base;
    if (r.kind == ModalityKind::kContinuous) {
      if (r.values.empty()) {
        throw Error(fmt::format("modality '{}' has no training values", r.name));
      }
      std::vector<double> sorted = r.values;
      std::sort(sorted.begin(), sorted.end());
      const auto distinct = static_cast<std::size_t>(
          std::unique(sorted.begin(), sorted.end()) - sorted.begin());
      int k = 1;
      if (r.values.size() >= 2) {
        double mean = 0.0;
        for (double v : r.values) mean += v;
        mean /= static_cast<double>(r.values.size());
        double ss = 0.0;
        for (double v : r.values) ss += (v - mean) * (v - mean);
        const double sd = std::sqrt(ss / static_cast<double>(r.values.size()));
        k = choose_bin_count(r.values.size(), sd, r.bin_override, distinct);
      }
      BinFit fit = fit_bins(r.values, k);
      if (fit.warning) warnings.push_back(fmt::format("{}: {}", r.name, *fit.warning));
      m.bin_edges = std::move(fit.bin_edges);
      m.midpoints = std::move(fit.midpoints);
      m.quantile_ranges = std::move(fit.quantile_ranges);
      // A degenerate modality keeps a unit scale so value encodings stay finite.
      m.train_sd = fit.train_sd > 0.0 ? fit.train_sd : 1.0;
    } else {
      if (!r.categories.empty()) {
        m.categories = r.categories;
      } else {
        std::set<std::string> seen(r.category_values.begin(), r.category_values.end());
        m.categories.assign(seen.begin(), seen.end());
      }
      if (m.categories.empty()) {
        throw Error(fmt::format("categorical modality '{}' has no categories", r.name));
      }
    }
    base += m.bin_count();
    mods.push_back(std::move(m));
  }
  return Vocabulary(std::move(mods), std::move(warnings));
}

int encode_value(const Vocabulary& vocab, int modality, double value) {
  const auto& m = vocab.modality(modality);
  if (!m.continuous()) {
    throw Error(fmt::format("modality '{}' is categorical; encode a category", m.name));
  }
  if (!std::isfinite(value)) {
    throw Error(fmt::format("non-finite measurement for modality '{}'", m.name));
  }
  return m.cum_base + m.bin_of(value);
}

int encode_category(const Vocabulary& vocab, int modality, std::string_view category) {
  const auto& m = vocab.modality(modality);
  if (m.continuous()) {
    throw Error(fmt::format("modality '{}' is continuous; encode a value", m.name));
  }
  const int idx = m.category_index(category);
  if (idx < 0) {
    throw Error(fmt::format("unknown category '{}' for modality '{}'", category, m.name));
  }
  return m.cum_base + idx;
}

DecodedToken decode_token(const Vocabulary& vocab, int token) {
  if (token < 0 || token >= vocab.total_tokens()) {
    throw Error(fmt::format("non-measurement token {}", token));
  }
  const auto& mods = vocab.modalities();
  const auto it = std::upper_bound(mods.begin(), mods.end(), token,
                                   [](int t, const ModalitySpec& m) { return t < m.cum_base; });
  const auto& m = *(it - 1);
  DecodedToken d;
  d.modality = m.id;
  d.bin = token - m.cum_base;
  if (m.continuous()) {
    d.midpoint = m.midpoints[static_cast<std::size_t>(d.bin)];
  } else {
    d.category = m.categories[static_cast<std::size_t>(d.bin)];
  }
  return d;
}

std::vector<int> quantile_match(const Vocabulary& vocab, int modality,
                                std::span<const double> external_values) {
  const auto& m = vocab.modality(modality);
  if (!m.continuous()) {
    throw Error(fmt::format("quantile matching needs a continuous modality, '{}' is categorical",
                            m.name));
  }
  if (external_values.empty()) throw Error("quantile matching needs at least one value");
  std::vector<double> sorted(external_values.begin(), external_values.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw Error("non-finite measurement in external sample");
  }
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  const auto k = m.quantile_ranges.size();

  std::vector<int> out;
  out.reserve(external_values.size());
  for (double x : external_values) {
    const auto lower = std::lower_bound(sorted.begin(), sorted.end(), x);
    const auto upper = std::upper_bound(lower, sorted.end(), x);
    const double less = static_cast<double>(lower - sorted.begin());
    const double equal = static_cast<double>(upper - lower);
    const double midrank = less + (equal + 1.0) / 2.0;
    const double q = (midrank - 0.5) / n;
    std::size_t bin = 0;
    while (bin + 1 < k && q >= m.quantile_ranges[bin].hi) ++bin;
    out.push_back(m.cum_base + static_cast<int>(bin));
  }
  return out;
}

}  // namespace trajlm
