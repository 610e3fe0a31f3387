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

#include "trajlm/corpus.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "trajlm/common.h"

namespace trajlm {
namespace {

using ordered_json = nlohmann::ordered_json;

struct Encoded {
  DateTime time;
  int modality;
  int token;
  double value;
  bool sleep;
};

}  // namespace

std::string_view to_string(Sex sex) {
  switch (sex) {
    case Sex::kFemale: return "female";
    case Sex::kMale: return "male";
    case Sex::kUnknown: return "unknown";
  }
  return "unknown";
}

Sex parse_sex(std::string_view text) {
  if (text == "female") return Sex::kFemale;
  if (text == "male") return Sex::kMale;
  if (text == "unknown") return Sex::kUnknown;
  throw Error(fmt::format("unknown sex '{}'", text));
}

TimeFeatures time_features(DateTime t, bool sleep, int year_base) {
  const int year_index = t.year() - year_base;
  if (year_index < 0 || year_index >= kTemporalVocabSizes[4]) {
    throw Error(fmt::format("year {} outside the temporal table [{}, {})", t.year(), year_base,
                            year_base + kTemporalVocabSizes[4]));
  }
  return {static_cast<int>(t.day_of_week()), static_cast<int>(t.hour()),
          static_cast<int>(t.minute()),      static_cast<int>(t.month()),
          year_index,                        static_cast<int>(t.day()),
          sleep ? 1 : 0};
}

DateTime datetime_of(const TimeFeatures& f, int year_base) {
  return DateTime::from_civil(f[4] + year_base, static_cast<unsigned>(f[3]),
                              static_cast<unsigned>(f[5]), static_cast<unsigned>(f[1]),
                              static_cast<unsigned>(f[2]));
}

void TokenSequence::check_aligned() const {
  const auto t = tokens.size();
  if (values.size() != t || modalities.size() != t + 1 || times.size() != t + 1) {
    throw Error(fmt::format(
        "stream length mismatch: tokens {}, values {}, modalities {}, times {} (expected T, T, "
        "T+1, T+1)",
        t, values.size(), modalities.size(), times.size()));
  }
  if (visit_boundary < 0 || visit_boundary > static_cast<int>(t)) {
    throw Error(fmt::format("visit boundary {} outside [0, {}]", visit_boundary, t));
  }
}

TokenSequence TokenSequence::filtered(const std::vector<char>& keep) const {
  TokenSequence out;
  int boundary = 0;
  for (int i = 0; i < size(); ++i) {
    if (!keep[static_cast<std::size_t>(i)]) continue;
    out.tokens.push_back(tokens[static_cast<std::size_t>(i)]);
    out.values.push_back(values[static_cast<std::size_t>(i)]);
    out.modalities.push_back(modalities[static_cast<std::size_t>(i)]);
    out.times.push_back(times[static_cast<std::size_t>(i)]);
    if (i < visit_boundary) ++boundary;
  }
  out.modalities.push_back(modalities.back());
  out.times.push_back(times.back());
  out.visit_boundary = boundary;
  return out;
}

TokenSequence TokenSequence::prefix(int n) const {
  if (n < 0 || n > size()) throw Error(fmt::format("prefix {} outside [0, {}]", n, size()));
  TokenSequence out;
  out.tokens.assign(tokens.begin(), tokens.begin() + n);
  out.values.assign(values.begin(), values.begin() + n);
  out.modalities.assign(modalities.begin(), modalities.begin() + n + 1);
  out.times.assign(times.begin(), times.begin() + n + 1);
  out.visit_boundary = std::min(visit_boundary, n);
  return out;
}

TokenSequence assemble_sequence(const ParticipantRecord& record, const Vocabulary& vocab,
                                int max_len, int year_base) {
  if (max_len < 0) throw Error("max_len must be >= 0");
  std::vector<Encoded> encoded;
  encoded.reserve(record.events.size());
  for (std::size_t i = 0; i < record.events.size(); ++i) {
    const auto& ev = record.events[i];
    try {
      const int m = vocab.index_of(ev.modality);
      Encoded e{ev.time, m, 0, 0.0, ev.sleep};
      if (const double* v = std::get_if<double>(&ev.value)) {
        e.token = encode_value(vocab, m, *v);
        e.value = *v;
      } else {
        e.token = encode_category(vocab, m, std::get<std::string>(ev.value));
      }
      encoded.push_back(e);
    } catch (const Error& err) {
      throw Error(fmt::format("participant '{}', event {} ({} at {}): {}", record.id, i,
                              ev.modality, ev.time.iso(), err.what()));
    }
  }
  std::stable_sort(encoded.begin(), encoded.end(), [](const Encoded& a, const Encoded& b) {
    if (a.time != b.time) return a.time < b.time;
    if (a.modality != b.modality) return a.modality < b.modality;
    // Same instant and channel: order by content so the result does not
    // depend on input order.
    if (a.token != b.token) return a.token < b.token;
    return a.value < b.value;
  });
  if (encoded.size() > static_cast<std::size_t>(max_len)) {
    encoded.resize(static_cast<std::size_t>(max_len));
  }

  TokenSequence seq;
  for (const auto& e : encoded) {
    seq.tokens.push_back(e.token);
    seq.values.push_back(e.value);
    seq.modalities.push_back(e.modality);
    try {
      seq.times.push_back(time_features(e.time, e.sleep, year_base));
    } catch (const Error& err) {
      throw Error(fmt::format("participant '{}': {}", record.id, err.what()));
    }
  }
  DateTime last;
  if (!encoded.empty()) {
    last = encoded.back().time;
  } else if (!record.visits.empty()) {
    last = record.visits.front();
  } else {
    last = DateTime::from_civil(year_base, 1, 1);
  }
  seq.modalities.push_back(vocab.pad_modality());
  seq.times.push_back(time_features(last, false, year_base));

  seq.visit_boundary = seq.size();
  if (record.visits.size() >= 2) {
    const DateTime v2 = record.visits[1];
    const auto it = std::find_if(encoded.begin(), encoded.end(),
                                 [&](const Encoded& e) { return e.time >= v2; });
    seq.visit_boundary = static_cast<int>(it - encoded.begin());
  }
  return seq;
}

EncodedParticipant encode_participant(const ParticipantRecord& record, const Vocabulary& vocab,
                                      int max_len, int year_base) {
  return {record.id, record.age, record.sex,
          assemble_sequence(record, vocab, max_len, year_base)};
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.noise_chance = c.removal_chance = c.block_chance = c.subset_chance = c.exclusion_chance = 0.0;
  return c;
}

void AugmentConfig::validate() const {
  for (double p : {noise_chance, removal_chance, block_chance, subset_chance, exclusion_chance,
                   removal_rate, block_rate, subset_fraction}) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error("augmentation probabilities must lie in [0, 1]");
  }
  if (noise_rate < 0.0 || block_count < 0) throw Error("augmentation rates must be >= 0");
}

TokenSequence augment(const TokenSequence& seq, const Vocabulary& vocab,
                      const AugmentConfig& config, std::mt19937_64& rng) {
  seq.check_aligned();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // All gates are drawn up front so each augmentation's decision is
  // independent of what the earlier ones did.
  const bool do_noise = unit(rng) < config.noise_chance;
  const bool do_removal = unit(rng) < config.removal_chance;
  const bool do_block = unit(rng) < config.block_chance;
  const bool do_subset = unit(rng) < config.subset_chance;
  const bool do_exclusion = unit(rng) < config.exclusion_chance;

  TokenSequence out = seq;
  if (do_noise) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < out.size(); ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const int m = out.modalities[ui];
      if (m < 0 || m >= vocab.modality_count()) continue;
      const auto& spec = vocab.modality(m);
      if (!spec.continuous()) continue;
      out.values[ui] += config.noise_rate * spec.train_sd * gauss(rng);
      out.tokens[ui] = spec.cum_base + spec.bin_of(out.values[ui]);
    }
  }
  if (do_removal && out.size() > 0) {
    std::vector<char> keep(static_cast<std::size_t>(out.size()));
    for (auto& k : keep) k = unit(rng) >= config.removal_rate;
    out = out.filtered(keep);
  }
  if (do_block && out.size() > 0 && config.block_count > 0) {
    const int len = std::max(1, static_cast<int>(std::lround(config.block_rate * out.size())));
    std::vector<char> keep(static_cast<std::size_t>(out.size()), 1);
    std::uniform_int_distribution<int> start(0, out.size() - 1);
    for (int b = 0; b < config.block_count; ++b) {
      const int s = start(rng);
      for (int i = s; i < std::min(out.size(), s + len); ++i) keep[static_cast<std::size_t>(i)] = 0;
    }
    out = out.filtered(keep);
  }
  auto present = [&out] {
    std::set<int> s(out.modalities.begin(), out.modalities.end() - 1);
    return std::vector<int>(s.begin(), s.end());
  };
  auto drop_modalities = [&out](const std::set<int>& drop) {
    std::vector<char> keep(static_cast<std::size_t>(out.size()));
    for (int i = 0; i < out.size(); ++i) {
      keep[static_cast<std::size_t>(i)] = !drop.count(out.modalities[static_cast<std::size_t>(i)]);
    }
    out = out.filtered(keep);
  };
  if (do_subset && out.size() > 0) {
    auto mods = present();
    std::shuffle(mods.begin(), mods.end(), rng);
    const auto retain = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(config.subset_fraction * mods.size())));
    drop_modalities(std::set<int>(mods.begin() + static_cast<std::ptrdiff_t>(retain), mods.end()));
  }
  if (do_exclusion && out.size() > 0) {
    auto mods = present();
    std::shuffle(mods.begin(), mods.end(), rng);
    const int most = std::max(1, static_cast<int>(mods.size()) / 4);
    const int count = std::uniform_int_distribution<int>(1, most)(rng);
    drop_modalities(std::set<int>(mods.begin(), mods.begin() + count));
  }
  return out;
}

ParticipantRecord parse_participant(std::string_view line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const ordered_json::exception& e) {
    throw Error(fmt::format("malformed JSON: {}", e.what()));
  }
  ParticipantRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.age = j.at("age").get<double>();
    r.sex = parse_sex(j.value("sex", std::string("unknown")));
    for (const auto& v : j.value("visits", ordered_json::array())) {
      r.visits.push_back(DateTime::parse(v.get<std::string>()));
    }
    std::sort(r.visits.begin(), r.visits.end());
    for (const auto& je : j.at("events")) {
      Event e;
      e.time = DateTime::parse(je.at("t").get<std::string>());
      e.modality = je.at("m").get<std::string>();
      const auto& v = je.at("v");
      if (v.is_number()) {
        e.value = v.get<double>();
      } else if (v.is_string()) {
        e.value = v.get<std::string>();
      } else {
        throw Error(fmt::format("event value for '{}' must be a number or string", e.modality));
      }
      e.sleep = je.value("sleep", false);
      r.events.push_back(std::move(e));
    }
  } catch (const ordered_json::exception& e) {
    throw Error(fmt::format("malformed participant record: {}", e.what()));
  }
  return r;
}

std::string participant_to_json(const ParticipantRecord& record) {
  ordered_json j;
  j["id"] = record.id;
  j["age"] = record.age;
  j["sex"] = std::string(to_string(record.sex));
  auto visits = ordered_json::array();
  for (const auto& v : record.visits) visits.push_back(v.iso());
  j["visits"] = std::move(visits);
  auto events = ordered_json::array();
  for (const auto& e : record.events) {
    ordered_json je;
    je["t"] = e.time.iso();
    je["m"] = e.modality;
    if (const double* v = std::get_if<double>(&e.value)) {
      je["v"] = *v;
    } else {
      je["v"] = std::get<std::string>(e.value);
    }
    je["sleep"] = e.sleep;
    events.push_back(std::move(je));
  }
  j["events"] = std::move(events);
  return j.dump();
}

std::vector<ParticipantRecord> read_cohort(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("missing file '{}'", path.string()));
  std::vector<ParticipantRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_participant(line));
    } catch (const Error& e) {
      throw Error(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

void write_cohort(const std::filesystem::path& path,
                  const std::vector<ParticipantRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  for (const auto& r : records) out << participant_to_json(r) << '\n';
}

std::vector<RawModality> collect_raw_modalities(const std::vector<ParticipantRecord>& records,
                                                const std::map<std::string, int>& bin_overrides) {
  std::vector<RawModality> raw;
  std::map<std::string, std::size_t> index;
  for (const auto& r : records) {
    for (const auto& e : r.events) {
      auto [it, inserted] = index.emplace(e.modality, raw.size());
      const bool numeric = std::holds_alternative<double>(e.value);
      if (inserted) {
        RawModality m;
        m.name = e.modality;
        m.kind = numeric ? ModalityKind::kContinuous : ModalityKind::kCategorical;
        if (auto o = bin_overrides.find(e.modality); o != bin_overrides.end()) {
          m.bin_override = o->second;
        }
        raw.push_back(std::move(m));
      }
      auto& m = raw[it->second];
      if (numeric != (m.kind == ModalityKind::kContinuous)) {
        throw Error(fmt::format("modality '{}' mixes numeric and categorical values (participant '{}')",
                                e.modality, r.id));
      }
      if (numeric) {
        m.values.push_back(std::get<double>(e.value));
      } else {
        m.category_values.push_back(std::get<std::string>(e.value));
      }
    }
  }
  return raw;
}

}  // namespace trajlm
