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

#include "trajlm/datetime.h"

#include <chrono>
#include <cmath>
#include <cstdio>

#include <fmt/format.h>

#include "trajlm/common.h"

namespace trajlm {
namespace {

namespace chr = std::chrono;

constexpr std::int64_t kMinutesPerDay = 24 * 60;

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

chr::year_month_day civil(std::int64_t minutes) {
  const auto days = floor_div(minutes, kMinutesPerDay);
  return chr::year_month_day{chr::sys_days{chr::days{days}}};
}

std::int64_t minute_of_day(std::int64_t minutes) {
  return minutes - floor_div(minutes, kMinutesPerDay) * kMinutesPerDay;
}

}  // namespace

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

DateTime DateTime::from_civil(int year, unsigned month, unsigned day,
                              unsigned hour, unsigned minute) {
  const chr::year_month_day ymd{chr::year{year}, chr::month{month},
                                chr::day{day}};
  if (!ymd.ok() || hour > 23 || minute > 59) {
    throw Error(fmt::format("invalid calendar datetime {:04d}-{:02d}-{:02d} {:02d}:{:02d}",
                            year, month, day, hour, minute));
  }
  const auto days = chr::sys_days{ymd}.time_since_epoch().count();
  return from_minutes(days * kMinutesPerDay + hour * 60 + minute);
}

DateTime DateTime::parse(std::string_view iso) {
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
  const std::string buf(iso);
  int consumed = 0;
  const int n = std::sscanf(buf.c_str(), "%d-%u-%u%n", &y, &mo, &d, &consumed);
  if (n != 3) throw Error(fmt::format("malformed timestamp '{}'", iso));
  std::string_view rest = std::string_view(buf).substr(static_cast<std::size_t>(consumed));
  if (!rest.empty() && (rest.front() == 'T' || rest.front() == ' ')) {
    int used = 0;
    const std::string tail(rest.substr(1));
    if (std::sscanf(tail.c_str(), "%u:%u%n", &h, &mi, &used) != 2) {
      throw Error(fmt::format("malformed timestamp '{}'", iso));
    }
    rest = rest.substr(1 + static_cast<std::size_t>(used));
    if (!rest.empty() && rest.front() == ':') {
      int used_s = 0;
      const std::string sec(rest.substr(1));
      if (std::sscanf(sec.c_str(), "%u%n", &s, &used_s) != 1) {
        throw Error(fmt::format("malformed timestamp '{}'", iso));
      }
      rest = rest.substr(1 + static_cast<std::size_t>(used_s));
      // Fractional seconds are dropped along with the seconds.
      if (!rest.empty() && rest.front() == '.') {
        std::size_t i = 1;
        while (i < rest.size() && rest[i] >= '0' && rest[i] <= '9') ++i;
        rest = rest.substr(i);
      }
    }
  }
  if (!rest.empty() && rest != "Z") {
    throw Error(fmt::format("malformed timestamp '{}'", iso));
  }
  return from_civil(y, mo, d, h, mi);
}

int DateTime::year() const { return static_cast<int>(civil(minutes_).year()); }
unsigned DateTime::month() const { return static_cast<unsigned>(civil(minutes_).month()); }
unsigned DateTime::day() const { return static_cast<unsigned>(civil(minutes_).day()); }
unsigned DateTime::hour() const { return static_cast<unsigned>(minute_of_day(minutes_) / 60); }
unsigned DateTime::minute() const { return static_cast<unsigned>(minute_of_day(minutes_) % 60); }

unsigned DateTime::day_of_week() const {
  const auto days = floor_div(minutes_, kMinutesPerDay);
  const chr::weekday wd{chr::sys_days{chr::days{days}}};
  return wd.iso_encoding() - 1;
}

DateTime DateTime::plus_months(double months) const {
  const double m = std::round(months * kDaysPerMonth * kMinutesPerDay);
  return plus_minutes(static_cast<std::int64_t>(m));
}

double DateTime::months_until(DateTime later) const {
  return static_cast<double>(later.minutes_ - minutes_) / (kDaysPerMonth * kMinutesPerDay);
}

std::string DateTime::iso() const {
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}", year(), month(), day(), hour(),
                     minute());
}

}  // namespace trajlm
