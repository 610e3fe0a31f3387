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

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace trajlm {

/// Average Gregorian month length in days; used wherever a schedule is
/// expressed in (possibly fractional) months.
inline constexpr double kDaysPerMonth = 365.2425 / 12.0;

/// Calendar timestamp at minute resolution (UTC, no leap seconds).
class DateTime {
 public:
  constexpr DateTime() = default;

  static DateTime from_civil(int year, unsigned month, unsigned day,
                             unsigned hour = 0, unsigned minute = 0);
  /// Accepts "YYYY-MM-DD", "YYYY-MM-DDTHH:MM", optional ":SS" and a
  /// trailing "Z". Seconds are truncated.
  static DateTime parse(std::string_view iso);

  std::int64_t minutes_since_epoch() const { return minutes_; }
  static constexpr DateTime from_minutes(std::int64_t m) {
    DateTime d;
    d.minutes_ = m;
    return d;
  }

  int year() const;
  unsigned month() const;
  unsigned day() const;
  unsigned hour() const;
  unsigned minute() const;
  /// Monday = 0 ... Sunday = 6.
  unsigned day_of_week() const;

  DateTime plus_minutes(std::int64_t m) const { return from_minutes(minutes_ + m); }
  /// Adds a fractional month count, rounded to the nearest minute.
  DateTime plus_months(double months) const;
  double months_until(DateTime later) const;

  /// "YYYY-MM-DDTHH:MM".
  std::string iso() const;

  auto operator<=>(const DateTime&) const = default;

 private:
  std::int64_t minutes_ = 0;
};

}  // namespace trajlm
