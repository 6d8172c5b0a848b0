/*
 * Copyright (c) 2026 The opsforge Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace opsforge {

inline constexpr int64_t kMillisPerSecond = 1000;
inline constexpr int64_t kMillisPerMinute = 60 * kMillisPerSecond;
inline constexpr int64_t kMillisPerHour = 60 * kMillisPerMinute;
inline constexpr int64_t kMillisPerDay = 24 * kMillisPerHour;

/// A point in time, stored as milliseconds since the Unix epoch in UTC.
struct UtcInstant {
  int64_t epoch_millis = 0;

  constexpr auto operator<=>(const UtcInstant&) const = default;

  constexpr UtcInstant floor_to(int64_t granularity_ms) const {
    return UtcInstant{epoch_millis - epoch_millis % granularity_ms};
  }
  constexpr UtcInstant plus_millis(int64_t ms) const {
    return UtcInstant{epoch_millis + ms};
  }
};

/// Calendar date in UTC.
struct CivilDate {
  int year = 1970;
  unsigned month = 1;
  unsigned day = 1;

  constexpr auto operator<=>(const CivilDate&) const = default;
};

/// Days since 1970-01-01 for a proleptic Gregorian date.
int64_t days_from_civil(const CivilDate& date);
CivilDate civil_from_days(int64_t days);

CivilDate utc_date(UtcInstant instant);
UtcInstant start_of_day(const CivilDate& date);

/// "YYYY-MM-DD".
std::string format_date(const CivilDate& date);
std::optional<CivilDate> parse_date(std::string_view text);

/// ISO-8601 with millisecond precision. A zero offset renders as 'Z';
/// any other offset renders as "+HH:MM" / "-HH:MM" with local wall time.
std::string format_instant(UtcInstant instant, int offset_minutes = 0);

/// Parses ISO-8601 text carrying an explicit zone ('Z' or a numeric
/// offset in -12:00..+14:00), or a string of digits holding epoch millis.
/// Text without a zone is rejected rather than guessed.
std::optional<UtcInstant> normalize_timestamp(std::string_view raw);

} // namespace opsforge
