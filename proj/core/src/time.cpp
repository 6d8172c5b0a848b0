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

#include "opsforge/time.hpp"

#include <charconv>
#include <cstdio>

namespace opsforge {

// Howard Hinnant's civil calendar algorithms.
int64_t days_from_civil(const CivilDate& date) {
  int64_t y = date.year;
  const int64_t m = date.month;
  const int64_t d = date.day;
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const int64_t yoe = y - era * 400;
  const int64_t doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + doe - 719468;
}

CivilDate civil_from_days(int64_t z) {
  z += 719468;
  const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const int64_t doe = z - era * 146097;
  const int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int64_t y = yoe + era * 400;
  const int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const int64_t mp = (5 * doy + 2) / 153;
  const int64_t d = doy - (153 * mp + 2) / 5 + 1;
  const int64_t m = mp < 10 ? mp + 3 : mp - 9;
  return CivilDate{
      static_cast<int>(y + (m <= 2)),
      static_cast<unsigned>(m),
      static_cast<unsigned>(d)};
}

namespace {

int64_t floor_div(int64_t a, int64_t b) {
  int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) {
    --q;
  }
  return q;
}

unsigned days_in_month(int year, unsigned month) {
  static constexpr unsigned kDays[] = {
      31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (month == 2) {
    const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    return leap ? 29 : 28;
  }
  return kDays[month - 1];
}

bool read_digits(std::string_view text, size_t pos, size_t count, int& out) {
  if (pos + count > text.size()) {
    return false;
  }
  int value = 0;
  for (size_t i = 0; i < count; ++i) {
    const char c = text[pos + i];
    if (c < '0' || c > '9') {
      return false;
    }
    value = value * 10 + (c - '0');
  }
  out = value;
  return true;
}

} // namespace

CivilDate utc_date(UtcInstant instant) {
  return civil_from_days(floor_div(instant.epoch_millis, kMillisPerDay));
}

UtcInstant start_of_day(const CivilDate& date) {
  return UtcInstant{days_from_civil(date) * kMillisPerDay};
}

std::string format_date(const CivilDate& date) {
  char buf[16];
  std::snprintf(
      buf, sizeof(buf), "%04d-%02u-%02u", date.year, date.month, date.day);
  return buf;
}

std::optional<CivilDate> parse_date(std::string_view text) {
  int y = 0, m = 0, d = 0;
  if (text.size() != 10 || text[4] != '-' || text[7] != '-' ||
      !read_digits(text, 0, 4, y) || !read_digits(text, 5, 2, m) ||
      !read_digits(text, 8, 2, d)) {
    return std::nullopt;
  }
  if (m < 1 || m > 12 || d < 1 ||
      static_cast<unsigned>(d) > days_in_month(y, static_cast<unsigned>(m))) {
    return std::nullopt;
  }
  return CivilDate{y, static_cast<unsigned>(m), static_cast<unsigned>(d)};
}

std::string format_instant(UtcInstant instant, int offset_minutes) {
  const int64_t local =
      instant.epoch_millis + int64_t{offset_minutes} * kMillisPerMinute;
  const int64_t days = floor_div(local, kMillisPerDay);
  const int64_t in_day = local - days * kMillisPerDay;
  const CivilDate date = civil_from_days(days);
  const int64_t hh = in_day / kMillisPerHour;
  const int64_t mm = (in_day / kMillisPerMinute) % 60;
  const int64_t ss = (in_day / kMillisPerSecond) % 60;
  const int64_t ms = in_day % kMillisPerSecond;
  char buf[48];
  int n = std::snprintf(
      buf,
      sizeof(buf),
      "%04d-%02u-%02uT%02lld:%02lld:%02lld.%03lld",
      date.year,
      date.month,
      date.day,
      static_cast<long long>(hh),
      static_cast<long long>(mm),
      static_cast<long long>(ss),
      static_cast<long long>(ms));
  if (offset_minutes == 0) {
    std::snprintf(buf + n, sizeof(buf) - n, "Z");
  } else {
    const int abs_off = offset_minutes < 0 ? -offset_minutes : offset_minutes;
    std::snprintf(
        buf + n,
        sizeof(buf) - n,
        "%c%02d:%02d",
        offset_minutes < 0 ? '-' : '+',
        abs_off / 60,
        abs_off % 60);
  }
  return buf;
}

std::optional<UtcInstant> normalize_timestamp(std::string_view raw) {
  if (raw.empty()) {
    return std::nullopt;
  }
  // Bare epoch milliseconds.
  if (raw.find_first_not_of("0123456789") == std::string_view::npos) {
    int64_t value = 0;
    auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), value);
    if (ec != std::errc() || ptr != raw.data() + raw.size()) {
      return std::nullopt;
    }
    return UtcInstant{value};
  }

  int year = 0, month = 0, day = 0, hour = 0, minute = 0, second = 0;
  if (raw.size() < 19 || raw[4] != '-' || raw[7] != '-' ||
      (raw[10] != 'T' && raw[10] != 't' && raw[10] != ' ') || raw[13] != ':' ||
      raw[16] != ':' || !read_digits(raw, 0, 4, year) ||
      !read_digits(raw, 5, 2, month) || !read_digits(raw, 8, 2, day) ||
      !read_digits(raw, 11, 2, hour) || !read_digits(raw, 14, 2, minute) ||
      !read_digits(raw, 17, 2, second)) {
    return std::nullopt;
  }
  if (month < 1 || month > 12 || day < 1 ||
      static_cast<unsigned>(day) >
          days_in_month(year, static_cast<unsigned>(month)) ||
      hour > 23 || minute > 59 || second > 59) {
    return std::nullopt;
  }

  size_t pos = 19;
  int64_t millis = 0;
  if (pos < raw.size() && (raw[pos] == '.' || raw[pos] == ',')) {
    ++pos;
    const size_t frac_begin = pos;
    int64_t scale = 100;
    while (pos < raw.size() && raw[pos] >= '0' && raw[pos] <= '9') {
      // Sub-millisecond digits are truncated.
      if (scale > 0) {
        millis += (raw[pos] - '0') * scale;
        scale /= 10;
      }
      ++pos;
    }
    if (pos == frac_begin) {
      return std::nullopt;
    }
  }

  if (pos >= raw.size()) {
    return std::nullopt; // no zone designator
  }
  int offset_minutes = 0;
  if (raw[pos] == 'Z' || raw[pos] == 'z') {
    ++pos;
  } else if (raw[pos] == '+' || raw[pos] == '-') {
    const int sign = raw[pos] == '-' ? -1 : 1;
    ++pos;
    int oh = 0, om = 0;
    if (!read_digits(raw, pos, 2, oh)) {
      return std::nullopt;
    }
    pos += 2;
    if (pos < raw.size() && raw[pos] == ':') {
      ++pos;
    }
    if (!read_digits(raw, pos, 2, om)) {
      return std::nullopt;
    }
    pos += 2;
    if (om > 59) {
      return std::nullopt;
    }
    offset_minutes = sign * (oh * 60 + om);
    if (offset_minutes < -12 * 60 || offset_minutes > 14 * 60) {
      return std::nullopt;
    }
  } else {
    return std::nullopt;
  }
  if (pos != raw.size()) {
    return std::nullopt;
  }

  const int64_t days = days_from_civil(CivilDate{
      year, static_cast<unsigned>(month), static_cast<unsigned>(day)});
  const int64_t local = days * kMillisPerDay + hour * kMillisPerHour +
      minute * kMillisPerMinute + second * kMillisPerSecond + millis;
  const int64_t utc = local - int64_t{offset_minutes} * kMillisPerMinute;
  if (utc < 0) {
    return std::nullopt;
  }
  return UtcInstant{utc};
}

} // namespace opsforge
