#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "anl/common.hpp"

namespace anl {

// Civil-calendar arithmetic on UTC epoch seconds. Algorithms from the
// standard days/civil round trips; valid far beyond any data we touch.

constexpr std::int64_t kSecondsPerDay = 86400;

constexpr std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct CivilDate {
  int year;
  unsigned month;
  unsigned day;
};

constexpr CivilDate civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : -9);
  return {static_cast<int>(y + (m <= 2)), m, d};
}

constexpr bool is_leap_year(int y) { return y % 4 == 0 && (y % 100 != 0 || y % 400 == 0); }

constexpr int days_in_year(int y) { return is_leap_year(y) ? 366 : 365; }

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline std::int64_t epoch_day(std::int64_t ts) { return floor_div(ts, kSecondsPerDay); }

inline std::int64_t seconds_of_day(std::int64_t ts) { return ts - epoch_day(ts) * kSecondsPerDay; }

// 0 = Monday ... 6 = Sunday. 1970-01-01 was a Thursday.
inline int day_of_week(std::int64_t ts) {
  return static_cast<int>(((epoch_day(ts) % 7) + 7 + 3) % 7);
}

// 1-based day within the civil year.
inline int day_of_year(std::int64_t ts) {
  CivilDate c = civil_from_days(epoch_day(ts));
  return static_cast<int>(epoch_day(ts) - days_from_civil(c.year, 1, 1)) + 1;
}

inline int civil_year(std::int64_t ts) { return civil_from_days(epoch_day(ts)).year; }

// Fraction of year growing linearly from 0 at Jan 1 00:00 to 1 at Dec 31 00:00.
inline double time_of_year(std::int64_t ts) {
  CivilDate c = civil_from_days(epoch_day(ts));
  double day_frac = static_cast<double>(seconds_of_day(ts)) / kSecondsPerDay;
  return (day_of_year(ts) - 1 + day_frac) / (days_in_year(c.year) - 1);
}

inline double time_of_day(std::int64_t ts) {
  return static_cast<double>(seconds_of_day(ts)) / kSecondsPerDay;
}

namespace detail {

inline bool parse_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  int v = 0;
  for (std::size_t i = 0; i < len; ++i) {
    char c = s[pos + i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

}  // namespace detail

// Accepts `YYYY-MM-DD` and RFC-3339 `YYYY-MM-DDThh:mm:ss` with optional
// fractional seconds (ignored) and `Z` or `±hh:mm` offset. A space is
// tolerated in place of `T`.
inline std::int64_t parse_timestamp(std::string_view s) {
  auto fail = [&]() -> std::int64_t {
    throw DataError("malformed timestamp: '" + std::string(s) + "'");
  };
  int y, mo, d;
  if (!detail::parse_int(s, 0, 4, y) || s.size() < 10 || s[4] != '-' || s[7] != '-' ||
      !detail::parse_int(s, 5, 2, mo) || !detail::parse_int(s, 8, 2, d))
    return fail();
  if (mo < 1 || mo > 12 || d < 1 || d > 31) return fail();
  std::int64_t ts = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) *
                    kSecondsPerDay;
  if (s.size() == 10) return ts;
  if (s[10] != 'T' && s[10] != ' ') return fail();
  int hh, mm, ss;
  if (s.size() < 19 || s[13] != ':' || s[16] != ':' || !detail::parse_int(s, 11, 2, hh) ||
      !detail::parse_int(s, 14, 2, mm) || !detail::parse_int(s, 17, 2, ss))
    return fail();
  if (hh > 23 || mm > 59 || ss > 60) return fail();
  ts += hh * 3600 + mm * 60 + ss;
  std::size_t pos = 19;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
  }
  if (pos == s.size()) return ts;
  if (s[pos] == 'Z' && pos + 1 == s.size()) return ts;
  if ((s[pos] == '+' || s[pos] == '-') && pos + 6 == s.size() && s[pos + 3] == ':') {
    int oh, om;
    if (!detail::parse_int(s, pos + 1, 2, oh) || !detail::parse_int(s, pos + 4, 2, om)) return fail();
    std::int64_t off = oh * 3600 + om * 60;
    return s[pos] == '+' ? ts - off : ts + off;
  }
  return fail();
}

inline std::string format_rfc3339(std::int64_t ts) {
  CivilDate c = civil_from_days(epoch_day(ts));
  std::int64_t sod = seconds_of_day(ts);
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02dZ", c.year, c.month, c.day,
                static_cast<int>(sod / 3600), static_cast<int>((sod / 60) % 60),
                static_cast<int>(sod % 60));
  return std::string(buf);
}

}  // namespace anl
