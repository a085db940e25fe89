#pragma once

// Calendar dates and ISO-8601 week numbering.

#include "stmort/types.hpp"

#include <chrono>
#include <compare>
#include <cstdio>
#include <string>

namespace stmort {

struct Date {
  std::chrono::sys_days days{};

  static Date from_ymd(int y, unsigned m, unsigned d) {
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    require(ymd.ok(), "invalid calendar date");
    return Date{std::chrono::sys_days{ymd}};
  }

  /// Parses YYYY-MM-DD.
  static Date parse(const std::string& s) {
    int y = 0;
    unsigned m = 0, d = 0;
    char tail = 0;
    if (s.size() != 10 || std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3)
      throw ValidationError("malformed date '" + s + "', expected YYYY-MM-DD");
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw ValidationError("invalid calendar date '" + s + "'");
    return Date{std::chrono::sys_days{ymd}};
  }

  std::chrono::year_month_day ymd() const { return std::chrono::year_month_day{days}; }
  int year() const { return static_cast<int>(ymd().year()); }
  unsigned month() const { return static_cast<unsigned>(ymd().month()); }
  unsigned day() const { return static_cast<unsigned>(ymd().day()); }
  /// 1 = Monday ... 7 = Sunday.
  unsigned iso_weekday() const { return std::chrono::weekday{days}.iso_encoding(); }

  Date plus_days(int n) const { return Date{days + std::chrono::days{n}}; }

  std::string str() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", year(), month(), day());
    return buf;
  }

  auto operator<=>(const Date&) const = default;
};

struct IsoWeek {
  int year = 0;
  int week = 0;

  auto operator<=>(const IsoWeek&) const = default;

  std::string str() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-W%02d", year, week);
    return buf;
  }

  /// Monday starting this ISO week.
  Date monday() const {
    // Jan 4th is always in ISO week 1.
    const Date jan4 = Date::from_ymd(year, 1, 4);
    const Date week1_monday = jan4.plus_days(-static_cast<int>(jan4.iso_weekday() - 1));
    return week1_monday.plus_days(7 * (week - 1));
  }

  IsoWeek next() const;
};

inline IsoWeek iso_week_of(const Date& d) {
  const Date thursday = d.plus_days(4 - static_cast<int>(d.iso_weekday()));
  const Date jan1 = Date::from_ymd(thursday.year(), 1, 1);
  const int doy = static_cast<int>((thursday.days - jan1.days).count());
  return IsoWeek{thursday.year(), doy / 7 + 1};
}

inline IsoWeek IsoWeek::next() const { return iso_week_of(monday().plus_days(7)); }

inline IsoWeek make_iso_week(int year, int week) {
  require(week >= 1 && week <= 53, "ISO week number out of range");
  const IsoWeek w{year, week};
  require(iso_week_of(w.monday()) == w, "ISO week " + w.str() + " does not exist");
  return w;
}

}  // namespace stmort
