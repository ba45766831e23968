//
// Copyright 2026 The delaylens Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#pragma once

#include <charconv>
#include <chrono>
#include <compare>
#include <cstdio>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "delaylens/error.hpp"

namespace delaylens {

// Calendar date at day precision, stored as days since 1970-01-01.
class Date {
 public:
  constexpr Date() = default;
  constexpr explicit Date(std::int32_t days_since_epoch) : days_(days_since_epoch) {}
  constexpr explicit Date(std::chrono::sys_days d)
      : days_(static_cast<std::int32_t>(d.time_since_epoch().count())) {}

  static Date from_ymd(int year, unsigned month, unsigned day) {
    std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                    std::chrono::day{day}};
    if (!ymd.ok()) throw DataError("invalid date");
    return Date(std::chrono::sys_days{ymd});
  }

  // Strict "YYYY-MM-DD". Returns nullopt for anything else, including
  // out-of-range months and days.
  static std::optional<Date> parse(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    int y = 0;
    unsigned m = 0, d = 0;
    auto digits = [](std::string_view part, auto& out) {
      for (char c : part)
        if (c < '0' || c > '9') return false;
      auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
      return ec == std::errc() && p == part.data() + part.size();
    };
    if (!digits(s.substr(0, 4), y) || !digits(s.substr(5, 2), m) || !digits(s.substr(8, 2), d))
      return std::nullopt;
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                    std::chrono::day{d}};
    if (!ymd.ok()) return std::nullopt;
    return Date(std::chrono::sys_days{ymd});
  }

  constexpr std::int32_t days() const { return days_; }
  std::chrono::sys_days sys() const { return std::chrono::sys_days{std::chrono::days{days_}}; }
  std::chrono::year_month_day ymd() const { return std::chrono::year_month_day{sys()}; }
  int year() const { return static_cast<int>(ymd().year()); }
  unsigned month() const { return static_cast<unsigned>(ymd().month()); }
  unsigned day() const { return static_cast<unsigned>(ymd().day()); }

  std::string str() const {
    auto v = ymd();
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(v.year()),
                  static_cast<unsigned>(v.month()), static_cast<unsigned>(v.day()));
    return buf;
  }

  // Adds calendar months; the day of month is clamped to the target month.
  Date add_months(int months) const {
    auto v = ymd();
    auto ym = std::chrono::year_month{v.year(), v.month()} + std::chrono::months{months};
    auto last = std::chrono::year_month_day_last{ym.year(), std::chrono::month_day_last{ym.month()}};
    auto day = v.day() > last.day() ? last.day() : v.day();
    return Date(std::chrono::sys_days{std::chrono::year_month_day{ym.year(), ym.month(), day}});
  }

  constexpr Date operator+(std::int32_t n) const { return Date(days_ + n); }
  constexpr Date operator-(std::int32_t n) const { return Date(days_ - n); }
  constexpr std::int32_t operator-(Date o) const { return days_ - o.days_; }
  constexpr auto operator<=>(const Date&) const = default;

 private:
  std::int32_t days_ = 0;
};

// Inclusive date interval.
struct DateInterval {
  Date start;
  Date end;
  constexpr bool contains(Date d) const { return start <= d && d <= end; }
};

// Calendar quarter, written "2018Q1".
struct Quarter {
  int year = 1970;
  int q = 1;  // 1..4

  static std::optional<Quarter> parse(std::string_view s) {
    if (s.size() != 6 || (s[4] != 'Q' && s[4] != 'q')) return std::nullopt;
    int y = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + 4, y);
    if (ec != std::errc() || p != s.data() + 4) return std::nullopt;
    int q = s[5] - '0';
    if (q < 1 || q > 4) return std::nullopt;
    return Quarter{y, q};
  }
  static Quarter containing(Date d) { return Quarter{d.year(), static_cast<int>((d.month() - 1) / 3 + 1)}; }

  Date start() const { return Date::from_ymd(year, static_cast<unsigned>(3 * (q - 1) + 1), 1); }
  Date end() const { return next().start() - 1; }
  DateInterval interval() const { return {start(), end()}; }
  Quarter next() const { return q == 4 ? Quarter{year + 1, 1} : Quarter{year, q + 1}; }
  std::string str() const { return std::to_string(year) + "Q" + std::to_string(q); }
  auto operator<=>(const Quarter&) const = default;
};

}  // namespace delaylens
