#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "csgemos/error.hpp"

namespace csgemos {

/// Calendar day, ISO-8601 on the wire.
class Date {
 public:
  Date() = default;
  explicit Date(std::chrono::sys_days day) : day_(day) {}
  Date(int y, unsigned m, unsigned d) {
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                          std::chrono::day{d}};
    if (!ymd.ok()) throw DataError("invalid calendar date");
    day_ = std::chrono::sys_days{ymd};
  }

  static Date parse(std::string_view text) {
    int y = 0;
    unsigned m = 0, d = 0;
    const auto bad = [&] { return DataError("unparseable date '" + std::string(text) + "'"); };
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw bad();
    const auto num = [&](std::size_t pos, std::size_t len, auto& out) {
      const auto* first = text.data() + pos;
      const auto res = std::from_chars(first, first + len, out);
      if (res.ec != std::errc{} || res.ptr != first + len) throw bad();
    };
    num(0, 4, y);
    num(5, 2, m);
    num(8, 2, d);
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                          std::chrono::day{d}};
    if (!ymd.ok()) throw bad();
    return Date(std::chrono::sys_days{ymd});
  }

  std::string iso() const {
    const std::chrono::year_month_day ymd{day_};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
  }

  std::chrono::sys_days day() const { return day_; }
  Date plus_days(int n) const { return Date(day_ + std::chrono::days{n}); }

  friend auto operator<=>(const Date&, const Date&) = default;

 private:
  std::chrono::sys_days day_{};
};

/// One ensemble forecast with its verifying observation (absent for pure prediction).
struct ForecastCase {
  Date date;
  std::string station;
  std::vector<double> members;
  std::optional<double> observation;
};

/// Cases sorted by (date, station) with a fixed member layout. Missing values
/// never reach a Dataset; they are removed by the parsing policy.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<std::string> member_names, std::vector<ForecastCase> cases)
      : member_names_(std::move(member_names)), cases_(std::move(cases)) {
    if (member_names_.empty()) throw DataError("dataset needs at least one member column");
    std::stable_sort(cases_.begin(), cases_.end(), [](const auto& a, const auto& b) {
      return a.date != b.date ? a.date < b.date : a.station < b.station;
    });
    for (std::size_t i = 0; i < cases_.size(); ++i) {
      const auto& c = cases_[i];
      if (c.members.size() != member_names_.size()) {
        throw DataError("case " + c.date.iso() + "/" + c.station + " has " +
                        std::to_string(c.members.size()) + " members, expected " +
                        std::to_string(member_names_.size()));
      }
      for (double v : c.members) {
        if (!std::isfinite(v) || v < 0.0) {
          throw DataError("case " + c.date.iso() + "/" + c.station +
                          " has a missing or negative member");
        }
      }
      if (c.observation && (!std::isfinite(*c.observation) || *c.observation < 0.0)) {
        throw DataError("case " + c.date.iso() + "/" + c.station + " has an invalid observation");
      }
      if (i > 0 && cases_[i - 1].date == c.date && cases_[i - 1].station == c.station) {
        throw DataError("duplicate case " + c.date.iso() + "/" + c.station);
      }
      if (date_ranges_.empty() || dates_.back() != c.date) {
        dates_.push_back(c.date);
        date_ranges_.push_back({i, i + 1});
      } else {
        date_ranges_.back().second = i + 1;
      }
      stations_.push_back(c.station);
    }
    std::sort(stations_.begin(), stations_.end());
    stations_.erase(std::unique(stations_.begin(), stations_.end()), stations_.end());
  }

  const std::vector<std::string>& member_names() const { return member_names_; }
  std::size_t member_count() const { return member_names_.size(); }
  const std::vector<ForecastCase>& cases() const { return cases_; }
  std::size_t size() const { return cases_.size(); }
  bool empty() const { return cases_.empty(); }

  /// Distinct dates in increasing order.
  const std::vector<Date>& dates() const { return dates_; }
  const std::vector<std::string>& stations() const { return stations_; }

  /// Half-open case index range of the i-th distinct date.
  std::pair<std::size_t, std::size_t> date_range(std::size_t date_index) const {
    return date_ranges_.at(date_index);
  }
  std::span<const ForecastCase> cases_on(std::size_t date_index) const {
    const auto [b, e] = date_range(date_index);
    return std::span<const ForecastCase>(cases_).subspan(b, e - b);
  }

  bool has_observations() const {
    return std::all_of(cases_.begin(), cases_.end(),
                       [](const auto& c) { return c.observation.has_value(); });
  }

 private:
  std::vector<std::string> member_names_;
  std::vector<ForecastCase> cases_;
  std::vector<Date> dates_;
  std::vector<std::pair<std::size_t, std::size_t>> date_ranges_;
  std::vector<std::string> stations_;
};

}  // namespace csgemos
