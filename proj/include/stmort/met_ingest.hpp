#pragma once

// Daily station weather: parsing, month-stratified imputation, ISO-week
// aggregation and fusion onto districts.

#include "stmort/calendar.hpp"
#include "stmort/csv.hpp"
#include "stmort/geo_graph.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace stmort {

enum class MetVariable { TempMean, TempMin, TempMax, Humidity, Precip };

inline constexpr std::array<MetVariable, 5> kMetVariables{MetVariable::TempMean, MetVariable::TempMin,
                                                          MetVariable::TempMax, MetVariable::Humidity,
                                                          MetVariable::Precip};

inline const char* variable_name(MetVariable v) {
  switch (v) {
    case MetVariable::TempMean: return "temp_mean_c";
    case MetVariable::TempMin: return "temp_min_c";
    case MetVariable::TempMax: return "temp_max_c";
    case MetVariable::Humidity: return "humidity_mean_pct";
    case MetVariable::Precip: return "precip_sum_mm";
  }
  return "?";
}

struct DailyStationRecord {
  std::string station_id;
  Date date;
  std::optional<double> temp_mean_c;
  std::optional<double> temp_min_c;
  std::optional<double> temp_max_c;
  std::optional<double> humidity_mean_pct;
  std::optional<double> precip_sum_mm;
  Point2 location;

  std::optional<double>& value(MetVariable v) {
    switch (v) {
      case MetVariable::TempMean: return temp_mean_c;
      case MetVariable::TempMin: return temp_min_c;
      case MetVariable::TempMax: return temp_max_c;
      case MetVariable::Humidity: return humidity_mean_pct;
      case MetVariable::Precip: return precip_sum_mm;
    }
    return temp_mean_c;
  }
  const std::optional<double>& value(MetVariable v) const {
    return const_cast<DailyStationRecord*>(this)->value(v);
  }

  std::size_t missing_count() const {
    std::size_t n = 0;
    for (auto v : kMetVariables) n += value(v).has_value() ? 0 : 1;
    return n;
  }
};

/// Throws if the record violates the physical-range invariants.
inline void validate_record(const DailyStationRecord& r, const std::string& where = {}) {
  const std::string ctx = where.empty() ? r.station_id + " " + r.date.str() : where;
  if (r.temp_min_c && r.temp_mean_c && r.temp_max_c) {
    if (!(*r.temp_min_c <= *r.temp_mean_c && *r.temp_mean_c <= *r.temp_max_c))
      throw ValidationError(ctx + ": temperatures must satisfy min <= mean <= max");
  }
  if (r.humidity_mean_pct && (*r.humidity_mean_pct < 0.0 || *r.humidity_mean_pct > 100.0))
    throw ValidationError(ctx + ": humidity outside [0, 100]");
  if (r.precip_sum_mm && *r.precip_sum_mm < 0.0) throw ValidationError(ctx + ": negative precipitation");
}

/// Station CSV:
/// station_id,date,temp_mean_c,temp_min_c,temp_max_c,humidity_mean_pct,precip_sum_mm,x_km,y_km
/// with empty fields for missing values.
inline std::vector<DailyStationRecord> read_station_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  t.require_columns({"station_id", "date", "temp_mean_c", "temp_min_c", "temp_max_c", "humidity_mean_pct",
                     "precip_sum_mm", "x_km", "y_km"});
  std::vector<DailyStationRecord> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    DailyStationRecord rec;
    rec.station_id = t.get(r, "station_id");
    if (rec.station_id.empty()) throw ValidationError(t.where(r) + ": empty station_id");
    try {
      rec.date = Date::parse(t.get(r, "date"));
    } catch (const ValidationError& e) {
      throw ValidationError(t.where(r) + ": " + e.what());
    }
    for (auto v : kMetVariables) rec.value(v) = t.optional_number(r, variable_name(v));
    rec.location = {t.number(r, "x_km"), t.number(r, "y_km")};
    validate_record(rec, t.where(r));
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::map<std::string, Point2> station_locations(const std::vector<DailyStationRecord>& records) {
  std::map<std::string, Point2> loc;
  for (const auto& r : records) {
    auto [it, inserted] = loc.emplace(r.station_id, r.location);
    if (!inserted && distance_km(it->second, r.location) > 1e-9)
      throw ValidationError("station " + r.station_id + " reports inconsistent locations");
  }
  return loc;
}

struct ImputationReport {
  std::size_t cells = 0;
  std::size_t missing_before = 0;
  std::size_t imputed = 0;
  std::map<std::string, std::size_t> imputed_per_variable;
};

/// Fills each missing value with a uniform draw (with replacement) from the
/// same station's observed values of that variable in the same calendar
/// month, pooled across years. Records are processed in (station, date)
/// order from a single generator, so output is a function of the record set
/// and seed only. Observed values are never touched.
inline std::vector<DailyStationRecord> impute_missing_daily(std::vector<DailyStationRecord> records,
                                                            std::uint64_t seed,
                                                            ImputationReport* report = nullptr) {
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.station_id, a.date) < std::tie(b.station_id, b.date);
  });
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].station_id == records[i - 1].station_id && records[i].date == records[i - 1].date)
      throw ValidationError("duplicate record for station " + records[i].station_id + " on " +
                            records[i].date.str());
  }

  // (station, variable, month) -> observed values
  std::map<std::tuple<std::string, int, unsigned>, std::vector<double>> pool;
  for (const auto& r : records)
    for (auto v : kMetVariables)
      if (const auto& x = r.value(v)) pool[{r.station_id, static_cast<int>(v), r.date.month()}].push_back(*x);

  ImputationReport rep;
  std::mt19937_64 rng(seed);
  for (auto& r : records) {
    for (auto v : kMetVariables) {
      ++rep.cells;
      auto& x = r.value(v);
      if (x) continue;
      ++rep.missing_before;
      auto it = pool.find({r.station_id, static_cast<int>(v), r.date.month()});
      if (it == pool.end() || it->second.empty())
        throw ValidationError("cannot impute " + std::string(variable_name(v)) + " for station " + r.station_id +
                              ": no observed values in month " + std::to_string(r.date.month()));
      std::uniform_int_distribution<std::size_t> pick(0, it->second.size() - 1);
      x = it->second[pick(rng)];
      ++rep.imputed;
      ++rep.imputed_per_variable[variable_name(v)];
    }
  }
  if (report) *report = rep;
  return records;
}

/// Daily values of one week, ordered by date.
struct DailyTrace {
  std::vector<Date> dates;
  std::vector<double> temp_min;
  std::vector<double> temp_mean;
  std::vector<double> temp_max;
  std::vector<double> humidity;
  std::vector<double> precip;

  std::size_t size() const { return dates.size(); }
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

struct StationWeek {
  std::string station_id;
  IsoWeek week;
  DailyTrace trace;
  double temp_min_mean = 0.0;
  double temp_max_mean = 0.0;
  double humidity_mean = 0.0;
  bool partial = false;  // fewer than 7 days
};

/// Per-station ISO-week means of daily min/max temperature and humidity,
/// keeping the daily traces. Input must be fully imputed.
inline std::vector<StationWeek> aggregate_weekly(const std::vector<DailyStationRecord>& records) {
  std::map<std::pair<std::string, IsoWeek>, std::vector<const DailyStationRecord*>> groups;
  for (const auto& r : records) {
    if (r.missing_count() > 0)
      throw ValidationError("aggregate_weekly needs imputed records; station " + r.station_id + " has gaps on " +
                            r.date.str());
    groups[{r.station_id, iso_week_of(r.date)}].push_back(&r);
  }
  std::vector<StationWeek> out;
  out.reserve(groups.size());
  for (auto& [key, recs] : groups) {
    std::sort(recs.begin(), recs.end(), [](auto* a, auto* b) { return a->date < b->date; });
    StationWeek w;
    w.station_id = key.first;
    w.week = key.second;
    for (const auto* r : recs) {
      if (!w.trace.dates.empty() && w.trace.dates.back() == r->date)
        throw ValidationError("duplicate record for station " + r->station_id + " on " + r->date.str());
      w.trace.dates.push_back(r->date);
      w.trace.temp_min.push_back(*r->temp_min_c);
      w.trace.temp_mean.push_back(*r->temp_mean_c);
      w.trace.temp_max.push_back(*r->temp_max_c);
      w.trace.humidity.push_back(*r->humidity_mean_pct);
      w.trace.precip.push_back(*r->precip_sum_mm);
    }
    w.temp_min_mean = mean_of(w.trace.temp_min);
    w.temp_max_mean = mean_of(w.trace.temp_max);
    w.humidity_mean = mean_of(w.trace.humidity);
    w.partial = w.trace.size() < 7;
    out.push_back(std::move(w));
  }
  return out;
}

enum class FusionMode { PerDistrict, PerState };
enum class WeatherSource { Direct, State, Nearest };

inline const char* source_name(WeatherSource s) {
  switch (s) {
    case WeatherSource::Direct: return "district";
    case WeatherSource::State: return "state";
    case WeatherSource::Nearest: return "knn";
  }
  return "?";
}

struct StationLookup {
  std::map<std::string, std::string> station_district;
  std::map<std::string, std::string> district_state;  // per-state mode only
};

/// station_id,district_id
inline StationLookup read_station_lookup(const std::string& path) {
  const CsvTable t = read_csv(path);
  t.require_columns({"station_id", "district_id"});
  StationLookup lk;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    if (!lk.station_district.emplace(t.get(r, "station_id"), t.get(r, "district_id")).second)
      throw ValidationError(t.where(r) + ": station listed twice");
  return lk;
}

/// district_id,state_id
inline void read_district_states(const std::string& path, StationLookup& lk) {
  const CsvTable t = read_csv(path);
  t.require_columns({"district_id", "state_id"});
  for (std::size_t r = 0; r < t.rows.size(); ++r) lk.district_state[t.get(r, "district_id")] = t.get(r, "state_id");
}

struct WeeklyDistrictWeather {
  std::string district_id;
  Index district = 0;
  IsoWeek week;
  DailyTrace daily_trace;
  double temp_min_weekly_mean_c = 0.0;
  double temp_max_weekly_mean_c = 0.0;
  double humidity_weekly_mean_pct = 0.0;
  bool partial = false;
  WeatherSource source = WeatherSource::Direct;
  std::size_t station_count = 0;
};

struct FusionOptions {
  FusionMode mode = FusionMode::PerDistrict;
  Index k = 3;
  std::optional<IsoWeek> start;
  std::optional<IsoWeek> end;
};

struct FusionResult {
  std::vector<IsoWeek> weeks;
  std::vector<WeeklyDistrictWeather> cells;  // district-major, week-minor
  std::vector<Index> stationless_districts;  // no station in their group
  std::size_t knn_cells = 0;
};

/// Consecutive ISO weeks from `first` to `last` inclusive.
inline std::vector<IsoWeek> week_range(IsoWeek first, IsoWeek last) {
  require(first <= last, "empty week horizon");
  std::vector<IsoWeek> out;
  for (IsoWeek w = first; w <= last; w = w.next()) out.push_back(w);
  return out;
}

namespace detail {

inline void fuse_traces(const std::vector<const StationWeek*>& src, WeeklyDistrictWeather& out) {
  // Per-date means across contributing stations, stations in id order.
  std::map<Date, std::array<double, 6>> acc;  // 5 sums + count
  for (const auto* s : src) {
    const auto& t = s->trace;
    for (std::size_t d = 0; d < t.size(); ++d) {
      auto& a = acc[t.dates[d]];
      a[0] += t.temp_min[d];
      a[1] += t.temp_mean[d];
      a[2] += t.temp_max[d];
      a[3] += t.humidity[d];
      a[4] += t.precip[d];
      a[5] += 1.0;
    }
  }
  auto& tr = out.daily_trace;
  for (const auto& [date, a] : acc) {
    tr.dates.push_back(date);
    tr.temp_min.push_back(a[0] / a[5]);
    tr.temp_mean.push_back(a[1] / a[5]);
    tr.temp_max.push_back(a[2] / a[5]);
    tr.humidity.push_back(a[3] / a[5]);
    tr.precip.push_back(a[4] / a[5]);
  }
  out.temp_min_weekly_mean_c = mean_of(tr.temp_min);
  out.temp_max_weekly_mean_c = mean_of(tr.temp_max);
  out.humidity_weekly_mean_pct = mean_of(tr.humidity);
  out.partial = tr.size() < 7;
  out.station_count = src.size();
}

}  // namespace detail

/// The k nearest stations to `target` among `candidates`, including every
/// station tied with the k-th distance. Result is ordered by (distance, id).
inline std::vector<std::string> nearest_stations(const Point2& target, std::vector<std::string> candidates,
                                                 const std::map<std::string, Point2>& locations, Index k) {
  require(k >= 1, "k must be at least 1");
  require(static_cast<Index>(candidates.size()) >= k, "k larger than the number of available stations");
  std::vector<std::pair<double, std::string>> d;
  for (auto& c : candidates) d.emplace_back(distance_km(target, locations.at(c)), std::move(c));
  std::sort(d.begin(), d.end());
  const double kth = d[static_cast<std::size_t>(k - 1)].first;
  const double cutoff = kth + 1e-12 * std::max(1.0, kth);
  std::vector<std::string> out;
  for (auto& [dist, id] : d)
    if (dist <= cutoff) out.push_back(id);
  return out;
}

/// Assigns weekly weather to every (district, week) of the horizon.
///
/// Per-district mode averages the stations located in the district;
/// per-state mode averages all stations of the district's state. Districts
/// without a reporting station in their group take the mean of the k
/// nearest reporting stations (Euclidean distance from the centroid).
inline FusionResult fuse_to_districts(const std::vector<StationWeek>& weekly, const DistrictGraph& graph,
                                      const std::map<std::string, Point2>& locations, const StationLookup& lookup,
                                      const FusionOptions& opts = {}) {
  require(opts.k >= 1, "k must be at least 1");
  require(!weekly.empty(), "no weekly station data to fuse");
  std::set<std::string> stations;
  for (const auto& w : weekly) stations.insert(w.station_id);
  if (static_cast<Index>(stations.size()) < opts.k)
    throw ValidationError("k = " + std::to_string(opts.k) + " exceeds the number of stations (" +
                          std::to_string(stations.size()) + ")");
  for (Index i = 0; i < graph.size(); ++i) {
    const auto& c = graph.centroid(i);
    require(std::isfinite(c.x_km) && std::isfinite(c.y_km), "district " + graph.id(i) + " has no centroid");
  }

  auto group_of_district = [&](Index d) -> std::string {
    if (opts.mode == FusionMode::PerDistrict) return graph.id(d);
    auto it = lookup.district_state.find(graph.id(d));
    require(it != lookup.district_state.end(), "district " + graph.id(d) + " has no state in the lookup");
    return it->second;
  };
  std::map<std::string, std::string> station_group;
  for (const auto& s : stations) {
    auto it = lookup.station_district.find(s);
    require(it != lookup.station_district.end(), "station " + s + " is not in the station lookup");
    const Index d = graph.index_of(it->second);
    require(locations.count(s) > 0, "station " + s + " has no location");
    station_group[s] = group_of_district(d);
  }

  FusionResult res;
  IsoWeek first = weekly.front().week, last = weekly.front().week;
  for (const auto& w : weekly) {
    first = std::min(first, w.week);
    last = std::max(last, w.week);
  }
  res.weeks = week_range(opts.start.value_or(first), opts.end.value_or(last));

  std::map<IsoWeek, std::vector<const StationWeek*>> by_week;
  for (const auto& w : weekly) by_week[w.week].push_back(&w);
  for (auto& [wk, v] : by_week)
    std::sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->station_id < b->station_id; });

  for (Index d = 0; d < graph.size(); ++d) {
    const std::string group = group_of_district(d);
    bool has_station = false;
    for (const auto& [s, g] : station_group) has_station |= (g == group);
    if (!has_station) res.stationless_districts.push_back(d);

    for (const auto& wk : res.weeks) {
      WeeklyDistrictWeather cell;
      cell.district_id = graph.id(d);
      cell.district = d;
      cell.week = wk;
      auto it = by_week.find(wk);
      if (it == by_week.end()) throw ValidationError("no station reports ISO week " + wk.str());
      std::vector<const StationWeek*> src;
      for (const auto* s : it->second)
        if (station_group.at(s->station_id) == group) src.push_back(s);
      if (!src.empty()) {
        cell.source = opts.mode == FusionMode::PerDistrict ? WeatherSource::Direct : WeatherSource::State;
      } else {
        std::vector<std::string> reporting;
        for (const auto* s : it->second) reporting.push_back(s->station_id);
        if (static_cast<Index>(reporting.size()) < opts.k)
          throw ValidationError("only " + std::to_string(reporting.size()) + " stations report ISO week " +
                                wk.str() + ", fewer than k = " + std::to_string(opts.k));
        const auto nn = nearest_stations(graph.centroid(d), reporting, locations, opts.k);
        const std::set<std::string> chosen(nn.begin(), nn.end());
        for (const auto* s : it->second)
          if (chosen.count(s->station_id)) src.push_back(s);
        cell.source = WeatherSource::Nearest;
        ++res.knn_cells;
      }
      detail::fuse_traces(src, cell);
      res.cells.push_back(std::move(cell));
    }
  }
  return res;
}

inline std::string weekly_weather_csv(const FusionResult& f, const std::string& header_comment = {}) {
  std::string s = header_comment;
  s += "district_id,iso_year,iso_week,n_days,temp_min_weekly_mean_c,temp_max_weekly_mean_c,"
       "humidity_weekly_mean_pct,source\n";
  for (const auto& c : f.cells) {
    s += c.district_id + "," + std::to_string(c.week.year) + "," + std::to_string(c.week.week) + "," +
         std::to_string(c.daily_trace.size()) + "," + format_number(c.temp_min_weekly_mean_c) + "," +
         format_number(c.temp_max_weekly_mean_c) + "," + format_number(c.humidity_weekly_mean_pct) + "," +
         source_name(c.source) + "\n";
  }
  return s;
}

}  // namespace stmort
