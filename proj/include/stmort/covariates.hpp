#pragma once

// Weekly fixed-effect covariates: standardized weather means, week
// classifiers, heat-index week categories and elevation.

#include "stmort/calendar.hpp"
#include "stmort/csv.hpp"
#include "stmort/geo_graph.hpp"
#include "stmort/heat_index.hpp"
#include "stmort/met_ingest.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace stmort {

/// Fixed-effect columns in model order.
inline const std::vector<std::string>& covariate_names() {
  static const std::vector<std::string> names{
      "scale_temp_max_mean", "scale_temp_min_mean", "scale_humidity_mean", "strong_discomfort",
      "severe_malaise",      "increased_risk",      "serious_risk",        "mild_week",
      "hot_week",            "cold_week",           "super_cold_week",     "last_week_was_dry",
      "elevation_km"};
  return names;
}

enum class DryRule {
  EachDay,  // every day of the dry run passes the temperature threshold
  RunMean,  // the mean over the dry run passes it
};

struct ClassifierThresholds {
  double hot_tmin_c = 18.0;         // Tmin above
  double cold_tmin_c = 0.0;         // Tmin below
  double super_cold_tmin_c = -5.0;  // Tmin below
  double mild_low_c = 2.0;          // Tmean strictly between
  double mild_high_c = 9.0;
  double dry_hot_tmean_c = 21.8;    // Tmean above
  double dry_cold_tmean_c = -5.0;   // Tmean below
  std::size_t hot_run = 3;
  std::size_t cold_run = 3;
  std::size_t super_cold_run = 2;
  std::size_t mild_run = 3;
  std::size_t dry_run = 3;
  DryRule dry_rule = DryRule::EachDay;
};

struct WeekIndicators {
  bool hot_week = false;
  bool cold_week = false;
  bool super_cold_week = false;
  bool mild_week = false;
  bool dry_period = false;
  bool last_week_was_dry = false;
  std::vector<std::string> warnings;
};

inline std::size_t longest_run(std::size_t n, const std::function<bool(std::size_t)>& pred) {
  std::size_t best = 0, cur = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cur = pred(i) ? cur + 1 : 0;
    best = std::max(best, cur);
  }
  return best;
}

namespace detail {

inline bool dry_period(const DailyTrace& tr, const ClassifierThresholds& th) {
  const std::size_t n = tr.size();
  auto dry = [&](std::size_t i) { return tr.precip[i] == 0.0; };
  if (th.dry_rule == DryRule::EachDay) {
    const auto hot = longest_run(n, [&](std::size_t i) { return dry(i) && tr.temp_mean[i] > th.dry_hot_tmean_c; });
    const auto cold =
        longest_run(n, [&](std::size_t i) { return dry(i) && tr.temp_mean[i] < th.dry_cold_tmean_c; });
    return hot >= th.dry_run || cold >= th.dry_run;
  }
  for (std::size_t s = 0; s < n; ++s) {
    double sum = 0.0;
    for (std::size_t e = s; e < n && dry(e); ++e) {
      sum += tr.temp_mean[e];
      const std::size_t len = e - s + 1;
      if (len < th.dry_run) continue;
      const double m = sum / static_cast<double>(len);
      if (m > th.dry_hot_tmean_c || m < th.dry_cold_tmean_c) return true;
    }
  }
  return false;
}

}  // namespace detail

/// Week classifiers from a daily trace (ideally seven days).
/// `previous_week_dry` is the dry_period flag of the preceding week.
inline WeekIndicators classify_week(const DailyTrace& trace, bool previous_week_dry,
                                    const ClassifierThresholds& th = {}) {
  const std::size_t n = trace.size();
  require(trace.temp_min.size() == n && trace.temp_mean.size() == n && trace.precip.size() == n,
          "daily trace columns have different lengths");
  WeekIndicators w;
  auto check = [&](std::size_t run, const char* name) {
    if (n < run) {
      w.warnings.push_back(std::string(name) + ": trace of " + std::to_string(n) + " days is shorter than run length " +
                           std::to_string(run));
      return false;
    }
    return true;
  };
  if (check(th.hot_run, "hot_week"))
    w.hot_week = longest_run(n, [&](std::size_t i) { return trace.temp_min[i] > th.hot_tmin_c; }) >= th.hot_run;
  if (check(th.cold_run, "cold_week"))
    w.cold_week = longest_run(n, [&](std::size_t i) { return trace.temp_min[i] < th.cold_tmin_c; }) >= th.cold_run;
  if (check(th.super_cold_run, "super_cold_week"))
    w.super_cold_week =
        longest_run(n, [&](std::size_t i) { return trace.temp_min[i] < th.super_cold_tmin_c; }) >= th.super_cold_run;
  if (check(th.mild_run, "mild_week"))
    w.mild_week = longest_run(n, [&](std::size_t i) {
                    return trace.temp_mean[i] > th.mild_low_c && trace.temp_mean[i] < th.mild_high_c;
                  }) >= th.mild_run;
  if (check(th.dry_run, "dry_period")) w.dry_period = detail::dry_period(trace, th);
  w.last_week_was_dry = previous_week_dry;
  return w;
}

struct HeatWeekIndicators {
  bool strong_discomfort = false;
  bool severe_malaise = false;
  bool increased_risk = false;
  bool serious_risk = false;
};

/// A category indicator is set when at least one day falls in its band.
inline HeatWeekIndicators classify_heat_week(std::span<const double> temp_mean_c, std::span<const double> humidity_pct) {
  require(temp_mean_c.size() == humidity_pct.size(), "temperature and humidity traces differ in length");
  HeatWeekIndicators h;
  for (std::size_t d = 0; d < temp_mean_c.size(); ++d) {
    switch (heat_index(temp_mean_c[d], humidity_pct[d]).category) {
      case HeatCategory::StrongDiscomfort: h.strong_discomfort = true; break;
      case HeatCategory::SevereMalaise: h.severe_malaise = true; break;
      case HeatCategory::IncreasedRisk: h.increased_risk = true; break;
      case HeatCategory::SeriousRisk: h.serious_risk = true; break;
      case HeatCategory::None: break;
    }
  }
  return h;
}

/// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double p) {
  require(!v.empty(), "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Dry-period thresholds recomputed as the 5th / 95th percentiles of daily
/// mean temperature, for corpora other than the default one.
inline ClassifierThresholds with_corpus_percentiles(ClassifierThresholds th, const std::vector<double>& daily_tmean) {
  th.dry_cold_tmean_c = quantile(daily_tmean, 0.05);
  th.dry_hot_tmean_c = quantile(daily_tmean, 0.95);
  return th;
}

struct StandardizationParams {
  double mean = 0.0;
  double sd = 1.0;  // sample standard deviation (divisor n - 1)
  std::size_t n = 0;
};

inline StandardizationParams fit_standardization(std::span<const double> x) {
  require(x.size() >= 2, "standardization needs at least two values");
  double s = 0.0;
  for (double v : x) s += v;
  const double mean = s / static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(x.size() - 1));
  if (!(sd > 0.0) || sd <= 1e-12 * std::max(1.0, std::abs(mean)))
    throw ValidationError("cannot standardize a covariate with zero variance");
  return {mean, sd, x.size()};
}

inline std::vector<double> apply_standardization(std::span<const double> x, const StandardizationParams& p) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - p.mean) / p.sd;
  return out;
}

inline std::vector<double> destandardize(std::span<const double> z, const StandardizationParams& p) {
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] * p.sd + p.mean;
  return out;
}

inline std::pair<std::vector<double>, StandardizationParams> standardize(std::span<const double> x) {
  const auto p = fit_standardization(x);
  return {apply_standardization(x, p), p};
}

/// One design-matrix row per (district, week).
struct DesignRow {
  std::string district_id;
  IsoWeek week;
  std::vector<double> values;
};

struct DesignTable {
  std::vector<std::string> columns;
  std::vector<DesignRow> rows;

  const DesignRow* find(const std::string& district, IsoWeek week) const {
    if (index_.empty()) reindex();
    auto it = index_.find({district, week});
    return it == index_.end() ? nullptr : &rows[it->second];
  }

  void reindex() const {
    index_.clear();
    for (std::size_t i = 0; i < rows.size(); ++i) index_[{rows[i].district_id, rows[i].week}] = i;
  }

  Index column_index(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    require(it != columns.end(), "design has no column " + name);
    return static_cast<Index>(it - columns.begin());
  }

 private:
  mutable std::map<std::pair<std::string, IsoWeek>, std::size_t> index_;
};

struct CovariateBuild {
  DesignTable design;
  std::map<std::string, std::pair<std::string, StandardizationParams>> standardization;  // column -> (source, params)
  std::vector<std::string> warnings;
  std::map<std::string, std::size_t> indicator_counts;
};

/// Builds the 13-column design from fused weekly district weather.
/// last_week_was_dry is evaluated sequentially over each district's weeks.
inline CovariateBuild build_covariates(const FusionResult& fused, const DistrictGraph& graph,
                                       const ClassifierThresholds& th = {}) {
  CovariateBuild out;
  out.design.columns = covariate_names();
  const std::size_t n = fused.cells.size();
  require(n >= 2, "need at least two (district, week) cells");

  std::vector<double> tmax(n), tmin(n), hum(n);
  for (std::size_t c = 0; c < n; ++c) {
    tmax[c] = fused.cells[c].temp_max_weekly_mean_c;
    tmin[c] = fused.cells[c].temp_min_weekly_mean_c;
    hum[c] = fused.cells[c].humidity_weekly_mean_pct;
  }
  auto [ztmax, ptmax] = standardize(tmax);
  auto [ztmin, ptmin] = standardize(tmin);
  auto [zhum, phum] = standardize(hum);
  out.standardization["scale_temp_max_mean"] = {"temp_max_weekly_mean_c", ptmax};
  out.standardization["scale_temp_min_mean"] = {"temp_min_weekly_mean_c", ptmin};
  out.standardization["scale_humidity_mean"] = {"humidity_weekly_mean_pct", phum};

  // Cells are district-major with consecutive weeks.
  std::string prev_district;
  bool prev_dry = false;
  for (std::size_t c = 0; c < n; ++c) {
    const auto& cell = fused.cells[c];
    if (cell.district_id != prev_district) prev_dry = false;
    const auto wk = classify_week(cell.daily_trace, prev_dry, th);
    for (const auto& w : wk.warnings) out.warnings.push_back(cell.district_id + " " + cell.week.str() + ": " + w);
    const auto heat = classify_heat_week(cell.daily_trace.temp_mean, cell.daily_trace.humidity);
    prev_dry = wk.dry_period;
    prev_district = cell.district_id;

    DesignRow row;
    row.district_id = cell.district_id;
    row.week = cell.week;
    row.values = {ztmax[c],
                  ztmin[c],
                  zhum[c],
                  heat.strong_discomfort ? 1.0 : 0.0,
                  heat.severe_malaise ? 1.0 : 0.0,
                  heat.increased_risk ? 1.0 : 0.0,
                  heat.serious_risk ? 1.0 : 0.0,
                  wk.mild_week ? 1.0 : 0.0,
                  wk.hot_week ? 1.0 : 0.0,
                  wk.cold_week ? 1.0 : 0.0,
                  wk.super_cold_week ? 1.0 : 0.0,
                  wk.last_week_was_dry ? 1.0 : 0.0,
                  graph.elevation_km(graph.index_of(cell.district_id))};
    for (std::size_t k = 3; k < 12; ++k)
      if (row.values[k] != 0.0) ++out.indicator_counts[out.design.columns[k]];
    out.design.rows.push_back(std::move(row));
  }
  return out;
}

inline std::string design_csv(const DesignTable& d, const std::string& header_comment = {}) {
  std::string s = header_comment + "district_id,iso_year,iso_week";
  for (const auto& c : d.columns) s += "," + c;
  s += "\n";
  for (const auto& r : d.rows) {
    s += r.district_id + "," + std::to_string(r.week.year) + "," + std::to_string(r.week.week);
    for (double v : r.values) s += "," + format_number(v);
    s += "\n";
  }
  return s;
}

inline DesignTable read_design_csv(const std::string& path) {
  const CsvTable t = read_csv(path);
  t.require_columns({"district_id", "iso_year", "iso_week"});
  DesignTable d;
  for (const auto& h : t.header)
    if (h != "district_id" && h != "iso_year" && h != "iso_week") d.columns.push_back(h);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    DesignRow row;
    row.district_id = t.get(r, "district_id");
    row.week = make_iso_week(static_cast<int>(t.integer(r, "iso_year")), static_cast<int>(t.integer(r, "iso_week")));
    for (const auto& c : d.columns) row.values.push_back(t.number(r, c));
    d.rows.push_back(std::move(row));
  }
  return d;
}

}  // namespace stmort
