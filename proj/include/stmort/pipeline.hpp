#pragma once

// End-to-end commands behind the CLI: run configuration, feature building,
// fitting, simulation and reporting, with hashed and atomically written
// outputs. This layer owns JSON and hashing; the numerical headers do not.

#include "stmort/covariates.hpp"
#include "stmort/inference.hpp"
#include "stmort/met_ingest.hpp"
#include "stmort/simulator.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace stmort::pipeline {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

struct RunConfig {
  std::string stations;
  std::string lookup;
  std::string district_states;
  std::string adjacency;
  std::string districts;
  std::string observations;
  std::string design;

  std::string fusion = "district";
  Index k = 3;
  std::string start_week;  // YYYY-Www, optional
  std::string end_week;
  std::string dry_rule = "each_day";
  bool corpus_percentiles = false;

  std::string gender = "both";
  bool leroux_interactions = false;
  Index draws = 1000;
  Index variance_draws = 2000;
  double ftol = 1e-4;
  int max_evaluations = 3000;
  double newton_tolerance = 1e-8;
  int newton_max_iterations = 50;

  Index rows = 3;
  Index cols = 3;
  Index ages = 4;
  Index weeks = 52;
  std::string sim_start = "2010-W01";
  long long population = 100000;
  std::string sim_genders = "both";

  std::uint64_t seed = 1;
  std::string out = "out";
  bool desk_scale = false;
  int repeat = 1;
};

inline json to_json(const RunConfig& c) {
  return json{{"stations", c.stations},
              {"lookup", c.lookup},
              {"district_states", c.district_states},
              {"adjacency", c.adjacency},
              {"districts", c.districts},
              {"observations", c.observations},
              {"design", c.design},
              {"fusion", c.fusion},
              {"k", c.k},
              {"start_week", c.start_week},
              {"end_week", c.end_week},
              {"dry_rule", c.dry_rule},
              {"corpus_percentiles", c.corpus_percentiles},
              {"gender", c.gender},
              {"leroux_interactions", c.leroux_interactions},
              {"draws", c.draws},
              {"variance_draws", c.variance_draws},
              {"ftol", c.ftol},
              {"max_evaluations", c.max_evaluations},
              {"newton_tolerance", c.newton_tolerance},
              {"newton_max_iterations", c.newton_max_iterations},
              {"rows", c.rows},
              {"cols", c.cols},
              {"ages", c.ages},
              {"weeks", c.weeks},
              {"sim_start", c.sim_start},
              {"population", c.population},
              {"sim_genders", c.sim_genders},
              {"seed", c.seed},
              {"out", c.out},
              {"desk_scale", c.desk_scale},
              {"repeat", c.repeat}};
}

namespace detail {

template <class T>
void take(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config key '") + key + "': " + e.what());
  }
}

inline void take_path(const json& j, const char* key, std::string& dst, const fs::path& base) {
  take(j, key, dst);
  if (j.contains(key) && !dst.empty() && fs::path(dst).is_relative()) dst = (base / dst).lexically_normal().string();
}

}  // namespace detail

/// Reads a JSON config; relative paths resolve against the config's folder.
/// Unknown keys are rejected so typos do not pass silently.
inline RunConfig load_config(const std::string& path, RunConfig c = {}) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": invalid JSON: " + e.what());
  }
  if (!j.is_object()) throw ValidationError(path + ": config must be a JSON object");
  const json known = to_json(c);
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ValidationError(path + ": unknown config key '" + key + "'");
  const fs::path base = fs::path(path).parent_path();
  for (const char* key : {"stations", "lookup", "district_states", "adjacency", "districts", "observations", "design"}) {
    std::string* dst = key == std::string("stations")          ? &c.stations
                       : key == std::string("lookup")          ? &c.lookup
                       : key == std::string("district_states") ? &c.district_states
                       : key == std::string("adjacency")       ? &c.adjacency
                       : key == std::string("districts")       ? &c.districts
                       : key == std::string("observations")    ? &c.observations
                                                               : &c.design;
    detail::take_path(j, key, *dst, base);
  }
  detail::take_path(j, "out", c.out, base);
  detail::take(j, "fusion", c.fusion);
  detail::take(j, "k", c.k);
  detail::take(j, "start_week", c.start_week);
  detail::take(j, "end_week", c.end_week);
  detail::take(j, "dry_rule", c.dry_rule);
  detail::take(j, "corpus_percentiles", c.corpus_percentiles);
  detail::take(j, "gender", c.gender);
  detail::take(j, "leroux_interactions", c.leroux_interactions);
  detail::take(j, "draws", c.draws);
  detail::take(j, "variance_draws", c.variance_draws);
  detail::take(j, "ftol", c.ftol);
  detail::take(j, "max_evaluations", c.max_evaluations);
  detail::take(j, "newton_tolerance", c.newton_tolerance);
  detail::take(j, "newton_max_iterations", c.newton_max_iterations);
  detail::take(j, "rows", c.rows);
  detail::take(j, "cols", c.cols);
  detail::take(j, "ages", c.ages);
  detail::take(j, "weeks", c.weeks);
  detail::take(j, "sim_start", c.sim_start);
  detail::take(j, "population", c.population);
  detail::take(j, "sim_genders", c.sim_genders);
  detail::take(j, "seed", c.seed);
  detail::take(j, "desk_scale", c.desk_scale);
  detail::take(j, "repeat", c.repeat);
  return c;
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericalError("SHA-256 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

/// Hash of everything that determines the outputs. Input files enter through
/// their contents, so moving a dataset does not change the hash; the output
/// location is excluded.
inline std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("out");
  for (const char* key : {"stations", "lookup", "district_states", "adjacency", "districts", "observations", "design"}) {
    const std::string path = j[key].get<std::string>();
    j[key] = path.empty() || !fs::exists(path) ? std::string() : sha256_hex(read_file(path));
  }
  return sha256_hex(j.dump());
}

inline IsoWeek parse_iso_week(const std::string& s) {
  int y = 0, w = 0;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%d-W%d%c", &y, &w, &tail) != 2)
    throw ValidationError("expected an ISO week like 2010-W01, got '" + s + "'");
  return make_iso_week(y, w);
}

inline std::vector<Gender> parse_genders(const std::string& s) {
  if (s == "both") return {Gender::Female, Gender::Male};
  return {parse_gender(s)};
}

inline void validate(const RunConfig& c) {
  if (c.k < 1) throw ValidationError("k must be at least 1");
  if (c.fusion != "district" && c.fusion != "state") throw ValidationError("fusion must be 'district' or 'state'");
  if (c.dry_rule != "each_day" && c.dry_rule != "run_mean")
    throw ValidationError("dry_rule must be 'each_day' or 'run_mean'");
  if (c.repeat < 1) throw ValidationError("repeat must be at least 1");
  if (c.draws < 100) throw ValidationError("draws must be at least 100");
  if (!c.start_week.empty() && !c.end_week.empty() && parse_iso_week(c.end_week) < parse_iso_week(c.start_week))
    throw ValidationError("empty horizon: end_week precedes start_week");
  parse_genders(c.gender);
}

inline void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ValidationError(std::string("no ") + what + " file configured");
  if (!fs::exists(path)) throw ValidationError(std::string(what) + " file not found: " + path);
}

/// Collects written files for the run manifest.
class OutputSet {
 public:
  OutputSet(std::string root, std::string hash) : root_(std::move(root)), hash_(std::move(hash)) {}

  const std::string& hash() const { return hash_; }
  std::string csv_header() const { return "# config_hash: " + hash_ + "\n"; }

  void write(const std::string& rel, const std::string& content) {
    write_file_atomic((fs::path(root_) / rel).string(), content);
    files_.push_back(rel);
  }
  void write_csv(const std::string& rel, const std::string& body) { write(rel, csv_header() + body); }
  void write_json(const std::string& rel, json j) {
    json out{{"config_hash", hash_}};
    for (auto& [k, v] : j.items()) out[k] = v;
    write(rel, out.dump(2) + "\n");
  }

  void write_manifest(const std::string& command, const RunConfig& cfg) {
    json m{{"config_hash", hash_}, {"command", command}, {"files", files_}};
    json c = to_json(cfg);
    c.erase("out");
    for (const char* key : {"stations", "lookup", "district_states", "adjacency", "districts", "observations", "design"})
      c[key] = fs::path(c[key].get<std::string>()).filename().string();
    m["config"] = c;
    write_file_atomic((fs::path(root_) / "manifest.json").string(), m.dump(2) + "\n");
  }

 private:
  std::string root_;
  std::string hash_;
  std::vector<std::string> files_;
};

inline std::string num(double v) { return format_number(v); }

// ---------------------------------------------------------------- features

struct FeatureRun {
  DistrictGraph graph;
  ImputationReport imputation;
  FusionResult fused;
  CovariateBuild covariates;
  ClassifierThresholds thresholds;
};

inline FeatureRun build_features(const RunConfig& c, std::uint64_t seed) {
  require_file(c.stations, "stations");
  require_file(c.lookup, "lookup");
  require_file(c.adjacency, "adjacency");
  require_file(c.districts, "districts");
  DistrictGraph graph = load_district_graph(c.adjacency, c.districts);
  StationLookup lookup = read_station_lookup(c.lookup);
  FusionOptions fo;
  fo.k = c.k;
  if (c.fusion == "state") {
    require_file(c.district_states, "district_states");
    read_district_states(c.district_states, lookup);
    fo.mode = FusionMode::PerState;
  }
  if (!c.start_week.empty()) fo.start = parse_iso_week(c.start_week);
  if (!c.end_week.empty()) fo.end = parse_iso_week(c.end_week);

  const auto raw = read_station_csv(c.stations);
  const auto locations = station_locations(raw);
  ImputationReport rep;
  const auto imputed = impute_missing_daily(raw, seed, &rep);
  const auto weekly = aggregate_weekly(imputed);
  FusionResult fused = fuse_to_districts(weekly, graph, locations, lookup, fo);

  ClassifierThresholds th;
  th.dry_rule = c.dry_rule == "run_mean" ? DryRule::RunMean : DryRule::EachDay;
  if (c.corpus_percentiles) {
    std::vector<double> tmean;
    for (const auto& r : imputed) tmean.push_back(*r.value(MetVariable::TempMean));
    th = with_corpus_percentiles(th, tmean);
  }
  CovariateBuild cov = build_covariates(fused, graph, th);
  return {std::move(graph), rep, std::move(fused), std::move(cov), th};
}

inline void write_features(const FeatureRun& f, const RunConfig& c, std::uint64_t seed, OutputSet& out,
                           const std::string& prefix) {
  out.write_csv(prefix + "design.csv", design_csv(f.covariates.design));
  out.write_csv(prefix + "weekly_weather.csv", weekly_weather_csv(f.fused));
  json st = json::object();
  for (const auto& [col, src] : f.covariates.standardization)
    st[col] = {{"source", src.first}, {"mean", src.second.mean}, {"sd", src.second.sd}, {"n", src.second.n}};
  out.write_json(prefix + "standardization.json", {{"divisor", "n-1"}, {"columns", st}});

  json per_var = json::object();
  for (const auto& [v, n] : f.imputation.imputed_per_variable) per_var[v] = n;
  json stationless = json::array();
  for (Index i : f.fused.stationless_districts) stationless.push_back(f.graph.id(i));
  json counts = json::object();
  for (const auto& [k, v] : f.covariates.indicator_counts) counts[k] = v;
  out.write_json(prefix + "features_metadata.json",
                 {{"seed", seed},
                  {"week_numbering", "ISO-8601"},
                  {"fusion_mode", c.fusion == "state" ? "per-state" : "per-district"},
                  {"k", c.k},
                  {"dry_rule", c.dry_rule},
                  {"dry_hot_tmean_c", f.thresholds.dry_hot_tmean_c},
                  {"dry_cold_tmean_c", f.thresholds.dry_cold_tmean_c},
                  {"daily_cells", f.imputation.cells},
                  {"missing_before_imputation", f.imputation.missing_before},
                  {"imputed_cells", f.imputation.imputed},
                  {"imputed_per_variable", per_var},
                  {"weeks", f.fused.weeks.size()},
                  {"first_week", f.fused.weeks.front().str()},
                  {"last_week", f.fused.weeks.back().str()},
                  {"districts", f.graph.size()},
                  {"stationless_districts", stationless},
                  {"knn_cells", f.fused.knn_cells},
                  {"indicator_counts", counts},
                  {"classifier_warnings", f.covariates.warnings}});
}

inline void cmd_features(const RunConfig& c) {
  validate(c);
  OutputSet out(c.out, config_hash(c));
  for (int r = 0; r < c.repeat; ++r) {
    const std::uint64_t seed = c.seed + static_cast<std::uint64_t>(r);
    char dir[32];
    std::snprintf(dir, sizeof dir, "repeat_%02d/", r + 1);
    const std::string prefix = c.repeat == 1 ? "" : dir;
    write_features(build_features(c, seed), c, seed, out, prefix);
  }
  out.write_manifest("features", c);
}

// --------------------------------------------------------------------- fit

inline FitOptions fit_options(const RunConfig& c) {
  FitOptions fo;
  fo.seed = c.seed;
  fo.dic_draws = c.draws;
  fo.optimize.ftol = c.ftol;
  fo.optimize.max_evaluations = c.max_evaluations;
  fo.optimize.newton.tolerance = c.newton_tolerance;
  fo.optimize.newton.max_iterations = c.newton_max_iterations;
  fo.posterior.variance_draws = c.variance_draws;
  return fo;
}

inline std::string marginal_fields(const Marginal& m) {
  return num(m.mean) + "," + num(m.sd) + "," + num(m.ci_low) + "," + num(m.ci_high);
}

inline json marginal_json(const Marginal& m) {
  return {{"mean", m.mean}, {"median", m.median}, {"sd", m.sd}, {"ci_low", m.ci_low}, {"ci_high", m.ci_high},
          {"significant", m.significant}};
}

inline void write_fit(const SpatioTemporalModel& model, const FitResult& r, const DistrictGraph& graph,
                      const std::vector<IsoWeek>& weeks, Gender gender, const RunConfig& c, OutputSet& out) {
  const std::string dir = std::string(gender_name(gender)) + "/";
  const auto& lay = model.layout();
  const auto& ages = age_group_labels();

  std::string fixed = "variable,mean,median,ci_low,ci_high,significant\n";
  for (std::size_t k = 0; k < r.fixed.size(); ++k) {
    const auto& m = r.fixed[k];
    fixed += r.fixed_names[k] + "," + num(m.mean) + "," + num(m.median) + "," + num(m.ci_low) + "," +
             num(m.ci_high) + "," + (m.significant ? "1" : "0") + "\n";
  }
  out.write_csv(dir + "fixed_effects.csv", fixed);

  auto block = [&](Block b, Index k) { return r.latent(lay.offset_of(b) + k); };
  const std::string cols = "mean,sd,ci_low,ci_high\n";
  const Index I = lay.districts, J = lay.ages, T = lay.weeks;
  auto week_key = [&](Index t) {
    return std::to_string(weeks[static_cast<std::size_t>(t)].year) + "," +
           std::to_string(weeks[static_cast<std::size_t>(t)].week);
  };
  if (lay.has(Block::Spatial)) {
    std::string s = "district_id," + cols;
    for (Index i = 0; i < I; ++i) s += graph.id(i) + "," + marginal_fields(block(Block::Spatial, i)) + "\n";
    out.write_csv(dir + "spatial_effects.csv", s);
  }
  if (lay.has(Block::Age)) {
    std::string s = "age_group," + cols;
    for (Index j = 0; j < J; ++j) s += ages[static_cast<std::size_t>(j)] + "," + marginal_fields(block(Block::Age, j)) + "\n";
    out.write_csv(dir + "age_effects.csv", s);
  }
  if (lay.has(Block::Time)) {
    std::string s = "iso_year,iso_week," + cols;
    for (Index t = 0; t < T; ++t) s += week_key(t) + "," + marginal_fields(block(Block::Time, t)) + "\n";
    out.write_csv(dir + "time_effects.csv", s);
  }
  if (lay.has(Block::SpaceAge)) {
    std::string s = "district_id,age_group," + cols;
    for (Index i = 0; i < I; ++i)
      for (Index j = 0; j < J; ++j)
        s += graph.id(i) + "," + ages[static_cast<std::size_t>(j)] + "," +
             marginal_fields(block(Block::SpaceAge, i * J + j)) + "\n";
    out.write_csv(dir + "space_age_effects.csv", s);
  }
  if (lay.has(Block::SpaceTime)) {
    std::string s = "district_id,iso_year,iso_week," + cols;
    for (Index i = 0; i < I; ++i)
      for (Index t = 0; t < T; ++t)
        s += graph.id(i) + "," + week_key(t) + "," + marginal_fields(block(Block::SpaceTime, i * T + t)) + "\n";
    out.write_csv(dir + "space_time_effects.csv", s);
  }
  if (lay.has(Block::AgeTime)) {
    std::string s = "age_group,iso_year,iso_week," + cols;
    for (Index j = 0; j < J; ++j)
      for (Index t = 0; t < T; ++t)
        s += ages[static_cast<std::size_t>(j)] + "," + week_key(t) + "," +
             marginal_fields(block(Block::AgeTime, j * T + t)) + "\n";
    out.write_csv(dir + "age_time_effects.csv", s);
  }

  const auto& active = model.hyper_space().active();
  std::string hyp = "parameter,mode," + cols;
  json hyper = json::array();
  for (std::size_t k = 0; k < active.size(); ++k) {
    hyp += std::string(hyper_name(active[k])) + "," + num(hyper_value(r.theta.mode, active[k])) + "," +
           marginal_fields(r.hyper[k]) + "\n";
    json h = marginal_json(r.hyper[k]);
    h["name"] = hyper_name(active[k]);
    h["mode"] = hyper_value(r.theta.mode, active[k]);
    hyper.push_back(h);
  }
  out.write_csv(dir + "hyperparameters.csv", hyp);
  out.write_csv(dir + "dic.csv", "dic,dic_saturated,p_d,mean_deviance,deviance_at_mean,draws\n" + num(r.dic.dic) + "," +
                                     num(r.dic.dic_saturated) + "," + num(r.dic.p_d) + "," + num(r.dic.mean_deviance) +
                                     "," + num(r.dic.deviance_at_mean) + "," + std::to_string(r.dic.draws) + "\n");

  json fixed_j = json::array();
  for (std::size_t k = 0; k < r.fixed.size(); ++k) {
    json m = marginal_json(r.fixed[k]);
    m["variable"] = r.fixed_names[k];
    fixed_j.push_back(m);
  }
  json grid = json::array();
  for (const auto& g : r.theta.grid) {
    json internal = json::array();
    for (Index k = 0; k < g.internal.size(); ++k) internal.push_back(g.internal[k]);
    grid.push_back({{"internal", internal},
                    {"log_posterior", g.log_posterior},
                    {"weight", g.weight},
                    {"newton_iterations", g.approx.iterations},
                    {"newton_converged", g.approx.converged}});
  }
  const auto& mode_approx = r.theta.grid.front().approx;
  out.write_json(dir + "fit_result.json",
                 {{"gender", gender_name(gender)},
                  {"districts", I},
                  {"age_groups", J},
                  {"weeks", T},
                  {"observations", model.observation_count()},
                  {"latent_dim", model.dim()},
                  {"constraints", model.constraints().count()},
                  {"interaction_precision", c.leroux_interactions ? "leroux" : "structure"},
                  {"marginal_strategy", "gaussian"},
                  {"exact_variances", r.exact_variances},
                  {"fixed_effects", fixed_j},
                  {"hyperparameters", hyper},
                  {"theta_grid", grid},
                  {"dic", {{"dic", r.dic.dic},
                           {"dic_saturated", r.dic.dic_saturated},
                           {"p_d", r.dic.p_d},
                           {"mean_deviance", r.dic.mean_deviance},
                           {"deviance_at_mean", r.dic.deviance_at_mean},
                           {"draws", r.dic.draws}}},
                  {"diagnostics", {{"theta_evaluations", r.theta.evaluations},
                                   {"simplex_restarts", r.theta.restarts},
                                   {"simplex_stalled", r.theta.stalled},
                                   {"grid_dominated", r.theta.grid_dominated},
                                   {"newton_tolerance", c.newton_tolerance},
                                   {"newton_max_iterations", c.newton_max_iterations},
                                   {"newton_max_halvings", 10},
                                   {"newton_trace_at_mode", mode_approx.trace},
                                   {"max_constraint_violation", r.max_constraint_violation}}}});
}

inline void cmd_fit(const RunConfig& c) {
  validate(c);
  require_file(c.observations, "observations");
  require_file(c.design, "design");
  require_file(c.adjacency, "adjacency");
  require_file(c.districts, "districts");
  const DistrictGraph graph = load_district_graph(c.adjacency, c.districts);
  const ObservationData data = read_observations_csv(c.observations, graph);
  const DesignTable design = read_design_csv(c.design);
  ModelTerms terms;
  terms.leroux_interactions = c.leroux_interactions;
  ModelOptions mo;
  if (c.desk_scale) mo.interaction.max_dim = 5000;
  OutputSet out(c.out, config_hash(c));
  for (Gender g : parse_genders(c.gender)) {
    const SpatioTemporalModel model = build_mortality_model(graph, data, design, g, terms, mo);
    const FitResult r = fit_model(model, fit_options(c));
    write_fit(model, r, graph, data.weeks, g, c, out);
  }
  out.write_manifest("fit", c);
}

// ---------------------------------------------------------------- simulate

inline SimulationSpec simulation_spec(const RunConfig& c) {
  SimulationSpec s;
  if (!c.desk_scale) {
    s.rows = c.rows;
    s.cols = c.cols;
    s.ages = c.ages;
    s.weeks = c.weeks;
  }
  s.start = parse_iso_week(c.sim_start);
  s.population = c.population;
  s.genders = parse_genders(c.sim_genders);
  s.seed = c.seed;
  return s;
}

inline void cmd_simulate(const RunConfig& c) {
  validate(c);
  const SimulationSpec spec = simulation_spec(c);
  if (spec.rows * spec.cols * spec.weeks > 200000)
    throw ValidationError("space-time interaction would exceed 200000 coordinates; reduce dimensions or use --desk-scale");
  const SimulatedData sim = simulate(spec);
  OutputSet out(c.out, config_hash(c));
  out.write_csv("observations.csv", observations_csv(sim.data, sim.graph));
  out.write_csv("design.csv", design_csv(sim.design));
  std::string edges = out.csv_header();
  for (Index i = 0; i < sim.graph.size(); ++i)
    for (Index j : sim.graph.neighbours(i))
      if (i < j) edges += sim.graph.id(i) + "\t" + sim.graph.id(j) + "\n";
  out.write("adjacency.tsv", edges);
  std::string attrs = "district_id,elevation_m,centroid_x_km,centroid_y_km\n";
  for (Index i = 0; i < sim.graph.size(); ++i)
    attrs += sim.graph.id(i) + "," + num(sim.graph.elevation_m(i)) + "," + num(sim.graph.centroid(i).x_km) + "," +
             num(sim.graph.centroid(i).y_km) + "\n";
  out.write_csv("districts.csv", attrs);

  json truth = json::array();
  const auto& names = covariate_names();
  const HyperSpace space{ModelTerms{}};
  for (const auto& t : sim.truth) {
    // The model always carries every age label, observed or not.
    const Index ages = std::max<Index>(spec.ages, static_cast<Index>(age_group_labels().size()));
    const auto lay = LatentLayout::make(sim.graph.size(), ages, spec.weeks, static_cast<Index>(names.size()), {});
    require(lay.total == t.latent.size(), "truth vector does not match the model layout");
    json gamma = json::object();
    for (std::size_t m = 0; m < names.size(); ++m) gamma[names[m]] = t.latent[lay.offset_of(Block::Fixed) + static_cast<Index>(m)];
    json theta = json::object();
    for (Hyper h : space.active()) theta[hyper_name(h)] = hyper_value(t.theta, h);
    json blocks = json::object();
    for (Block b : {Block::Spatial, Block::Age, Block::Time, Block::SpaceAge, Block::SpaceTime, Block::AgeTime}) {
      json v = json::array();
      for (Index k = 0; k < lay.size_of(b); ++k) v.push_back(t.latent[lay.offset_of(b) + k]);
      blocks[block_name(b)] = v;
    }
    truth.push_back({{"gender", gender_name(t.gender)},
                     {"alpha", t.latent[lay.offset_of(Block::Intercept)]},
                     {"gamma", gamma},
                     {"theta", theta},
                     {"random_effects", blocks}});
  }
  out.write_json("truth.json", {{"seed", spec.seed},
                                {"districts", sim.graph.size()},
                                {"age_groups", spec.ages},
                                {"model_age_levels", std::max<Index>(spec.ages, static_cast<Index>(age_group_labels().size()))},
                                {"weeks", spec.weeks},
                                {"population", spec.population},
                                {"genders", truth}});
  out.write_manifest("simulate", c);
}

// ------------------------------------------------------------------ report

/// Text rendering of fitted fixed effects and DIC for each gender found
/// under the output directory.
inline std::string cmd_report(const RunConfig& c) {
  std::ostringstream os;
  bool any = false;
  for (Gender g : parse_genders(c.gender)) {
    const fs::path p = fs::path(c.out) / gender_name(g) / "fit_result.json";
    if (!fs::exists(p)) {
      if (c.gender == "both") continue;
      throw ValidationError("no fit result at " + p.string());
    }
    json j;
    try {
      j = json::parse(read_file(p.string()));
    } catch (const json::parse_error& e) {
      throw ValidationError(p.string() + ": invalid JSON: " + e.what());
    }
    any = true;
    os << "Posterior estimates for fixed effects (" << gender_name(g) << ")\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-22s %9s %9s %21s %4s\n", "variable", "mean", "median", "95% CI", "sig");
    os << line;
    for (const auto& f : j.at("fixed_effects")) {
      char ci[64];
      std::snprintf(ci, sizeof ci, "(%.3f, %.3f)", f.at("ci_low").get<double>(), f.at("ci_high").get<double>());
      std::snprintf(line, sizeof line, "%-22s %9.3f %9.3f %21s %4s\n", f.at("variable").get<std::string>().c_str(),
                    f.at("mean").get<double>(), f.at("median").get<double>(), ci,
                    f.at("significant").get<bool>() ? "*" : "");
      os << line;
    }
    const auto& d = j.at("dic");
    std::snprintf(line, sizeof line, "DIC %.1f  saturated DIC %.1f  effective parameters %.1f\n\n",
                  d.at("dic").get<double>(), d.at("dic_saturated").get<double>(), d.at("p_d").get<double>());
    os << line;
  }
  if (!any) throw ValidationError("no fit results found under " + c.out);
  return os.str();
}

}  // namespace stmort::pipeline
