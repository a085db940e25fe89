#pragma once

// Synthetic datasets drawn from the model's own generative process, used as
// a recovery oracle for inference and as pipeline fixtures.

#include "stmort/model.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace stmort {

struct SimulationSpec {
  Index rows = 3;  // lattice used when no graph is supplied
  Index cols = 3;
  Index ages = 4;
  Index weeks = 52;
  IsoWeek start{2010, 1};
  std::vector<Gender> genders{Gender::Female};
  long long population = 100000;
  double alpha = std::log(0.001);
  std::vector<double> gamma;        // one per covariate; empty = planted defaults
  std::vector<double> prevalence;   // per indicator column, in design order
  HyperParams theta = planted_theta();
  bool random_effects = true;       // false draws every random effect as 0
  double elevation_min_km = 0.2;
  double elevation_max_km = 2.0;
  std::uint64_t seed = 1;
  Index max_cells = 2000000;

  static HyperParams planted_theta() {
    HyperParams t;
    t.tau_spatial = 400.0;
    t.lambda_spatial = 0.6;
    t.tau_age = 10.0;
    t.tau_time = 100.0;
    t.tau_space_age = 200.0;
    t.tau_space_time = 400.0;
    t.tau_age_time = 400.0;
    return t;
  }

  /// temp-max 0.034, cold week 0.047, super-cold week 0.067, elevation -0.113.
  static std::vector<double> planted_gamma() {
    std::vector<double> g(covariate_names().size(), 0.0);
    g[0] = 0.034;
    g[9] = 0.047;
    g[10] = 0.067;
    g[12] = -0.113;
    return g;
  }

  static std::vector<double> default_prevalence() {
    // strong_discomfort .. last_week_was_dry
    return {0.10, 0.06, 0.03, 0.01, 0.30, 0.10, 0.25, 0.12, 0.10};
  }
};

struct SimulationTruth {
  Gender gender = Gender::Female;
  HyperParams theta;
  Vector latent;  // full latent vector in model layout
};

struct SimulatedData {
  DistrictGraph graph;
  ObservationData data;
  DesignTable design;
  std::vector<SimulationTruth> truth;
};

namespace detail {

inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// Synthetic design: standard-normal continuous columns, Bernoulli indicator
/// columns and the graph's elevation in kilometres.
inline DesignTable simulate_design(const DistrictGraph& graph, const std::vector<IsoWeek>& weeks,
                                   const std::vector<double>& prevalence, std::uint64_t seed) {
  const auto& names = covariate_names();
  require(prevalence.size() == names.size() - 4, "need one prevalence per indicator column");
  for (double p : prevalence) require(p >= 0.0 && p <= 1.0, "prevalence must lie in [0, 1]");
  auto rng = detail::stream_rng(seed, 1);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  DesignTable d;
  d.columns = names;
  for (Index i = 0; i < graph.size(); ++i) {
    for (const auto& w : weeks) {
      DesignRow r{graph.id(i), w, std::vector<double>(names.size(), 0.0)};
      for (std::size_t m = 0; m < 3; ++m) r.values[m] = normal(rng);
      for (std::size_t m = 0; m < prevalence.size(); ++m) r.values[3 + m] = unif(rng) < prevalence[m] ? 1.0 : 0.0;
      r.values.back() = graph.elevation_km(i);
      d.rows.push_back(std::move(r));
    }
  }
  d.reindex();
  return d;
}

inline SimulatedData simulate(const SimulationSpec& spec, const DistrictGraph* graph_in = nullptr) {
  require(spec.ages >= 2 && spec.weeks >= 2, "simulation needs at least two age groups and two weeks");
  require(spec.ages <= static_cast<Index>(age_group_labels().size()), "at most four age groups are supported");
  require(spec.population > 0, "population must be positive");
  require(spec.theta.valid(), "invalid planted hyperparameters");
  require(!spec.genders.empty(), "no genders to simulate");

  DistrictGraph graph = [&] {
    if (graph_in != nullptr) return *graph_in;
    require(spec.rows >= 1 && spec.cols >= 1 && spec.rows * spec.cols >= 2, "simulation needs at least two districts");
    const Index n = spec.rows * spec.cols;
    std::vector<double> elev(static_cast<std::size_t>(n));
    auto rng = detail::stream_rng(spec.seed, 0);
    std::uniform_real_distribution<double> unif(spec.elevation_min_km, spec.elevation_max_km);
    for (auto& e : elev) e = 1000.0 * unif(rng);
    return lattice_graph(spec.rows, spec.cols, std::move(elev));
  }();

  const Index cells = graph.size() * spec.ages * spec.weeks * static_cast<Index>(spec.genders.size());
  if (cells > spec.max_cells)
    throw ValidationError("simulation would produce " + std::to_string(cells) + " cells, above the cap of " +
                          std::to_string(spec.max_cells) + "; reduce dimensions or use --desk-scale");

  SimulatedData out{graph, {}, {}, {}};
  IsoWeek w = spec.start;
  for (Index t = 0; t < spec.weeks; ++t, w = w.next()) out.data.weeks.push_back(w);
  const std::vector<double> prev = spec.prevalence.empty() ? SimulationSpec::default_prevalence() : spec.prevalence;
  out.design = simulate_design(graph, out.data.weeks, prev, spec.seed);
  const std::vector<double> gamma = spec.gamma.empty() ? SimulationSpec::planted_gamma() : spec.gamma;
  require(gamma.size() == covariate_names().size(), "need one planted coefficient per covariate");

  for (std::size_t gi = 0; gi < spec.genders.size(); ++gi) {
    const Gender gender = spec.genders[gi];
    ObservationData one;
    one.weeks = out.data.weeks;
    for (Index i = 0; i < graph.size(); ++i)
      for (Index t = 0; t < spec.weeks; ++t)
        for (Index j = 0; j < spec.ages; ++j) one.cells.push_back({i, t, j, gender, 0, spec.population});
    const SpatioTemporalModel model = build_mortality_model(graph, one, out.design, gender);
    const auto& lay = model.layout();

    Vector x = Vector::Zero(model.dim());
    x[lay.offset_of(Block::Intercept)] = spec.alpha;
    for (Index m = 0; m < lay.fixed; ++m) x[lay.offset_of(Block::Fixed) + m] = gamma[static_cast<std::size_t>(m)];
    if (spec.random_effects) {
      for (Block b : {Block::Spatial, Block::Age, Block::Time, Block::SpaceAge, Block::SpaceTime, Block::AgeTime}) {
        if (!lay.has(b)) continue;
        const ConstrainedGaussian g(model.block_precision(b, spec.theta), model.block_constraints(b));
        x.segment(lay.offset_of(b), lay.size_of(b)) =
            g.draw(spec.seed, 1000 * (gi + 1) + static_cast<std::uint64_t>(b));
      }
    }
    const Vector eta = model.linear_predictor(x);
    if (eta.maxCoeff() > 30.0)
      throw ValidationError("simulated linear predictor exceeds 30; use smaller effect scales or populations");

    auto rng = detail::stream_rng(spec.seed, 100 + gi);
    for (std::size_t o = 0; o < one.cells.size(); ++o) {
      std::poisson_distribution<long long> pois(std::exp(eta[static_cast<Index>(o)]));
      one.cells[o].deaths = std::min(pois(rng), one.cells[o].population);
    }
    out.data.cells.insert(out.data.cells.end(), one.cells.begin(), one.cells.end());
    out.truth.push_back({gender, spec.theta, std::move(x)});
  }
  return out;
}

}  // namespace stmort
