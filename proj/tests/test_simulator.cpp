#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace stmort;

namespace {

double total_deaths(const SimulatedData& s) {
  double t = 0.0;
  for (const auto& c : s.data.cells) t += static_cast<double>(c.deaths);
  return t;
}

SimulationSpec flat_spec() {
  SimulationSpec spec;
  spec.gamma.assign(covariate_names().size(), 0.0);
  spec.random_effects = false;
  return spec;
}

}  // namespace

TEST(Simulator, BaselineRate) {
  SimulationSpec spec = flat_spec();
  spec.seed = 3;
  const auto s = simulate(spec);
  const double cells = static_cast<double>(s.data.cells.size());
  const double expected = cells * 100000.0 * 0.001;
  EXPECT_LE(std::abs(total_deaths(s) - expected), 3.0 * std::sqrt(expected));
}

TEST(Simulator, DeskScaleRowCount) {
  SimulationSpec spec;
  EXPECT_EQ(simulate(spec).data.cells.size(), 9u * 4u * 52u);
  spec.genders = {Gender::Female, Gender::Male};
  const auto both = simulate(spec);
  EXPECT_EQ(both.data.cells.size(), 2u * 1872u);
  EXPECT_EQ(both.truth.size(), 2u);
  EXPECT_EQ(both.design.rows.size(), 9u * 52u);
}

TEST(Simulator, SeedDeterminism) {
  SimulationSpec spec;
  spec.seed = 77;
  const auto a = simulate(spec), b = simulate(spec);
  ASSERT_EQ(a.data.cells.size(), b.data.cells.size());
  for (std::size_t k = 0; k < a.data.cells.size(); ++k) EXPECT_EQ(a.data.cells[k].deaths, b.data.cells[k].deaths);
  EXPECT_EQ(a.truth[0].latent, b.truth[0].latent);
  spec.seed = 78;
  const auto c = simulate(spec);
  std::size_t differ = 0;
  for (std::size_t k = 0; k < a.data.cells.size(); ++k) differ += a.data.cells[k].deaths != c.data.cells[k].deaths;
  EXPECT_GT(differ, a.data.cells.size() / 2);
}

TEST(Simulator, HotWeekRateRatio) {
  SimulationSpec spec = flat_spec();
  const Index hot = 8;
  ASSERT_EQ(covariate_names()[static_cast<std::size_t>(hot)], "hot_week");
  spec.gamma[hot] = -0.121;
  spec.prevalence.assign(SimulationSpec::default_prevalence().size(), 0.0);
  spec.prevalence[hot - 3] = 0.5;
  spec.population = 1000000;
  spec.seed = 5;
  const auto s = simulate(spec);
  double dh = 0, nh = 0, db = 0, nb = 0;
  for (const auto& c : s.data.cells) {
    const auto* row = s.design.find(s.graph.id(c.district), s.data.weeks[static_cast<std::size_t>(c.week)]);
    ASSERT_NE(row, nullptr);
    const bool is_hot = row->values[static_cast<std::size_t>(hot)] == 1.0;
    (is_hot ? dh : db) += static_cast<double>(c.deaths);
    (is_hot ? nh : nb) += static_cast<double>(c.population);
  }
  ASSERT_GT(nh, 0.0);
  ASSERT_GT(nb, 0.0);
  const double log_ratio = std::log((dh / nh) / (db / nb));
  const double se = std::sqrt(1.0 / dh + 1.0 / db);
  EXPECT_NEAR(log_ratio, -0.121, 3.0 * se);
}

TEST(Simulator, PopulationDoublingDoublesDeaths) {
  SimulationSpec spec = flat_spec();
  spec.seed = 8;
  const double t1 = total_deaths(simulate(spec));
  spec.population *= 2;
  spec.seed = 9;
  const double t2 = total_deaths(simulate(spec));
  EXPECT_LE(std::abs(t2 - 2.0 * t1), 3.0 * std::sqrt(t2 + 4.0 * t1));
}

TEST(Simulator, TruthSatisfiesConstraints) {
  SimulationSpec spec;
  spec.genders = {Gender::Female, Gender::Male};
  spec.seed = 12;
  const auto s = simulate(spec);
  for (const auto& t : s.truth) {
    const auto m = build_mortality_model(s.graph, s.data, s.design, t.gender);
    EXPECT_LE(m.constraints().max_violation(t.latent), 1e-8);
    const auto& L = m.layout();
    EXPECT_DOUBLE_EQ(t.latent[L.offset_of(Block::Intercept)], std::log(0.001));
    const auto g = SimulationSpec::planted_gamma();
    for (Index k = 0; k < L.fixed; ++k) EXPECT_EQ(t.latent[L.offset_of(Block::Fixed) + k], g[static_cast<std::size_t>(k)]);
    EXPECT_GT(t.latent.segment(L.offset_of(Block::SpaceTime), L.size_of(Block::SpaceTime)).norm(), 0.0);
  }
  // Independent draws per gender.
  EXPECT_NE(s.truth[0].latent, s.truth[1].latent);
}

TEST(Simulator, PlantedEffects) {
  const auto g = SimulationSpec::planted_gamma();
  const auto& names = covariate_names();
  auto at = [&](const std::string& n) { return g[static_cast<std::size_t>(std::find(names.begin(), names.end(), n) - names.begin())]; };
  EXPECT_EQ(at("scale_temp_max_mean"), 0.034);
  EXPECT_EQ(at("cold_week"), 0.047);
  EXPECT_EQ(at("super_cold_week"), 0.067);
  EXPECT_EQ(at("elevation_km"), -0.113);
}

TEST(Simulator, DesignColumns) {
  SimulationSpec spec;
  const auto s = simulate(spec);
  EXPECT_EQ(s.design.columns, covariate_names());
  for (const auto& r : s.design.rows) {
    for (std::size_t m = 3; m + 1 < r.values.size(); ++m) EXPECT_TRUE(r.values[m] == 0.0 || r.values[m] == 1.0);
    EXPECT_GE(r.values.back(), 0.2);
    EXPECT_LE(r.values.back(), 2.0);
  }
  for (const auto& c : s.data.cells) EXPECT_LE(c.deaths, c.population);
}

TEST(Simulator, OverflowGuard) {
  SimulationSpec spec = flat_spec();
  spec.alpha = 20.0;  // log(1e5) + 20 > 30
  try {
    simulate(spec);
    FAIL() << "expected the overflow guard";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("exceeds 30"), std::string::npos);
  }
}

TEST(Simulator, CellCap) {
  SimulationSpec spec;
  spec.max_cells = 1000;
  try {
    simulate(spec);
    FAIL() << "expected the cell cap";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("--desk-scale"), std::string::npos);
  }
}

TEST(Simulator, InvalidSpecs) {
  SimulationSpec spec;
  spec.ages = 1;
  EXPECT_THROW(simulate(spec), ValidationError);
  spec = SimulationSpec{};
  spec.ages = 5;
  EXPECT_THROW(simulate(spec), ValidationError);
  spec = SimulationSpec{};
  spec.population = 0;
  EXPECT_THROW(simulate(spec), ValidationError);
  spec = SimulationSpec{};
  spec.rows = spec.cols = 1;
  EXPECT_THROW(simulate(spec), ValidationError);
  spec = SimulationSpec{};
  spec.gamma = {0.1};
  EXPECT_THROW(simulate(spec), ValidationError);
  spec = SimulationSpec{};
  spec.theta.tau_time = -1.0;
  EXPECT_THROW(simulate(spec), ValidationError);
}

TEST(Simulator, SuppliedGraph) {
  const auto g = ref::lattice(2, 4);
  SimulationSpec spec;
  spec.weeks = 8;
  const auto s = simulate(spec, &g);
  EXPECT_EQ(s.graph.size(), 8);
  EXPECT_EQ(s.data.cells.size(), 8u * 4u * 8u);
}
