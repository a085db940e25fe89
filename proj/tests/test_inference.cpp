#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace stmort;
using stmort::ref::dense;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

double max_rel(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

// Dense posterior precision Q + M' W M of the Gaussian surrogate and the
// matching linear term.
struct DensePosterior {
  Matrix h;
  Vector b;
  Matrix a;
};

DensePosterior dense_gaussian_posterior(const SpatioTemporalModel& m, const HyperParams& th) {
  const double p = m.likelihood().gaussian_precision;
  const Matrix mm = Matrix(m.incidence());
  DensePosterior d;
  d.h = dense(m.prior_precision(th)) + p * mm.transpose() * mm;
  d.b = p * mm.transpose() * (m.response() - m.offset());
  d.a = m.constraints().dense();
  return d;
}

// Small Poisson model built directly, with three random covariates.
SpatioTemporalModel small_poisson(Index rows, Index cols, Index ages, Index weeks, std::uint64_t seed,
                                  long long population = 1000, double rate = 0.01) {
  const auto g = ref::lattice(rows, cols, seed);
  const Index I = g.size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Matrix design(I * weeks, 3);
  for (Index k = 0; k < design.size(); ++k) design.data()[k] = z(rng);
  std::vector<Observation> obs;
  for (Index i = 0; i < I; ++i)
    for (Index t = 0; t < weeks; ++t)
      for (Index j = 0; j < ages; ++j) {
        const double mu = static_cast<double>(population) * rate *
                          std::exp(0.2 * design(i * weeks + t, 0) + 0.1 * static_cast<double>(j) +
                                   0.15 * std::sin(0.7 * static_cast<double>(t)));
        std::poisson_distribution<long long> pois(mu);
        obs.push_back({i, j, t, static_cast<double>(pois(rng)), std::log(static_cast<double>(population))});
      }
  return SpatioTemporalModel(g, ages, weeks, design, {"c1", "c2", "c3"}, obs);
}

// Damped Newton on the unconstrained coordinates z of x = V z, with dense
// algebra throughout. Independent of the kriging-based solver.
Vector dense_poisson_mode(const SpatioTemporalModel& m, const HyperParams& th) {
  const Matrix v = ref::null_basis(m.constraints().dense());
  const Matrix mv = Matrix(m.incidence()) * v;
  const Matrix k = v.transpose() * dense(m.prior_precision(th)) * v;
  const Vector& y = m.response();
  const Vector& off = m.offset();
  auto f = [&](const Vector& z) {
    const Vector eta = off + mv * z;
    return (y.array() * eta.array() - eta.array().exp()).sum() - 0.5 * z.dot(k * z);
  };
  Vector x0 = Vector::Zero(m.dim());
  x0[m.layout().offset_of(Block::Intercept)] = std::log(y.sum() / off.array().exp().sum());
  Vector z = v.transpose() * x0;
  for (int it = 0; it < 200; ++it) {
    const Vector mu = (off + mv * z).array().exp();
    const Vector g = mv.transpose() * (y - mu) - k * z;
    const Matrix h = mv.transpose() * mu.asDiagonal() * mv + k;
    const Vector dz = h.ldlt().solve(g);
    double s = 1.0;
    const double f0 = f(z);
    while (f(z + s * dz) < f0 && s > 1e-10) s *= 0.5;
    z += s * dz;
    if (dz.cwiseAbs().maxCoeff() < 1e-13) break;
  }
  return v * z;
}

ThetaFit single_point(const SpatioTemporalModel& m, const HyperParams& th) {
  ThetaEvaluation ev = evaluate_theta(m, th);
  ThetaFit fit;
  GridPoint g;
  g.internal = ev.internal;
  g.theta = th;
  g.weight = 1.0;
  g.log_posterior = ev.log_posterior;
  g.approx = std::move(ev.approx);
  fit.grid.push_back(std::move(g));
  fit.mode = th;
  return fit;
}

}  // namespace

// ---- Gaussian surrogate: Laplace is exact ----

TEST(GaussianSurrogate, ModeMatchesKkt) {
  const auto s = ref::gaussian_surrogate(2, 2, 3, 6, 4.0, 3);
  const HyperParams th = ref::some_theta();
  const GaussianApprox g = newton_mode(s.model, th);
  const DensePosterior d = dense_gaussian_posterior(s.model, th);
  const Vector oracle = ref::kkt_solve(d.h, d.b, d.a);
  EXPECT_LE(max_rel(g.mode, oracle), 1e-9);
  EXPECT_TRUE(g.converged);
  // One step reaches the mode; the second only confirms it.
  EXPECT_LE(g.iterations, 2);
  EXPECT_LE(s.model.constraints().max_violation(g.mode), 1e-8);
}

TEST(GaussianSurrogate, EvidenceMatchesClosedForm) {
  const auto s = ref::gaussian_surrogate(2, 2, 3, 6, 4.0, 5);
  for (double scale : {0.3, 1.0, 4.0}) {
    HyperParams th = ref::some_theta();
    th.tau_time *= scale;
    th.tau_space_time /= scale;
    const double lp = log_posterior_theta(s.model, th) - s.model.log_prior_hyper(th, HyperScale::Internal);
    const double oracle = ref::gaussian_evidence(s.model, th);
    EXPECT_LE(std::abs(lp - oracle), 1e-6 * std::abs(oracle)) << lp << " vs " << oracle;
  }
}

TEST(GaussianSurrogate, MarginalVariancesMatchDense) {
  const auto s = ref::gaussian_surrogate(2, 2, 3, 6, 4.0, 7);
  const HyperParams th = ref::some_theta();
  const GaussianApprox g = newton_mode(s.model, th);
  const DensePosterior d = dense_gaussian_posterior(s.model, th);
  const Vector oracle = ref::restricted_covariance(d.h, d.a).diagonal();
  const Vector v = g.factor->marginal_variances();
  EXPECT_LE((v - oracle).cwiseAbs().maxCoeff(), 1e-6 * oracle.cwiseAbs().maxCoeff());
  for (Index k = 0; k < v.size(); ++k) EXPECT_LE(std::abs(v[k] - oracle[k]), 1e-6 * std::max(oracle[k], 1e-12));
}

TEST(GaussianSurrogate, SampledSummariesWithinMonteCarloError) {
  const auto s = ref::gaussian_surrogate(2, 2, 3, 6, 4.0, 9);
  const HyperParams th = ref::some_theta();
  const ThetaFit fit = single_point(s.model, th);
  PosteriorOptions po;
  po.exact_dim_limit = 0;
  po.variance_draws = 2000;
  po.seed = 12;
  const FitResult sampled = posterior_summaries(s.model, fit, po);
  EXPECT_FALSE(sampled.exact_variances);
  const DensePosterior d = dense_gaussian_posterior(s.model, th);
  const Matrix cov = ref::restricted_covariance(d.h, d.a);
  const Vector mean = ref::kkt_solve(d.h, d.b, d.a);
  const double n = static_cast<double>(po.variance_draws);
  for (Index k = 0; k < s.model.dim(); ++k) {
    const double sd = std::sqrt(cov(k, k));
    EXPECT_NEAR(sampled.mean[k], mean[k], 1e-9 * std::max(1.0, std::abs(mean[k])));
    EXPECT_LE(std::abs(sampled.sd[k] - sd), 3.0 * sd / std::sqrt(n)) << s.model.latent_name(k);
  }
  po.variance_draws = 1999;
  EXPECT_THROW(posterior_summaries(s.model, fit, po), ValidationError);
}

TEST(GaussianSurrogate, DuplicatedColumnSplitsCoefficient) {
  const auto s = ref::gaussian_surrogate(2, 2, 3, 6, 4.0, 11);
  const auto& m = s.model;
  ModelOptions opts = m.options();
  opts.fixed_precision = 1e-7;  // near-flat, so the likelihood decides the split
  const auto& L = m.layout();
  SpatioTemporalModel one(s.graph, L.ages, L.weeks, m.design(), m.covariate_names(), m.observations(), m.terms(),
                          m.likelihood(), opts);
  Matrix d2(m.design().rows(), 4);
  d2 << m.design().col(0), m.design().col(0), m.design().rightCols(2);
  SpatioTemporalModel two(s.graph, L.ages, L.weeks, d2, {"c1", "c1b", "c2", "c3"}, m.observations(), m.terms(),
                          m.likelihood(), opts);
  const HyperParams th = ref::some_theta();
  const Vector x1 = newton_mode(one, th).mode;
  const Vector x2 = newton_mode(two, th).mode;
  const Index f1 = one.layout().offset_of(Block::Fixed), f2 = two.layout().offset_of(Block::Fixed);
  EXPECT_NEAR(x2[f2] + x2[f2 + 1], x1[f1], 1e-6 * std::max(1.0, std::abs(x1[f1])));
  EXPECT_NEAR(x2[f2], x2[f2 + 1], 1e-6 * std::max(1.0, std::abs(x1[f1])));
  EXPECT_NEAR(x2[f2 + 2], x1[f1 + 1], 1e-6);
}

// ---- Poisson Newton ----

TEST(PoissonNewton, MatchesDenseOptimizer) {
  const auto m = small_poisson(1, 3, 2, 8, 21);
  const HyperParams th = ref::some_theta();
  const GaussianApprox g = newton_mode(m, th);
  EXPECT_TRUE(g.converged);
  const Vector oracle = dense_poisson_mode(m, th);
  EXPECT_LE(max_rel(g.mode, oracle), 1e-6);
  EXPECT_LE(m.constraints().max_violation(g.mode), 1e-8);
}

TEST(PoissonNewton, ZeroDeathsTerminatesFinite) {
  const auto g = ref::lattice(1, 3);
  std::vector<Observation> obs;
  for (Index i = 0; i < 3; ++i)
    for (Index t = 0; t < 5; ++t)
      for (Index j = 0; j < 2; ++j) obs.push_back({i, j, t, 0.0, 0.0});  // n = 1
  const SpatioTemporalModel m(g, 2, 5, Matrix::Zero(15, 0), {}, obs);
  const GaussianApprox a = newton_mode(m, ref::some_theta());
  EXPECT_TRUE(a.mode.allFinite());
  EXPECT_TRUE(a.converged || a.stalled);
  EXPECT_LT(a.mode[m.layout().offset_of(Block::Intercept)], -5.0);
}

TEST(PoissonNewton, MonotoneTraceAndConstraints) {
  const auto m = small_poisson(2, 2, 3, 10, 5);
  for (double tau : {0.5, 10.0, 500.0}) {
    HyperParams th = ref::some_theta();
    th.tau_spatial = th.tau_space_time = tau;
    const GaussianApprox g = newton_mode(m, th);
    for (std::size_t k = 1; k < g.trace.size(); ++k)
      EXPECT_GE(g.trace[k], g.trace[k - 1] - 1e-10 * std::max(1.0, std::abs(g.trace[k - 1])));
    EXPECT_LE(m.constraints().max_violation(g.mode), 1e-8);
    const Matrix draws = g.factor->sample(50, 3, &g.mode);
    EXPECT_LE((m.constraints().dense() * draws).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(PoissonNewton, IterationCapReportsTrace) {
  const auto m = small_poisson(1, 3, 2, 8, 2);
  NewtonOptions o;
  o.max_iterations = 1;
  try {
    newton_mode(m, ref::some_theta(), nullptr, o);
    FAIL() << "expected non-convergence";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("objective trace"), std::string::npos);
  }
}

TEST(PoissonNewton, NonFiniteMeanRejected) {
  const auto g = ref::lattice(1, 2);
  std::vector<Observation> obs;
  for (Index t = 0; t < 3; ++t)
    for (Index j = 0; j < 2; ++j) obs.push_back({t % 2, j, t, 1.0, 800.0});
  const SpatioTemporalModel m(g, 2, 3, Matrix::Zero(6, 0), {}, obs);
  Vector warm = Vector::Zero(m.dim());
  EXPECT_THROW(newton_mode(m, ref::some_theta(), &warm), NumericalError);
}

TEST(PoissonNewton, WarmStartReachesSameMode) {
  const auto m = small_poisson(2, 2, 3, 10, 8);
  const HyperParams th = ref::some_theta();
  const GaussianApprox cold = newton_mode(m, th);
  HyperParams th2 = th;
  th2.tau_time *= 3.0;
  const GaussianApprox other = newton_mode(m, th2);
  const GaussianApprox warm = newton_mode(m, th, &other.mode);
  EXPECT_LE(max_rel(warm.mode, cold.mode), 1e-7);
}

TEST(PoissonNewton, ObservationOrderIrrelevant) {
  const auto m = small_poisson(2, 2, 3, 8, 13);
  auto obs = m.observations();
  std::reverse(obs.begin(), obs.end());
  const auto& L = m.layout();
  const SpatioTemporalModel r(ref::lattice(2, 2, 13), L.ages, L.weeks, m.design(), m.covariate_names(), obs);
  const HyperParams th = ref::some_theta();
  const ThetaEvaluation a = evaluate_theta(m, th), b = evaluate_theta(r, th);
  EXPECT_LE(rel(a.log_posterior, b.log_posterior), 1e-10);
  EXPECT_LE(max_rel(a.approx.mode, b.approx.mode), 1e-10);
  EXPECT_LE(max_rel(a.approx.factor->marginal_variances(), b.approx.factor->marginal_variances()), 1e-10);
}

// ---- theta ----

TEST(LogPosteriorTheta, Deterministic) {
  const auto m = small_poisson(2, 2, 3, 8, 17);
  const HyperParams th = ref::some_theta();
  const double a = log_posterior_theta(m, th), b = log_posterior_theta(m, th);
  EXPECT_EQ(a, b);
}

TEST(LogPosteriorTheta, AdditiveConstantKeepsArgmax) {
  // Shifting the offset of a Gaussian surrogate and its response together
  // leaves the data unchanged; the Laplace objective is identical.
  const auto s = ref::gaussian_surrogate(2, 2, 3, 6, 4.0, 19);
  const auto& m = s.model;
  auto obs = m.observations();
  for (auto& o : obs) {
    o.offset += 3.0;
    o.response += 3.0;
  }
  const auto& L = m.layout();
  const SpatioTemporalModel shifted(s.graph, L.ages, L.weeks, m.design(), m.covariate_names(), obs, m.terms(),
                                    m.likelihood(), m.options());
  std::vector<double> a, b;
  for (double lt : {0.0, 1.0, 2.0, 3.0}) {
    HyperParams th = ref::some_theta();
    th.tau_time = std::exp(lt);
    a.push_back(log_posterior_theta(m, th));
    b.push_back(log_posterior_theta(shifted, th));
  }
  EXPECT_EQ(std::max_element(a.begin(), a.end()) - a.begin(), std::max_element(b.begin(), b.end()) - b.begin());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-8 * std::abs(a[k]));
}

TEST(OptimizeTheta, ModeBeatsGridAndReruns) {
  SimulationSpec spec;
  spec.rows = 2;
  spec.cols = 2;
  spec.weeks = 10;
  spec.seed = 31;
  const auto sim = simulate(spec);
  const auto m = build_mortality_model(sim.graph, sim.data, sim.design, Gender::Female);
  const ThetaFit a = optimize_theta(m);
  ASSERT_FALSE(a.grid.empty());
  EXPECT_LE(a.grid.size(), 15u);
  EXPECT_FALSE(a.grid_dominated);
  double wsum = 0.0;
  for (const auto& g : a.grid) {
    EXPECT_GE(a.grid[0].log_posterior, g.log_posterior - 1e-4);
    EXPECT_GE(g.weight, 0.0);
    wsum += g.weight;
  }
  EXPECT_NEAR(wsum, 1.0, 1e-12);
  const ThetaFit b = optimize_theta(m);
  EXPECT_EQ(a.mode_internal, b.mode_internal);
  EXPECT_EQ(a.log_posterior, b.log_posterior);
}

TEST(OptimizeTheta, BadInit) {
  const auto m = small_poisson(1, 3, 2, 8, 2);
  OptimizeOptions o;
  o.init = Vector::Zero(2);
  EXPECT_THROW(optimize_theta(m, o), ValidationError);
  o.init = Vector::Constant(m.hyper_space().dim(), std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(optimize_theta(m, o), ValidationError);
}

// ---- deviance and DIC ----

TEST(Deviance, SaturatedIsZeroAtObservedMeans) {
  for (double y : {0.0, 1.0, 7.0, 1234.0}) EXPECT_EQ(saturated_deviance_term(y, y), 0.0);
  const auto g = ref::lattice(1, 3);
  std::vector<Observation> obs;
  for (Index i = 0; i < 3; ++i)
    for (Index t = 0; t < 4; ++t)
      for (Index j = 0; j < 2; ++j) obs.push_back({i, j, t, 50.0, 0.0});
  const SpatioTemporalModel m(g, 2, 4, Matrix::Zero(12, 0), {}, obs, ModelTerms::intercept_only());
  Vector x(1);
  x << std::log(50.0);
  EXPECT_NEAR(saturated_deviance(m, x), 0.0, 1e-10);
  x << std::log(60.0);
  EXPECT_GT(saturated_deviance(m, x), 0.0);
}

TEST(Dic, NeedsEnoughDraws) {
  const auto m = small_poisson(1, 3, 2, 8, 3);
  const ThetaFit fit = single_point(m, ref::some_theta());
  EXPECT_THROW(compute_dic(m, fit, 99, 1), ValidationError);
  const DicResult d = compute_dic(m, fit, 100, 1);
  EXPECT_GE(d.p_d, 0.0);
  EXPECT_NEAR(d.dic, d.mean_deviance + d.p_d, 1e-9);
  const DicResult e = compute_dic(m, fit, 100, 1);
  EXPECT_EQ(d.dic, e.dic);
  EXPECT_EQ(d.dic_saturated, e.dic_saturated);
}

// ---- desk-scale recovery ----

class DeskScaleFit : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SimulationSpec spec;
    spec.seed = 2024;
    // The Gamma(1, 0.01) hyperprior pulls log tau_spatial down by roughly
    // (0.01 tau - 1) / 4 at nine districts; plant it where that pull vanishes.
    spec.theta.tau_spatial = 100.0;
    sim_ = new SimulatedData(simulate(spec));
    model_ = new SpatioTemporalModel(build_mortality_model(sim_->graph, sim_->data, sim_->design, Gender::Female));
    fit_ = new FitResult(fit_model(*model_));
  }
  static void TearDownTestSuite() {
    delete fit_;
    delete model_;
    delete sim_;
  }
  static SimulatedData* sim_;
  static SpatioTemporalModel* model_;
  static FitResult* fit_;
};
SimulatedData* DeskScaleFit::sim_ = nullptr;
SpatioTemporalModel* DeskScaleFit::model_ = nullptr;
FitResult* DeskScaleFit::fit_ = nullptr;

TEST_F(DeskScaleFit, RecoversWellInformedPrecisions) {
  HyperParams truth = SimulationSpec::planted_theta();
  truth.tau_spatial = 100.0;
  EXPECT_NEAR(std::log(fit_->theta.mode.tau_spatial), std::log(truth.tau_spatial), 1.0);
  EXPECT_NEAR(std::log(fit_->theta.mode.tau_time), std::log(truth.tau_time), 1.0);
}

TEST_F(DeskScaleFit, SummariesConsistent) {
  ASSERT_EQ(fit_->fixed.size(), 14u);
  EXPECT_TRUE(fit_->exact_variances);
  for (const auto& f : fit_->fixed) {
    EXPECT_EQ(f.mean, f.median);
    EXPECT_LE(f.ci_low, f.mean);
    EXPECT_GE(f.ci_high, f.mean);
    EXPECT_EQ(f.significant, f.ci_low > 0.0 || f.ci_high < 0.0);
  }
  EXPECT_LE(fit_->max_constraint_violation, 1e-8);
  for (const auto& g : fit_->theta.grid) EXPECT_LE(model_->constraints().max_violation(g.approx.mode), 1e-8);
  EXPECT_EQ(fit_->hyper.size(), 7u);
}

TEST_F(DeskScaleFit, DicBeatsInterceptOnly) {
  EXPECT_GE(fit_->dic.p_d, 0.0);
  EXPECT_TRUE(std::isfinite(fit_->dic.dic_saturated));
  const auto null_model =
      build_mortality_model(sim_->graph, sim_->data, sim_->design, Gender::Female, ModelTerms::intercept_only());
  const FitResult null_fit = fit_model(null_model);
  EXPECT_LT(fit_->dic.dic, null_fit.dic.dic);
  EXPECT_GE(null_fit.dic.p_d, 0.0);
}
