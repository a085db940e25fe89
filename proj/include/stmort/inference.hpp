#pragma once

// Laplace-approximation inference: constrained Newton mode of p(x | y, theta),
// approximate log p(theta | y), simplex search over theta with a local
// evaluation grid, Gaussian posterior marginals and DIC.

#include "stmort/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace stmort {

struct NewtonOptions {
  double tolerance = 1e-8;  // relative change in eta
  int max_iterations = 50;
  int max_halvings = 10;
  // `stall_window` consecutive iterations that fail to improve on the best
  // objective so far by this much (relative to max(1, |f|)) end the search
  // without convergence. Roundoff can make accepted steps bounce slightly.
  double stall_tolerance = 1e-12;
  int stall_window = 3;
};

/// Gaussian approximation of p(x | y, theta) at its mode.
struct GaussianApprox {
  Vector mode;
  SparseMatrix precision;
  std::shared_ptr<const ConstrainedGaussian> factor;
  double objective = 0.0;  // log p(y | x*) - 0.5 x*' Q x*
  bool converged = false;
  bool stalled = false;
  int iterations = 0;
  std::vector<double> trace;  // objective after each accepted step

  const ConstraintSet& constraints() const { return factor->constraints(); }
  /// log of the Gaussian density at its own mode.
  double log_density_at_mode() const {
    const double m = static_cast<double>(factor->free_dim());
    return -0.5 * m * std::log(2.0 * std::numbers::pi) + 0.5 * factor->log_det();
  }
};

namespace detail {

inline double relative_change(const Vector& d, const Vector& eta) {
  const double scale = std::max(1.0, eta.cwiseAbs().maxCoeff());
  return d.size() == 0 ? 0.0 : d.cwiseAbs().maxCoeff() / scale;
}

inline Vector cold_start(const SpatioTemporalModel& model) {
  Vector x = Vector::Zero(model.dim());
  if (model.likelihood().family == Family::Poisson) {
    const double deaths = model.response().sum();
    const double exposure = model.offset().array().exp().sum();
    x[model.layout().offset_of(Block::Intercept)] = std::log((deaths + 0.5) / exposure);
  } else {
    x[model.layout().offset_of(Block::Intercept)] = (model.response() - model.offset()).mean();
  }
  return x;
}

inline std::string format_trace(const std::vector<double>& t) {
  std::ostringstream os;
  os.precision(12);
  for (std::size_t k = 0; k < t.size(); ++k) os << (k ? ", " : "") << t[k];
  return os.str();
}

}  // namespace detail

/// Constrained penalized IRLS for the mode of p(x | y, theta).
inline GaussianApprox newton_mode(const SpatioTemporalModel& model, const HyperParams& theta,
                                  const Vector* warm_start = nullptr, const NewtonOptions& opts = {}) {
  const SparseMatrix qprior = model.prior_precision(theta);
  const SparseRowMatrix& m = model.incidence();
  const SparseMatrix& mt = model.incidence_t();
  const ConstraintSet& a = model.constraints();

  Vector x;
  if (warm_start != nullptr && warm_start->size() == model.dim() && warm_start->allFinite() &&
      a.max_violation(*warm_start) <= 1e-10) {
    x = *warm_start;
  } else {
    x = detail::cold_start(model);
  }

  auto objective = [&](const Vector& v, const Vector& eta) {
    return model.log_likelihood(eta) - 0.5 * v.dot(qprior * v);
  };
  auto check_eta = [](const Vector& eta) {
    if (!eta.allFinite() || eta.maxCoeff() > 700.0) throw NumericalError("non-finite mean in Newton iteration");
  };

  Vector eta = model.linear_predictor(x);
  check_eta(eta);
  double f = objective(x, eta);

  GaussianApprox out;
  int small_changes = 0;
  double best = f;
  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    out.iterations = iter;
    const Vector w = model.likelihood_curvature(eta);
    const Vector g = model.likelihood_gradient(eta);
    const SparseMatrix h = qprior + SparseMatrix(mt * w.asDiagonal() * SparseMatrix(m));
    const Vector b = mt * (w.cwiseProduct(eta - model.offset()) + g);
    const ConstrainedGaussian fac(h, a);
    const Vector target = fac.solve(b);

    const Vector dx = target - x;
    double step = 1.0;
    Vector xn, etan;
    double fn = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int k = 0; k <= opts.max_halvings; ++k, step *= 0.5) {
      xn = x + step * dx;
      etan = model.linear_predictor(xn);
      if (etan.allFinite() && etan.maxCoeff() <= 700.0) {
        fn = objective(xn, etan);
        if (std::isfinite(fn) && fn >= f - 1e-10 * std::max(1.0, std::abs(f))) {
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) {
      out.trace.push_back(f);
      throw NumericalError("Newton step halving failed at iteration " + std::to_string(iter) +
                           "; objective trace: " + detail::format_trace(out.trace));
    }
    const double change = detail::relative_change(etan - eta, etan);
    const double gain = (fn - best) / std::max(1.0, std::abs(best));
    x = std::move(xn);
    eta = std::move(etan);
    f = fn;
    out.trace.push_back(f);
    if (change < opts.tolerance) {
      out.converged = true;
      break;
    }
    small_changes = gain < opts.stall_tolerance ? small_changes + 1 : 0;
    best = std::max(best, f);
    if (small_changes >= opts.stall_window) {
      out.stalled = true;
      break;
    }
  }
  if (!out.converged && !out.stalled)
    throw NumericalError("Newton iteration did not converge in " + std::to_string(opts.max_iterations) +
                         " iterations; objective trace: " + detail::format_trace(out.trace));

  check_eta(eta);
  const Vector w = model.likelihood_curvature(eta);
  out.precision = qprior + SparseMatrix(mt * w.asDiagonal() * SparseMatrix(m));
  out.factor = std::make_shared<const ConstrainedGaussian>(out.precision, a);
  out.mode = std::move(x);
  out.objective = f;
  return out;
}

struct ThetaEvaluation {
  HyperParams theta;
  Vector internal;
  double log_posterior = -std::numeric_limits<double>::infinity();
  GaussianApprox approx;
};

/// Laplace approximation of log p(theta | y) up to a theta-free constant,
/// with theta given on the internal scale.
inline ThetaEvaluation evaluate_theta(const SpatioTemporalModel& model, const HyperParams& theta,
                                      const Vector* warm_start = nullptr, const NewtonOptions& opts = {}) {
  ThetaEvaluation ev;
  ev.theta = theta;
  ev.internal = model.hyper_space().to_internal(theta);
  ev.approx = newton_mode(model, theta, warm_start, opts);
  const Vector& x = ev.approx.mode;
  ev.log_posterior = model.log_likelihood(model.linear_predictor(x)) + model.log_prior_latent(x, theta) +
                     model.log_prior_hyper(theta, HyperScale::Internal) - ev.approx.log_density_at_mode();
  return ev;
}

inline double log_posterior_theta(const SpatioTemporalModel& model, const HyperParams& theta,
                                  const NewtonOptions& opts = {}) {
  return evaluate_theta(model, theta, nullptr, opts).log_posterior;
}

struct OptimizeOptions {
  Vector init;  // internal scale; empty picks log tau = 4, logit lambda = 0
  double ftol = 1e-4;
  int max_evaluations = 3000;
  double initial_step = 1.0;
  double hessian_step = 0.1;
  double max_grid_step = 2.5;
  int max_restarts = 3;
  NewtonOptions newton;
};

struct GridPoint {
  Vector internal;
  HyperParams theta;
  double log_posterior = 0.0;
  double weight = 0.0;
  GaussianApprox approx;
};

struct ThetaFit {
  HyperParams mode;
  Vector mode_internal;
  double log_posterior = 0.0;
  Vector step;  // grid half-widths on the internal scale
  std::vector<GridPoint> grid;  // grid[0] is the mode
  int evaluations = 0;
  int restarts = 0;
  bool stalled = false;       // simplex hit the evaluation cap
  bool grid_dominated = false;  // a neighbour still beats the mode after restarts
};

inline Vector default_init(const SpatioTemporalModel& model) {
  const auto& hs = model.hyper_space();
  Vector v(hs.dim());
  for (Index k = 0; k < hs.dim(); ++k) v[k] = hs.active()[static_cast<std::size_t>(k)] == Hyper::LambdaSpatial ? 0.0 : 4.0;
  return v;
}

namespace detail {

/// Memoized evaluator of -log p(theta | y) on the internal scale that
/// warm-starts Newton from the best mode seen so far.
class ThetaObjective {
 public:
  ThetaObjective(const SpatioTemporalModel& model, const NewtonOptions& opts) : model_(model), opts_(opts) {}

  double operator()(const Vector& v) {
    ++evaluations_;
    const HyperParams theta = model_.hyper_space().from_internal(v);
    if (!v.allFinite() || !theta.valid() || theta.lambda_spatial <= 0.0 || theta.lambda_spatial >= 1.0)
      return std::numeric_limits<double>::infinity();
    try {
      ThetaEvaluation ev = evaluate_theta(model_, theta, best_ ? &best_->approx.mode : nullptr, opts_);
      if (!std::isfinite(ev.log_posterior)) return std::numeric_limits<double>::infinity();
      const double val = -ev.log_posterior;
      if (!best_ || ev.log_posterior > best_->log_posterior) best_ = std::make_unique<ThetaEvaluation>(std::move(ev));
      return val;
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  }

  ThetaEvaluation evaluate(const Vector& v) {
    ++evaluations_;
    const HyperParams theta = model_.hyper_space().from_internal(v);
    return evaluate_theta(model_, theta, best_ ? &best_->approx.mode : nullptr, opts_);
  }

  const ThetaEvaluation* best() const { return best_.get(); }
  int evaluations() const { return evaluations_; }

 private:
  const SpatioTemporalModel& model_;
  NewtonOptions opts_;
  std::unique_ptr<ThetaEvaluation> best_;
  int evaluations_ = 0;
};

struct SimplexResult {
  Vector x;
  double f = 0.0;
  bool stalled = false;
};

/// Nelder-Mead minimization; stops when the spread of simplex values is
/// below ftol or after max_evals evaluations.
template <class F>
SimplexResult nelder_mead(F& f, const Vector& x0, double step, double ftol, int max_evals) {
  const Index n = x0.size();
  std::vector<Vector> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> val(static_cast<std::size_t>(n + 1));
  val[0] = f(x0);
  if (!std::isfinite(val[0])) throw NumericalError("objective is not finite at the initial hyperparameters");
  for (Index k = 0; k < n; ++k) {
    pts[static_cast<std::size_t>(k + 1)][k] += step;
    val[static_cast<std::size_t>(k + 1)] = f(pts[static_cast<std::size_t>(k + 1)]);
  }
  int evals = static_cast<int>(n + 1);
  std::vector<std::size_t> order(static_cast<std::size_t>(n + 1));
  SimplexResult res;
  while (true) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];
    if (n == 0 || val[worst] - val[best] <= ftol) break;
    if (evals >= max_evals) {
      res.stalled = true;
      break;
    }
    Vector centroid = Vector::Zero(n);
    for (std::size_t k = 0; k + 1 < order.size(); ++k) centroid += pts[order[k]];
    centroid /= static_cast<double>(n);

    const Vector xr = centroid + (centroid - pts[worst]);
    const double fr = f(xr);
    ++evals;
    if (fr < val[best]) {
      const Vector xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = f(xe);
      ++evals;
      if (fe < fr) {
        pts[worst] = xe;
        val[worst] = fe;
      } else {
        pts[worst] = xr;
        val[worst] = fr;
      }
      continue;
    }
    if (fr < val[second]) {
      pts[worst] = xr;
      val[worst] = fr;
      continue;
    }
    const bool outside = fr < val[worst];
    const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid)) : Vector(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = f(xc);
    ++evals;
    if (fc < (outside ? fr : val[worst])) {
      pts[worst] = xc;
      val[worst] = fc;
      continue;
    }
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (k == best) continue;
      pts[k] = pts[best] + 0.5 * (pts[k] - pts[best]);
      val[k] = f(pts[k]);
      ++evals;
    }
  }
  const auto it = std::min_element(val.begin(), val.end());
  res.x = pts[static_cast<std::size_t>(it - val.begin())];
  res.f = *it;
  return res;
}

}  // namespace detail

/// Posterior mode of theta plus the 2d+1 axis grid around it, weighted by
/// the normalized approximate posterior.
inline ThetaFit optimize_theta(const SpatioTemporalModel& model, const OptimizeOptions& opts = {}) {
  const auto& hs = model.hyper_space();
  const Index d = hs.dim();
  Vector start = opts.init.size() == 0 ? default_init(model) : opts.init;
  require(start.size() == d, "initial hyperparameter vector has wrong size");
  require(start.allFinite(), "initial hyperparameters must be finite");

  detail::ThetaObjective obj(model, opts.newton);
  ThetaFit fit;
  std::vector<GridPoint> grid;
  for (int round = 0;; ++round) {
    const int budget = std::max(1, opts.max_evaluations - obj.evaluations());
    const detail::SimplexResult sr = detail::nelder_mead(obj, start, opts.initial_step, opts.ftol, budget);
    fit.stalled = fit.stalled || sr.stalled;
    Vector center = obj.best() ? obj.best()->internal : sr.x;

    ThetaEvaluation c = obj.evaluate(center);
    // Diagonal curvature by central differences; steps are one approximate
    // posterior standard deviation, capped to keep the grid local.
    Vector step(d);
    std::vector<ThetaEvaluation> side;
    for (Index k = 0; k < d; ++k) {
      Vector up = center, dn = center;
      up[k] += opts.hessian_step;
      dn[k] -= opts.hessian_step;
      double fu = -std::numeric_limits<double>::infinity(), fd = fu;
      try {
        fu = obj.evaluate(up).log_posterior;
        fd = obj.evaluate(dn).log_posterior;
      } catch (const NumericalError&) {
      }
      const double h = -(fu - 2.0 * c.log_posterior + fd) / (opts.hessian_step * opts.hessian_step);
      step[k] = (std::isfinite(h) && h > 0.0) ? std::min(1.0 / std::sqrt(h), opts.max_grid_step) : 1.0;
    }

    grid.clear();
    GridPoint g0;
    g0.internal = center;
    g0.theta = c.theta;
    g0.log_posterior = c.log_posterior;
    g0.approx = std::move(c.approx);
    grid.push_back(std::move(g0));
    for (Index k = 0; k < d; ++k) {
      for (double sgn : {1.0, -1.0}) {
        Vector v = center;
        v[k] += sgn * step[k];
        GridPoint gp;
        gp.internal = v;
        gp.theta = hs.from_internal(v);
        try {
          ThetaEvaluation ev = obj.evaluate(v);
          gp.log_posterior = ev.log_posterior;
          gp.approx = std::move(ev.approx);
        } catch (const NumericalError&) {
          gp.log_posterior = -std::numeric_limits<double>::infinity();
        }
        grid.push_back(std::move(gp));
      }
    }
    fit.step = step;
    auto better = std::max_element(grid.begin() + 1, grid.end(), [](const GridPoint& a, const GridPoint& b) {
      return a.log_posterior < b.log_posterior;
    });
    const bool dominated = better != grid.end() && better->log_posterior > grid[0].log_posterior + opts.ftol;
    if (!dominated) break;
    if (round >= opts.max_restarts) {
      fit.grid_dominated = true;
      break;
    }
    ++fit.restarts;
    start = better->internal;
  }

  const double top = grid[0].log_posterior;
  double total = 0.0;
  for (auto& g : grid) {
    g.weight = std::isfinite(g.log_posterior) ? std::exp(g.log_posterior - top) : 0.0;
    total += g.weight;
  }
  for (auto& g : grid) g.weight /= total;
  // Drop zero-weight points (failed evaluations carry no approximation).
  std::erase_if(grid, [](const GridPoint& g) { return g.weight == 0.0; });

  fit.mode_internal = grid[0].internal;
  fit.mode = grid[0].theta;
  fit.log_posterior = grid[0].log_posterior;
  fit.grid = std::move(grid);
  fit.evaluations = obj.evaluations();
  return fit;
}

/// Gaussian marginal summary; median equals the mean.
struct Marginal {
  double mean = 0.0;
  double sd = 0.0;
  double median = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool significant = false;

  static Marginal gaussian(double mean, double var) {
    Marginal m;
    m.mean = m.median = mean;
    m.sd = std::sqrt(std::max(var, 0.0));
    m.ci_low = mean - 1.96 * m.sd;
    m.ci_high = mean + 1.96 * m.sd;
    m.significant = m.ci_low > 0.0 || m.ci_high < 0.0;
    return m;
  }
};

struct PosteriorOptions {
  Index exact_dim_limit = 5000;  // exact marginal variances up to this dimension
  Index variance_draws = 2000;   // draws per grid point above the limit
  std::uint64_t seed = 1;
};

struct DicResult {
  double dic = 0.0;
  double dic_saturated = 0.0;
  double p_d = 0.0;
  double mean_deviance = 0.0;
  double deviance_at_mean = 0.0;
  Index draws = 0;
};

struct FitResult {
  std::vector<std::string> fixed_names;  // "(Intercept)" then covariates
  std::vector<Marginal> fixed;
  Vector mean;  // every latent coordinate
  Vector sd;
  ThetaFit theta;
  std::vector<Marginal> hyper;  // natural scale, grid-weighted, per active hyperparameter
  DicResult dic;
  bool exact_variances = true;
  double max_constraint_violation = 0.0;

  Marginal latent(Index k) const { return Marginal::gaussian(mean[k], sd[k] * sd[k]); }
};

/// Per-coordinate variances of one Gaussian approximation.
inline Vector approx_variances(const GaussianApprox& g, const PosteriorOptions& opts, std::uint64_t stream) {
  if (g.factor->dim() <= opts.exact_dim_limit) return g.factor->marginal_variances();
  if (opts.variance_draws < 2000)
    throw ValidationError("posterior variance sampling needs at least 2000 draws, got " +
                          std::to_string(opts.variance_draws));
  const Matrix s = g.factor->sample(opts.variance_draws, opts.seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1)));
  return s.rowwise().squaredNorm() / static_cast<double>(opts.variance_draws);
}

/// Mixture-of-Gaussians marginals over the weighted theta grid.
inline FitResult posterior_summaries(const SpatioTemporalModel& model, const ThetaFit& theta,
                                     const PosteriorOptions& opts = {}) {
  require(!theta.grid.empty(), "posterior summaries need at least one grid point");
  const Index n = model.dim();
  FitResult r;
  r.theta = theta;
  r.exact_variances = n <= opts.exact_dim_limit;
  Vector mean = Vector::Zero(n), second = Vector::Zero(n);
  for (std::size_t k = 0; k < theta.grid.size(); ++k) {
    const auto& g = theta.grid[k];
    const Vector v = approx_variances(g.approx, opts, k);
    mean += g.weight * g.approx.mode;
    second += g.weight * (v + g.approx.mode.cwiseAbs2());
    r.max_constraint_violation = std::max(r.max_constraint_violation, model.constraints().max_violation(g.approx.mode));
  }
  r.mean = mean;
  r.sd = (second - mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();

  const auto& lay = model.layout();
  r.fixed_names.push_back("(Intercept)");
  r.fixed.push_back(r.latent(lay.offset_of(Block::Intercept)));
  for (Index m = 0; m < lay.fixed; ++m) {
    r.fixed_names.push_back(model.covariate_names()[static_cast<std::size_t>(m)]);
    r.fixed.push_back(r.latent(lay.offset_of(Block::Fixed) + m));
  }

  for (Hyper h : model.hyper_space().active()) {
    double m1 = 0.0, m2 = 0.0;
    for (const auto& g : theta.grid) {
      const double v = hyper_value(g.theta, h);
      m1 += g.weight * v;
      m2 += g.weight * v * v;
    }
    r.hyper.push_back(Marginal::gaussian(m1, m2 - m1 * m1));
  }
  return r;
}

/// Deviance -2 log p(y | x).
inline double deviance(const SpatioTemporalModel& model, const Vector& x) {
  return -2.0 * model.log_likelihood(model.linear_predictor(x));
}

/// Deviance relative to the saturated Poisson model.
inline double saturated_deviance(const SpatioTemporalModel& model, const Vector& x) {
  const Vector eta = model.linear_predictor(x);
  double s = 0.0;
  for (Index o = 0; o < eta.size(); ++o) s += saturated_deviance_term(model.response()[o], std::exp(eta[o]));
  return s;
}

/// DIC from `draws` posterior draws split across grid points by weight.
/// The plug-in deviance uses the mean of the same draws, so p_D >= 0 for
/// convex deviances.
inline DicResult compute_dic(const SpatioTemporalModel& model, const ThetaFit& theta, Index draws,
                             std::uint64_t seed) {
  if (draws < 100) throw ValidationError("DIC needs at least 100 posterior draws, got " + std::to_string(draws));
  require(!theta.grid.empty(), "DIC needs at least one grid point");
  const std::size_t k = theta.grid.size();
  std::vector<Index> alloc(k);
  std::vector<std::pair<double, std::size_t>> rem;
  Index used = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double share = theta.grid[i].weight * static_cast<double>(draws);
    alloc[i] = static_cast<Index>(std::floor(share));
    used += alloc[i];
    rem.emplace_back(share - std::floor(share), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; used < draws; ++i, ++used) ++alloc[rem[i % k].second];

  DicResult r;
  r.draws = draws;
  const bool poisson = model.likelihood().family == Family::Poisson;
  Vector xbar = Vector::Zero(model.dim());
  double dsum = 0.0, ssum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& g = theta.grid[i].approx;
    for (Index d = 0; d < alloc[i]; ++d) {
      const Vector x = g.mode + g.factor->draw(seed + i, static_cast<std::uint64_t>(d));
      xbar += x;
      dsum += deviance(model, x);
      if (poisson) ssum += saturated_deviance(model, x);
    }
  }
  const double nd = static_cast<double>(draws);
  xbar /= nd;
  r.mean_deviance = dsum / nd;
  r.deviance_at_mean = deviance(model, xbar);
  r.p_d = r.mean_deviance - r.deviance_at_mean;
  r.dic = r.mean_deviance + r.p_d;
  r.dic_saturated = poisson ? ssum / nd + r.p_d : std::numeric_limits<double>::quiet_NaN();
  return r;
}

struct FitOptions {
  OptimizeOptions optimize;
  PosteriorOptions posterior;
  Index dic_draws = 1000;
  std::uint64_t seed = 1;
};

inline FitResult fit_model(const SpatioTemporalModel& model, const FitOptions& opts = {}) {
  ThetaFit theta = optimize_theta(model, opts.optimize);
  PosteriorOptions po = opts.posterior;
  po.seed = opts.seed;
  FitResult r = posterior_summaries(model, theta, po);
  r.dic = compute_dic(model, r.theta, opts.dic_draws, opts.seed + 7919);
  return r;
}

}  // namespace stmort
