#pragma once

// Latent Gaussian model for weekly mortality counts: layout of the latent
// vector, incidence map to the linear predictor, joint prior precision with
// its identifiability constraints, and hyperparameter priors.

#include "stmort/calendar.hpp"
#include "stmort/covariates.hpp"
#include "stmort/geo_graph.hpp"
#include "stmort/gmrf.hpp"
#include "stmort/likelihood.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace stmort {

enum class Gender { Female, Male };

inline const char* gender_name(Gender g) { return g == Gender::Female ? "female" : "male"; }

inline Gender parse_gender(const std::string& s) {
  if (s == "female" || s == "f" || s == "F") return Gender::Female;
  if (s == "male" || s == "m" || s == "M") return Gender::Male;
  throw ValidationError("unknown gender '" + s + "'");
}

inline const std::vector<std::string>& age_group_labels() {
  static const std::vector<std::string> labels{"0-64", "65-74", "75-84", "85+"};
  return labels;
}

/// One (district, week, age group, gender) count.
struct MortalityCell {
  Index district = 0;
  Index week = 0;
  Index age = 0;
  Gender gender = Gender::Female;
  long long deaths = 0;
  long long population = 1;
};

struct ObservationData {
  std::vector<IsoWeek> weeks;  // horizon, consecutive
  std::vector<MortalityCell> cells;
};

/// district_id,iso_year,iso_week,age_group,gender,deaths,population
inline ObservationData read_observations_csv(const std::string& path, const DistrictGraph& graph) {
  const CsvTable t = read_csv(path);
  t.require_columns({"district_id", "iso_year", "iso_week", "age_group", "gender", "deaths", "population"});
  require(!t.rows.empty(), path + ": no observations");
  const auto& ages = age_group_labels();
  std::vector<IsoWeek> wk(t.rows.size());
  std::vector<MortalityCell> cells(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = t.where(r);
    auto d = graph.find(t.get(r, "district_id"));
    if (!d) throw ValidationError(where + ": unknown district " + t.get(r, "district_id"));
    auto a = std::find(ages.begin(), ages.end(), t.get(r, "age_group"));
    if (a == ages.end()) throw ValidationError(where + ": unknown age group " + t.get(r, "age_group"));
    MortalityCell& c = cells[r];
    c.district = *d;
    c.age = static_cast<Index>(a - ages.begin());
    try {
      wk[r] = make_iso_week(static_cast<int>(t.integer(r, "iso_year")), static_cast<int>(t.integer(r, "iso_week")));
      c.gender = parse_gender(t.get(r, "gender"));
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    c.deaths = t.integer(r, "deaths");
    c.population = t.integer(r, "population");
    if (c.deaths < 0 || c.population <= 0 || c.deaths > c.population)
      throw ValidationError(where + ": need 0 <= deaths <= population and population > 0");
  }
  ObservationData out;
  out.weeks = week_range(*std::min_element(wk.begin(), wk.end()), *std::max_element(wk.begin(), wk.end()));
  std::map<IsoWeek, Index> widx;
  for (std::size_t k = 0; k < out.weeks.size(); ++k) widx[out.weeks[k]] = static_cast<Index>(k);
  for (std::size_t r = 0; r < cells.size(); ++r) cells[r].week = widx.at(wk[r]);
  out.cells = std::move(cells);
  return out;
}

inline std::string observations_csv(const ObservationData& data, const DistrictGraph& graph,
                                    const std::string& header_comment = {}) {
  std::string s = header_comment + "district_id,iso_year,iso_week,age_group,gender,deaths,population\n";
  for (const auto& c : data.cells) {
    const auto& w = data.weeks.at(static_cast<std::size_t>(c.week));
    s += graph.id(c.district) + "," + std::to_string(w.year) + "," + std::to_string(w.week) + "," +
         age_group_labels().at(static_cast<std::size_t>(c.age)) + "," + gender_name(c.gender) + "," +
         std::to_string(c.deaths) + "," + std::to_string(c.population) + "\n";
  }
  return s;
}

enum class Block { Intercept = 0, Fixed, Spatial, Age, Time, SpaceAge, SpaceTime, AgeTime };
inline constexpr std::size_t kBlockCount = 8;

inline const char* block_name(Block b) {
  static constexpr std::array<const char*, kBlockCount> names{"intercept", "fixed",     "spatial",    "age",
                                                              "time",      "space_age", "space_time", "age_time"};
  return names[static_cast<std::size_t>(b)];
}

/// Which random-effect blocks enter the predictor.
struct ModelTerms {
  bool fixed_effects = true;
  bool spatial = true;
  bool age = true;
  bool time = true;
  bool space_age = true;
  bool space_time = true;
  bool age_time = true;
  // Use the lambda-mixed Leroux matrix as the spatial margin of the
  // interactions instead of the ICAR structure.
  bool leroux_interactions = false;

  static ModelTerms intercept_only() {
    ModelTerms t;
    t.fixed_effects = t.spatial = t.age = t.time = t.space_age = t.space_time = t.age_time = false;
    return t;
  }
  bool uses_lambda() const { return spatial || (leroux_interactions && (space_age || space_time)); }
};

/// Ordered blocks [alpha | gamma | phi | delta | psi | zeta1 | zeta2 | zeta3].
/// Interaction indices: zeta1 = i*J + j, zeta2 = i*T + t, zeta3 = j*T + t.
struct LatentLayout {
  Index districts = 0;
  Index ages = 0;
  Index weeks = 0;
  Index fixed = 0;
  std::array<Index, kBlockCount> offset{};
  std::array<Index, kBlockCount> size{};
  Index total = 0;

  static LatentLayout make(Index i, Index j, Index t, Index p, const ModelTerms& terms) {
    LatentLayout l;
    l.districts = i;
    l.ages = j;
    l.weeks = t;
    l.fixed = terms.fixed_effects ? p : 0;
    l.size = {1,
              l.fixed,
              terms.spatial ? i : 0,
              terms.age ? j : 0,
              terms.time ? t : 0,
              terms.space_age ? i * j : 0,
              terms.space_time ? i * t : 0,
              terms.age_time ? j * t : 0};
    Index off = 0;
    for (std::size_t b = 0; b < kBlockCount; ++b) {
      l.offset[b] = off;
      off += l.size[b];
    }
    l.total = off;
    return l;
  }

  Index offset_of(Block b) const { return offset[static_cast<std::size_t>(b)]; }
  Index size_of(Block b) const { return size[static_cast<std::size_t>(b)]; }
  bool has(Block b) const { return size_of(b) > 0; }
};

/// Precisions of the random-effect blocks and the Leroux mixing weight.
struct HyperParams {
  double tau_spatial = 1.0;
  double lambda_spatial = 0.5;
  double tau_age = 1.0;
  double tau_time = 1.0;
  double tau_space_age = 1.0;
  double tau_space_time = 1.0;
  double tau_age_time = 1.0;

  bool valid() const {
    auto pos = [](double v) { return std::isfinite(v) && v > 0.0; };
    return pos(tau_spatial) && pos(tau_age) && pos(tau_time) && pos(tau_space_age) && pos(tau_space_time) &&
           pos(tau_age_time) && std::isfinite(lambda_spatial) && lambda_spatial >= 0.0 && lambda_spatial <= 1.0;
  }
};

enum class Hyper { TauSpatial = 0, LambdaSpatial, TauAge, TauTime, TauSpaceAge, TauSpaceTime, TauAgeTime };

inline const char* hyper_name(Hyper h) {
  static constexpr std::array<const char*, 7> names{"tau_spatial",   "lambda_spatial", "tau_age",     "tau_time",
                                                    "tau_space_age", "tau_space_time", "tau_age_time"};
  return names[static_cast<std::size_t>(h)];
}

inline double& hyper_ref(HyperParams& p, Hyper h) {
  switch (h) {
    case Hyper::TauSpatial: return p.tau_spatial;
    case Hyper::LambdaSpatial: return p.lambda_spatial;
    case Hyper::TauAge: return p.tau_age;
    case Hyper::TauTime: return p.tau_time;
    case Hyper::TauSpaceAge: return p.tau_space_age;
    case Hyper::TauSpaceTime: return p.tau_space_time;
    case Hyper::TauAgeTime: return p.tau_age_time;
  }
  return p.tau_spatial;
}
inline double hyper_value(const HyperParams& p, Hyper h) { return hyper_ref(const_cast<HyperParams&>(p), h); }

/// Gamma(shape, rate) on each precision, Beta(a, b) on lambda.
struct HyperPriors {
  double gamma_shape = 1.0;
  double spatial_rate = 0.01;
  double default_rate = 0.00005;
  double lambda_a = 1.0;
  double lambda_b = 1.0;

  double rate_for(Hyper h) const { return h == Hyper::TauSpatial ? spatial_rate : default_rate; }
};

enum class HyperScale {
  Natural,   // density of (tau, lambda)
  Internal,  // density of (log tau, logit lambda)
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double inv_logit(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Active hyperparameters of a model and the internal (log tau, logit lambda)
/// coordinates used for optimization.
class HyperSpace {
 public:
  HyperSpace() = default;
  explicit HyperSpace(const ModelTerms& t) {
    if (t.spatial) active_.push_back(Hyper::TauSpatial);
    if (t.uses_lambda()) active_.push_back(Hyper::LambdaSpatial);
    if (t.age) active_.push_back(Hyper::TauAge);
    if (t.time) active_.push_back(Hyper::TauTime);
    if (t.space_age) active_.push_back(Hyper::TauSpaceAge);
    if (t.space_time) active_.push_back(Hyper::TauSpaceTime);
    if (t.age_time) active_.push_back(Hyper::TauAgeTime);
  }

  Index dim() const { return static_cast<Index>(active_.size()); }
  const std::vector<Hyper>& active() const { return active_; }

  Vector to_internal(const HyperParams& p) const {
    Vector v(dim());
    for (Index k = 0; k < dim(); ++k) {
      const Hyper h = active_[static_cast<std::size_t>(k)];
      v[k] = h == Hyper::LambdaSpatial ? logit(p.lambda_spatial) : std::log(hyper_value(p, h));
    }
    return v;
  }

  HyperParams from_internal(const Vector& v, HyperParams base = {}) const {
    require(v.size() == dim(), "internal hyperparameter vector has wrong size");
    for (Index k = 0; k < dim(); ++k) {
      const Hyper h = active_[static_cast<std::size_t>(k)];
      hyper_ref(base, h) = h == Hyper::LambdaSpatial ? inv_logit(v[k]) : std::exp(v[k]);
    }
    return base;
  }

  /// Sum of hyperprior log-densities over the active parameters; -inf when
  /// theta is out of range.
  double log_prior(const HyperParams& p, const HyperPriors& pr, HyperScale scale) const {
    if (!p.valid()) return -std::numeric_limits<double>::infinity();
    double s = 0.0;
    for (Hyper h : active_) {
      if (h == Hyper::LambdaSpatial) {
        const double l = p.lambda_spatial;
        if (l <= 0.0 || l >= 1.0) return -std::numeric_limits<double>::infinity();
        s += (pr.lambda_a - 1.0) * std::log(l) + (pr.lambda_b - 1.0) * std::log1p(-l) -
             (std::lgamma(pr.lambda_a) + std::lgamma(pr.lambda_b) - std::lgamma(pr.lambda_a + pr.lambda_b));
        if (scale == HyperScale::Internal) s += std::log(l) + std::log1p(-l);
      } else {
        const double tau = hyper_value(p, h);
        const double a = pr.gamma_shape, b = pr.rate_for(h);
        s += a * std::log(b) - std::lgamma(a) - b * tau;
        s += scale == HyperScale::Internal ? a * std::log(tau) : (a - 1.0) * std::log(tau);
      }
    }
    return s;
  }

 private:
  std::vector<Hyper> active_;
};

/// Response and offset for one row of the linear predictor.
struct Observation {
  Index district = 0;
  Index age = 0;
  Index week = 0;
  double response = 0.0;
  double offset = 0.0;
};

struct ModelOptions {
  double fixed_precision = 0.001;
  double intercept_precision = 0.0;  // 0 = flat
  HyperPriors priors;
  InteractionOptions interaction;
};

/// Joint latent Gaussian model for one gender.
class SpatioTemporalModel {
 public:
  /// `design` has one row per (district, week) at index i * weeks + t.
  SpatioTemporalModel(const DistrictGraph& graph, Index ages, Index weeks, Matrix design,
                      std::vector<std::string> covariates, std::vector<Observation> obs, ModelTerms terms = {},
                      Likelihood likelihood = Likelihood::poisson(), ModelOptions opts = {})
      : terms_(terms),
        likelihood_(likelihood),
        opts_(opts),
        design_(std::move(design)),
        covariates_(std::move(covariates)),
        obs_(std::move(obs)),
        hyper_(terms) {
    const Index I = graph.size();
    require(ages >= 2 && weeks >= 2, "model needs at least two age groups and two weeks");
    require(!obs_.empty(), "model has no observations");
    if (!terms_.fixed_effects) {
      design_.resize(I * weeks, 0);
      covariates_.clear();
    }
    require(design_.rows() == I * weeks, "design must have one row per (district, week)");
    require(static_cast<Index>(covariates_.size()) == design_.cols(), "covariate names do not match design columns");
    layout_ = LatentLayout::make(I, ages, weeks, design_.cols(), terms_);

    spatial_ = build_spatial_structure(graph);
    rw_age_ = build_rw1(ages);
    rw_time_ = build_rw1(weeks);
    build_incidence();
    build_blocks();
  }

  const LatentLayout& layout() const { return layout_; }
  const ModelTerms& terms() const { return terms_; }
  const Likelihood& likelihood() const { return likelihood_; }
  const ModelOptions& options() const { return opts_; }
  const HyperSpace& hyper_space() const { return hyper_; }
  const SparseRowMatrix& incidence() const { return incidence_; }
  const SparseMatrix& incidence_t() const { return incidence_t_; }
  const Vector& offset() const { return offset_; }
  const Vector& response() const { return response_; }
  const ConstraintSet& constraints() const { return constraints_; }
  const std::vector<std::string>& covariate_names() const { return covariates_; }
  const std::vector<Observation>& observations() const { return obs_; }
  const Matrix& design() const { return design_; }
  const PrecisionStructure& spatial_structure() const { return spatial_; }
  Index dim() const { return layout_.total; }
  Index observation_count() const { return static_cast<Index>(obs_.size()); }

  /// Constraint rows belonging to one block, in block-local coordinates.
  const ConstraintSet& block_constraints(Block b) const { return block_[static_cast<std::size_t>(b)].constraints; }

  Vector linear_predictor(const Vector& x) const { return offset_ + incidence_ * x; }

  double log_likelihood(const Vector& eta) const {
    double s = 0.0;
    for (Index o = 0; o < eta.size(); ++o) s += likelihood_.log_density(response_[o], eta[o]);
    return s;
  }
  Vector likelihood_gradient(const Vector& eta) const {
    Vector g(eta.size());
    for (Index o = 0; o < eta.size(); ++o) g[o] = likelihood_.gradient(response_[o], eta[o]);
    return g;
  }
  Vector likelihood_curvature(const Vector& eta) const {
    Vector w(eta.size());
    for (Index o = 0; o < eta.size(); ++o) w[o] = likelihood_.curvature(response_[o], eta[o]);
    return w;
  }

  /// Block-diagonal prior precision at theta.
  SparseMatrix prior_precision(const HyperParams& theta) const {
    require(theta.valid(), "invalid hyperparameters");
    std::vector<Triplet> t;
    for (std::size_t b = 0; b < kBlockCount; ++b) {
      const Index n = layout_.size[b];
      if (n == 0) continue;
      const Index off = layout_.offset[b];
      const SparseMatrix q = block_precision(static_cast<Block>(b), theta);
      for (Index k = 0; k < q.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(q, k); it; ++it)
          if (it.value() != 0.0) t.emplace_back(off + it.row(), off + it.col(), it.value());
    }
    SparseMatrix q(dim(), dim());
    q.setFromTriplets(t.begin(), t.end());
    return q;
  }

  /// Precision of one block (block-local indices).
  SparseMatrix block_precision(Block b, const HyperParams& theta) const {
    const Index n = layout_.size_of(b);
    switch (b) {
      case Block::Intercept: return opts_.intercept_precision * identity(n);
      case Block::Fixed: return opts_.fixed_precision * identity(n);
      case Block::Spatial: return theta.tau_spatial * leroux_matrix(theta.lambda_spatial);
      case Block::Age: return theta.tau_age * block_[3].structure;
      case Block::Time: return theta.tau_time * block_[4].structure;
      case Block::SpaceAge: return theta.tau_space_age * interaction_matrix(Block::SpaceAge, theta.lambda_spatial);
      case Block::SpaceTime:
        return theta.tau_space_time * interaction_matrix(Block::SpaceTime, theta.lambda_spatial);
      case Block::AgeTime: return theta.tau_age_time * block_[7].structure;
    }
    return SparseMatrix(n, n);
  }

  /// Log prior density of x given theta, each block normalized on its
  /// constrained subspace. A flat intercept contributes zero.
  double log_prior_latent(const Vector& x, const HyperParams& theta) const {
    require(x.size() == dim(), "latent vector has wrong dimension");
    if (!theta.valid()) return -std::numeric_limits<double>::infinity();
    double s = 0.0;
    const double log2pi = std::log(2.0 * std::numbers::pi);
    for (std::size_t b = 0; b < kBlockCount; ++b) {
      const Index n = layout_.size[b];
      if (n == 0) continue;
      const auto blk = static_cast<Block>(b);
      if (blk == Block::Intercept && opts_.intercept_precision == 0.0) continue;
      const Vector xb = x.segment(layout_.offset[b], n);
      const SparseMatrix q = block_precision(blk, theta);
      const Index m = n - block_[b].constraints.count();
      s += -0.5 * static_cast<double>(m) * log2pi + 0.5 * block_log_det(blk, theta) - 0.5 * xb.dot(q * xb);
    }
    return s;
  }

  /// log det of the block precision on its constrained subspace.
  double block_log_det(Block b, const HyperParams& theta) const {
    const auto& blk = block_[static_cast<std::size_t>(b)];
    const Index m = layout_.size_of(b) - blk.constraints.count();
    switch (b) {
      case Block::Intercept: return m * std::log(opts_.intercept_precision);
      case Block::Fixed: return m * std::log(opts_.fixed_precision);
      case Block::Spatial: return m * std::log(theta.tau_spatial) + lambda_log_det(leroux_matrix(theta.lambda_spatial), blk.constraints);
      case Block::Age: return m * std::log(theta.tau_age) + blk.unit_log_det;
      case Block::Time: return m * std::log(theta.tau_time) + blk.unit_log_det;
      case Block::SpaceAge:
      case Block::SpaceTime: {
        const double tau = b == Block::SpaceAge ? theta.tau_space_age : theta.tau_space_time;
        const double ld = terms_.leroux_interactions ? lambda_log_det(interaction_matrix(b, theta.lambda_spatial), blk.constraints)
                                                     : blk.unit_log_det;
        return m * std::log(tau) + ld;
      }
      case Block::AgeTime: return m * std::log(theta.tau_age_time) + blk.unit_log_det;
    }
    return 0.0;
  }

  double log_prior_hyper(const HyperParams& theta, HyperScale scale = HyperScale::Internal) const {
    return hyper_.log_prior(theta, opts_.priors, scale);
  }

  /// Human-readable names of latent coordinates.
  std::string latent_name(Index k) const {
    for (std::size_t b = 0; b < kBlockCount; ++b) {
      if (k >= layout_.offset[b] && k < layout_.offset[b] + layout_.size[b]) {
        const Index local = k - layout_.offset[b];
        if (static_cast<Block>(b) == Block::Fixed) return covariates_[static_cast<std::size_t>(local)];
        return std::string(block_name(static_cast<Block>(b))) + "[" + std::to_string(local) + "]";
      }
    }
    return "?";
  }

 private:
  struct BlockData {
    SparseMatrix structure;  // tau = 1 precision, when lambda-free
    ConstraintSet constraints;
    double unit_log_det = 0.0;
  };

  SparseMatrix leroux_matrix(double lambda) const {
    return lambda * spatial_.matrix + (1.0 - lambda) * identity(spatial_.dim());
  }

  SparseMatrix interaction_matrix(Block b, double lambda) const {
    const auto& blk = block_[static_cast<std::size_t>(b)];
    if (!terms_.leroux_interactions) return blk.structure;
    const SparseMatrix& right = b == Block::SpaceAge ? rw_age_.matrix : rw_time_.matrix;
    return kronecker(leroux_matrix(lambda), right);
  }

  static double lambda_log_det(const SparseMatrix& q, const ConstraintSet& a) {
    return ConstrainedGaussian(q, a).log_det();
  }

  void build_incidence() {
    const Index I = layout_.districts, J = layout_.ages, T = layout_.weeks;
    const Index n = static_cast<Index>(obs_.size());
    offset_.resize(n);
    response_.resize(n);
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(n * (1 + layout_.fixed + 6)));
    for (Index o = 0; o < n; ++o) {
      const auto& ob = obs_[static_cast<std::size_t>(o)];
      require(ob.district >= 0 && ob.district < I && ob.age >= 0 && ob.age < J && ob.week >= 0 && ob.week < T,
              "observation index out of range");
      offset_[o] = ob.offset;
      response_[o] = ob.response;
      t.emplace_back(o, layout_.offset_of(Block::Intercept), 1.0);
      for (Index m = 0; m < layout_.fixed; ++m)
        t.emplace_back(o, layout_.offset_of(Block::Fixed) + m, design_(ob.district * T + ob.week, m));
      if (layout_.has(Block::Spatial)) t.emplace_back(o, layout_.offset_of(Block::Spatial) + ob.district, 1.0);
      if (layout_.has(Block::Age)) t.emplace_back(o, layout_.offset_of(Block::Age) + ob.age, 1.0);
      if (layout_.has(Block::Time)) t.emplace_back(o, layout_.offset_of(Block::Time) + ob.week, 1.0);
      if (layout_.has(Block::SpaceAge))
        t.emplace_back(o, layout_.offset_of(Block::SpaceAge) + ob.district * J + ob.age, 1.0);
      if (layout_.has(Block::SpaceTime))
        t.emplace_back(o, layout_.offset_of(Block::SpaceTime) + ob.district * T + ob.week, 1.0);
      if (layout_.has(Block::AgeTime))
        t.emplace_back(o, layout_.offset_of(Block::AgeTime) + ob.age * T + ob.week, 1.0);
    }
    incidence_.resize(n, layout_.total);
    incidence_.setFromTriplets(t.begin(), t.end());
    incidence_t_ = SparseMatrix(incidence_.transpose());
  }

  void add_interaction(Block b, const PrecisionStructure& left, const PrecisionStructure& right) {
    auto& blk = block_[static_cast<std::size_t>(b)];
    PrecisionStructure l = left;
    if (terms_.leroux_interactions && &left == &spatial_) {
      l.rank_deficiency = 0;
      l.null_basis = Matrix(left.dim(), 0);
    }
    InteractionStructure is = build_interaction(l, right, opts_.interaction);
    blk.constraints = std::move(is.constraints);
    append_if_independent(blk.constraints, Vector::Ones(blk.constraints.dim()));
    blk.structure = std::move(is.precision.matrix);
    if (!(terms_.leroux_interactions && &left == &spatial_))
      blk.unit_log_det = ConstrainedGaussian(blk.structure, blk.constraints).log_det();
  }

  void build_blocks() {
    for (std::size_t b = 0; b < kBlockCount; ++b) block_[b].constraints = ConstraintSet(layout_.size[b]);
    if (layout_.has(Block::Spatial)) block_[2].constraints = ConstraintSet::sum_to_zero(layout_.districts);
    if (layout_.has(Block::Age)) {
      block_[3].structure = rw_age_.matrix;
      block_[3].constraints = ConstraintSet::sum_to_zero(layout_.ages);
      block_[3].unit_log_det = ConstrainedGaussian(block_[3].structure, block_[3].constraints).log_det();
    }
    if (layout_.has(Block::Time)) {
      block_[4].structure = rw_time_.matrix;
      block_[4].constraints = ConstraintSet::sum_to_zero(layout_.weeks);
      block_[4].unit_log_det = ConstrainedGaussian(block_[4].structure, block_[4].constraints).log_det();
    }
    if (layout_.has(Block::SpaceAge)) add_interaction(Block::SpaceAge, spatial_, rw_age_);
    if (layout_.has(Block::SpaceTime)) add_interaction(Block::SpaceTime, spatial_, rw_time_);
    if (layout_.has(Block::AgeTime)) add_interaction(Block::AgeTime, rw_age_, rw_time_);

    std::vector<std::pair<Index, const ConstraintSet*>> parts;
    for (std::size_t b = 0; b < kBlockCount; ++b)
      if (layout_.size[b] > 0 && !block_[b].constraints.empty()) parts.emplace_back(layout_.offset[b], &block_[b].constraints);
    constraints_ = stack_constraints(parts, layout_.total);
  }

  ModelTerms terms_;
  Likelihood likelihood_;
  ModelOptions opts_;
  Matrix design_;
  std::vector<std::string> covariates_;
  std::vector<Observation> obs_;
  HyperSpace hyper_;
  LatentLayout layout_;
  PrecisionStructure spatial_;
  PrecisionStructure rw_age_;
  PrecisionStructure rw_time_;
  std::array<BlockData, kBlockCount> block_;
  SparseRowMatrix incidence_;
  SparseMatrix incidence_t_;
  Vector offset_;
  Vector response_;
  ConstraintSet constraints_;
};

/// Dense (I*T x P) design for the model from a keyed design table. Rows
/// needed by `cells` must exist.
inline Matrix design_matrix(const DistrictGraph& graph, const std::vector<IsoWeek>& weeks, const DesignTable& design,
                            const std::vector<MortalityCell>& cells) {
  const Index I = graph.size(), T = static_cast<Index>(weeks.size());
  const Index P = static_cast<Index>(design.columns.size());
  Matrix x = Matrix::Zero(I * T, P);
  std::vector<bool> filled(static_cast<std::size_t>(I * T), false);
  design.reindex();
  for (const auto& c : cells) {
    const Index r = c.district * T + c.week;
    if (filled[static_cast<std::size_t>(r)]) continue;
    const auto* row = design.find(graph.id(c.district), weeks.at(static_cast<std::size_t>(c.week)));
    if (row == nullptr)
      throw ValidationError("design matrix has no row for district " + graph.id(c.district) + " week " +
                            weeks.at(static_cast<std::size_t>(c.week)).str());
    for (Index m = 0; m < P; ++m) x(r, m) = row->values[static_cast<std::size_t>(m)];
    filled[static_cast<std::size_t>(r)] = true;
  }
  return x;
}

/// Poisson mortality model for one gender with log-population offsets.
inline SpatioTemporalModel build_mortality_model(const DistrictGraph& graph, const ObservationData& data,
                                                 const DesignTable& design, Gender gender, ModelTerms terms = {},
                                                 ModelOptions opts = {}) {
  std::vector<MortalityCell> cells;
  for (const auto& c : data.cells)
    if (c.gender == gender) cells.push_back(c);
  if (cells.empty()) throw ValidationError(std::string("no observations for gender ") + gender_name(gender));
  Index ages = 0;
  for (const auto& c : cells) ages = std::max(ages, c.age + 1);
  ages = std::max<Index>(ages, static_cast<Index>(age_group_labels().size()));
  std::vector<Observation> obs;
  obs.reserve(cells.size());
  for (const auto& c : cells)
    obs.push_back({c.district, c.age, c.week, static_cast<double>(c.deaths), std::log(static_cast<double>(c.population))});
  Matrix x = terms.fixed_effects ? design_matrix(graph, data.weeks, design, cells)
                                 : Matrix(graph.size() * static_cast<Index>(data.weeks.size()), 0);
  std::vector<std::string> names = terms.fixed_effects ? design.columns : std::vector<std::string>{};
  return SpatioTemporalModel(graph, ages, static_cast<Index>(data.weeks.size()), std::move(x), std::move(names),
                             std::move(obs), terms, Likelihood::poisson(), opts);
}

}  // namespace stmort
