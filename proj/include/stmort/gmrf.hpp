#pragma once

// Structured GMRF priors (RW1, Kronecker interactions) and Gaussian
// computations under hard linear constraints.

#include "stmort/precision.hpp"
#include "stmort/cholesky.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace stmort {

/// First-order random walk structure: tridiagonal with 1,2,...,2,1 on the
/// diagonal and -1 off it, so that x'Rx = sum of squared increments.
inline PrecisionStructure build_rw1(Index n) {
  require(n >= 2, "RW1 needs at least two levels");
  std::vector<Triplet> t;
  for (Index i = 0; i < n; ++i) {
    const double d = (i == 0 || i == n - 1) ? 1.0 : 2.0;
    t.emplace_back(i, i, d);
    if (i + 1 < n) {
      t.emplace_back(i, i + 1, -1.0);
      t.emplace_back(i + 1, i, -1.0);
    }
  }
  PrecisionStructure s;
  s.matrix.resize(n, n);
  s.matrix.setFromTriplets(t.begin(), t.end());
  s.rank_deficiency = 1;
  s.null_basis = Vector::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
  return s;
}

/// Number of identifiability constraints of a Type-IV interaction between
/// margins of sizes I and J with the given rank deficiencies.
constexpr Index interaction_constraint_count(Index left_dim, Index left_deficiency, Index right_dim,
                                             Index right_deficiency) {
  return left_dim * right_dim - (left_dim - left_deficiency) * (right_dim - right_deficiency);
}

struct InteractionStructure {
  PrecisionStructure precision;  // left (x) right; null_basis filled below the dense cap
  ConstraintSet constraints;     // independent rows spanning null(left (x) right)
  Index left_dim = 0;
  Index right_dim = 0;
};

struct InteractionOptions {
  Index max_dim = 200000;             // refuse larger Kronecker products
  Index dense_null_basis_cap = 4000000;  // dim * deficiency limit for the orthonormal basis
};

/// Kronecker interaction of two margin structures. Index of (i, j) is
/// i * right_dim + j.
///
/// null(L (x) R) is spanned by {n_a (x) e_j} together with {e_i (x) m_b},
/// where n_a, m_b are null vectors of L and R. One e_i per left null vector
/// is dropped (pivot rows of the left null basis) which removes exactly the
/// n_a (x) m_b duplicates, leaving I*J - rank(L)*rank(R) sparse independent rows.
inline InteractionStructure build_interaction(const PrecisionStructure& left, const PrecisionStructure& right,
                                              const InteractionOptions& opts = {}) {
  const Index ni = left.dim();
  const Index nj = right.dim();
  require(ni > 0 && nj > 0, "interaction margins must be non-empty");
  if (ni * nj > opts.max_dim)
    throw ValidationError("interaction dimension " + std::to_string(ni * nj) + " exceeds cap " +
                          std::to_string(opts.max_dim) + "; use desk-scale dimensions");
  require(left.null_basis.rows() == ni && left.null_basis.cols() == left.rank_deficiency,
          "left margin null basis has wrong shape");
  require(right.null_basis.rows() == nj && right.null_basis.cols() == right.rank_deficiency,
          "right margin null basis has wrong shape");

  InteractionStructure out;
  out.left_dim = ni;
  out.right_dim = nj;
  out.precision.matrix = kronecker(left.matrix, right.matrix);
  const Index dl = left.rank_deficiency;
  const Index dr = right.rank_deficiency;
  out.precision.rank_deficiency = interaction_constraint_count(ni, dl, nj, dr);

  std::vector<bool> pivot(static_cast<std::size_t>(ni), false);
  if (dl > 0 && dr > 0) {
    Eigen::ColPivHouseholderQR<Matrix> qr(left.null_basis.transpose());
    for (Index a = 0; a < dl; ++a) pivot[static_cast<std::size_t>(qr.colsPermutation().indices()[a])] = true;
  }

  std::vector<Triplet> t;
  Index row = 0;
  for (Index a = 0; a < dl; ++a) {
    for (Index j = 0; j < nj; ++j, ++row) {
      for (Index i = 0; i < ni; ++i) {
        const double v = left.null_basis(i, a);
        if (v != 0.0) t.emplace_back(row, i * nj + j, v);
      }
    }
  }
  for (Index i = 0; i < ni; ++i) {
    if (pivot[static_cast<std::size_t>(i)]) continue;
    for (Index b = 0; b < dr; ++b, ++row) {
      for (Index j = 0; j < nj; ++j) {
        const double v = right.null_basis(j, b);
        if (v != 0.0) t.emplace_back(row, i * nj + j, v);
      }
    }
  }
  SparseRowMatrix a(row, ni * nj);
  a.setFromTriplets(t.begin(), t.end());
  out.constraints = ConstraintSet(std::move(a));
  if (out.constraints.count() != out.precision.rank_deficiency)
    throw NumericalError("interaction constraint construction produced the wrong row count");

  const Index def = out.precision.rank_deficiency;
  if (def > 0 && ni * nj * def <= opts.dense_null_basis_cap) {
    Eigen::HouseholderQR<Matrix> qr(out.constraints.dense().transpose());
    out.precision.null_basis = qr.householderQ() * Matrix::Identity(ni * nj, def);
  } else {
    out.precision.null_basis = Matrix(ni * nj, 0);
  }
  return out;
}

/// Gaussian with precision Q restricted to {x : A x = 0}.
///
/// Q may be singular as long as it is positive definite on null(A). The
/// factorized matrix is Q + s A'A, which agrees with Q on null(A), so solves,
/// samples and the restricted log-determinant are exact. A diagonal jitter of
/// 1e-8 * max-diagonal is only used if that factorization still fails.
class ConstrainedGaussian {
 public:
  ConstrainedGaussian(const SparseMatrix& q, ConstraintSet constraints) : a_(std::move(constraints)) {
    require(q.rows() == q.cols(), "precision must be square");
    if (a_.dim() == 0 && a_.count() == 0) a_ = ConstraintSet(q.rows());
    require(a_.dim() == q.rows(), "constraint dimension does not match precision");
    n_ = q.rows();

    SparseMatrix qt = q;
    if (!a_.empty()) {
      const SparseMatrix ata = SparseMatrix(a_.matrix.transpose()) * SparseMatrix(a_.matrix);
      const double qmax = q.diagonal().cwiseAbs().maxCoeff();
      const double amax = ata.diagonal().maxCoeff();
      augment_scale_ = (qmax > 0.0 ? qmax : 1.0) / amax;
      qt = q + augment_scale_ * ata;
    }
    if (!factorize(qt)) {
      const double jitter = 1e-8 * std::max(qt.diagonal().cwiseAbs().maxCoeff(), 1e-300);
      qt = qt + jitter * identity(n_);
      jittered_ = true;
      if (!factorize(qt)) throw NumericalError("sparse Cholesky factorization failed after jitter");
    }

    log_det_ = llt_.log_det();
    if (!a_.empty()) {
      const Matrix at = Matrix(a_.matrix.transpose());
      u_ = llt_.solve(at);
      const Matrix s = a_.matrix * u_;
      s_llt_.compute(0.5 * (s + s.transpose()));
      if (s_llt_.info() != Eigen::Success || !positive_diagonal(s_llt_.matrixLLT()))
        throw NumericalError("constraint system A Q^-1 A' is singular (dependent constraints)");
      Eigen::LLT<Matrix> gram(Matrix(a_.matrix * a_.matrix.transpose()));
      if (gram.info() != Eigen::Success) throw NumericalError("constraint rows are linearly dependent");
      log_det_ += 2.0 * s_llt_.matrixLLT().diagonal().array().log().sum();
      log_det_ -= 2.0 * gram.matrixLLT().diagonal().array().log().sum();
    }
  }

  Index dim() const { return n_; }
  Index free_dim() const { return n_ - a_.count(); }
  const ConstraintSet& constraints() const { return a_; }
  bool jittered() const { return jittered_; }

  /// log det of Q restricted to null(A), w.r.t. an orthonormal basis.
  double log_det() const { return log_det_; }

  /// argmin 0.5 x'Qx - b'x subject to A x = 0.
  Vector solve(const Vector& b) const {
    require(b.size() == n_, "right-hand side has wrong dimension");
    return correct(llt_.solve(b));
  }

  /// Kriging correction x - Q^-1 A' (A Q^-1 A')^-1 A x.
  Vector correct(const Vector& x) const {
    if (a_.empty()) return x;
    return x - u_ * s_llt_.solve(a_.matrix * x);
  }

  /// `count` draws (columns) from N(mean, Q^-1 | A x = 0). Draw d uses its
  /// own generator seeded from (seed, d), so results do not depend on the
  /// order draws are produced in.
  Matrix sample(Index count, std::uint64_t seed, const Vector* mean = nullptr) const {
    require(count >= 0, "sample count must be non-negative");
    Matrix out(n_, count);
    for (Index d = 0; d < count; ++d) out.col(d) = draw(seed, static_cast<std::uint64_t>(d));
    if (mean != nullptr) out.colwise() += *mean;
    return out;
  }

  Vector draw(std::uint64_t seed, std::uint64_t counter) const {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal;
    Vector z(n_);
    for (Index i = 0; i < n_; ++i) z[i] = normal(rng);
    return correct(llt_.sample_transform(z));
  }

  /// Exact marginal variances diag(Q^-1 - U S^-1 U').
  Vector marginal_variances() const {
    Vector var = llt_.inverse_diagonal();
    if (!a_.empty()) {
      const Matrix w = s_llt_.matrixL().solve(u_.transpose());
      var -= w.colwise().squaredNorm().transpose();
    }
    return var;
  }

 private:
  bool factorize(const SparseMatrix& m) { return llt_.compute(m); }

  static bool positive_diagonal(const Matrix& l) {
    return (l.diagonal().array() > 0.0).all() && l.diagonal().allFinite();
  }

  Index n_ = 0;
  ConstraintSet a_;
  CholeskyFactor llt_;
  Matrix u_;
  Eigen::LLT<Matrix> s_llt_;
  double log_det_ = 0.0;
  double augment_scale_ = 0.0;
  bool jittered_ = false;
};

inline Vector constrained_solve(const SparseMatrix& q, const Vector& b, const ConstraintSet& a) {
  return ConstrainedGaussian(q, a).solve(b);
}

/// Zero-mean constrained draws, one per column.
inline Matrix constrained_sample(const SparseMatrix& q, const ConstraintSet& a, Index count, std::uint64_t seed) {
  return ConstrainedGaussian(q, a).sample(count, seed);
}

}  // namespace stmort
