#pragma once

// Cholesky factorization of a symmetric positive definite matrix held in
// sparse form. Small systems are factorized densely, which beats a
// simplicial sparse factor once constraint augmentation has filled them in.

#include "stmort/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>

#include <cmath>

namespace stmort {

class CholeskyFactor {
 public:
  static constexpr Index kDefaultDenseLimit = 2500;

  explicit CholeskyFactor(Index dense_limit = kDefaultDenseLimit) : dense_limit_(dense_limit) {}

  /// Returns false unless the matrix is numerically positive definite with
  /// a diagonal pivot ratio above 1e-7.
  bool compute(const SparseMatrix& m) {
    require(m.rows() == m.cols(), "Cholesky needs a square matrix");
    n_ = m.rows();
    dense_ = n_ <= dense_limit_;
    Vector d;
    if (dense_) {
      dllt_.compute(Matrix(m));
      if (dllt_.info() != Eigen::Success) return false;
      d = dllt_.matrixLLT().diagonal();
    } else {
      sllt_.compute(m);
      if (sllt_.info() != Eigen::Success) return false;
      d = sllt_.matrixL().nestedExpression().diagonal();
    }
    if (n_ == 0) {
      log_det_ = 0.0;
      return true;
    }
    if (!d.allFinite() || !(d.array() > 0.0).all()) return false;
    log_det_ = 2.0 * d.array().log().sum();
    return d.minCoeff() / d.maxCoeff() > 1e-7;
  }

  Index dim() const { return n_; }
  bool dense() const { return dense_; }
  double log_det() const { return log_det_; }

  Matrix solve(const Matrix& b) const { return dense_ ? Matrix(dllt_.solve(b)) : Matrix(sllt_.solve(b)); }
  Vector solve(const Vector& b) const { return dense_ ? Vector(dllt_.solve(b)) : Vector(sllt_.solve(b)); }

  /// Maps z ~ N(0, I) to a draw with covariance M^-1.
  Vector sample_transform(const Vector& z) const {
    if (dense_) return dllt_.matrixU().solve(z);
    const Vector v = sllt_.matrixU().solve(z);
    return sllt_.permutationPinv() * v;
  }

  /// diag(M^-1).
  Vector inverse_diagonal() const {
    Vector out(n_);
    if (dense_) {
      const Matrix linv = dllt_.matrixL().solve(Matrix::Identity(n_, n_));
      return linv.colwise().squaredNorm().transpose();
    }
    const Index chunk = 256;
    for (Index c0 = 0; c0 < n_; c0 += chunk) {
      const Index w = std::min(chunk, n_ - c0);
      Matrix rhs = Matrix::Zero(n_, w);
      for (Index k = 0; k < w; ++k) rhs(c0 + k, k) = 1.0;
      const Matrix sol = sllt_.solve(rhs);
      for (Index k = 0; k < w; ++k) out[c0 + k] = sol(c0 + k, k);
    }
    return out;
  }

 private:
  Index dense_limit_;
  Index n_ = 0;
  bool dense_ = true;
  double log_det_ = 0.0;
  Eigen::LLT<Matrix> dllt_;
  Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> sllt_;
};

}  // namespace stmort
