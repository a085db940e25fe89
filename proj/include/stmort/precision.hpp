#pragma once

// Sparse precision structures, linear constraint sets, Kronecker products.

#include "stmort/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

namespace stmort {

/// Symmetric non-negative-definite matrix with a known null space.
/// Both triangles are stored.
struct PrecisionStructure {
  SparseMatrix matrix;
  Index rank_deficiency = 0;
  Matrix null_basis;  // dim x rank_deficiency, orthonormal columns

  Index dim() const { return matrix.rows(); }
  Index rank() const { return dim() - rank_deficiency; }
};

/// Linear constraints A x = 0. Rows are kept linearly independent.
struct ConstraintSet {
  SparseRowMatrix matrix;

  ConstraintSet() = default;
  explicit ConstraintSet(Index dim) : matrix(0, dim) {}
  explicit ConstraintSet(SparseRowMatrix a) : matrix(std::move(a)) {}

  Index count() const { return matrix.rows(); }
  Index dim() const { return matrix.cols(); }
  bool empty() const { return matrix.rows() == 0; }
  Matrix dense() const { return Matrix(matrix); }

  Vector residual(const Vector& x) const { return matrix * x; }
  double max_violation(const Vector& x) const {
    return empty() ? 0.0 : residual(x).cwiseAbs().maxCoeff();
  }

  static ConstraintSet sum_to_zero(Index dim) {
    SparseRowMatrix a(1, dim);
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(dim));
    for (Index i = 0; i < dim; ++i) t.emplace_back(0, i, 1.0);
    a.setFromTriplets(t.begin(), t.end());
    return ConstraintSet(std::move(a));
  }

  static ConstraintSet from_dense(const Matrix& a) {
    return ConstraintSet(SparseRowMatrix(a.sparseView()));
  }
};

inline SparseMatrix identity(Index n) {
  SparseMatrix id(n, n);
  id.setIdentity();
  return id;
}

inline SparseMatrix kronecker(const SparseMatrix& a, const SparseMatrix& b) {
  SparseMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(a.nonZeros() * b.nonZeros()));
  for (Index ka = 0; ka < a.outerSize(); ++ka) {
    for (SparseMatrix::InnerIterator ia(a, ka); ia; ++ia) {
      for (Index kb = 0; kb < b.outerSize(); ++kb) {
        for (SparseMatrix::InnerIterator ib(b, kb); ib; ++ib) {
          t.emplace_back(ia.row() * b.rows() + ib.row(), ia.col() * b.cols() + ib.col(),
                         ia.value() * ib.value());
        }
      }
    }
  }
  out.setFromTriplets(t.begin(), t.end());
  return out;
}

inline Matrix kronecker(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Numerical rank of a symmetric matrix: eigenvalues below rel_tol times the
/// largest magnitude count as zero.
inline Index numerical_rank(const Matrix& sym, double rel_tol = 1e-9) {
  if (sym.size() == 0) return 0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  const Vector ev = es.eigenvalues().cwiseAbs();
  const double cutoff = rel_tol * ev.maxCoeff();
  return static_cast<Index>((ev.array() > cutoff).count());
}

/// Numerical rank of a general (rectangular) matrix via SVD.
inline Index matrix_rank(const Matrix& m, double rel_tol = 1e-9) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector sv = svd.singularValues();
  const double cutoff = rel_tol * sv.maxCoeff();
  return static_cast<Index>((sv.array() > cutoff).count());
}

/// Places each block's constraint rows at its column offset in a joint latent
/// vector of dimension `dim`.
inline ConstraintSet stack_constraints(const std::vector<std::pair<Index, const ConstraintSet*>>& blocks,
                                      Index dim) {
  Index rows = 0;
  for (const auto& [offset, c] : blocks) rows += c->count();
  std::vector<Triplet> t;
  Index row0 = 0;
  for (const auto& [offset, c] : blocks) {
    require(offset + c->dim() <= dim, "constraint block exceeds latent dimension");
    for (Index r = 0; r < c->matrix.outerSize(); ++r)
      for (SparseRowMatrix::InnerIterator it(c->matrix, r); it; ++it)
        t.emplace_back(row0 + it.row(), offset + it.col(), it.value());
    row0 += c->count();
  }
  SparseRowMatrix a(rows, dim);
  a.setFromTriplets(t.begin(), t.end());
  return ConstraintSet(std::move(a));
}

/// True when `v` lies in the row space of `a` (relative residual below tol).
inline bool in_row_span(const SparseRowMatrix& a, const Vector& v, double tol = 1e-9) {
  if (a.rows() == 0) return v.norm() == 0.0;
  const Matrix gram = Matrix(a * a.transpose());
  const Vector rhs = a * v;
  const Vector coef = gram.ldlt().solve(rhs);
  const Vector r = v - a.transpose() * coef;
  return r.norm() <= tol * std::max(1.0, v.norm());
}

/// Appends `row` to the constraint set unless it is already implied.
inline void append_if_independent(ConstraintSet& c, const Vector& row, double tol = 1e-9) {
  require(row.size() == c.dim(), "constraint row has wrong dimension");
  if (in_row_span(c.matrix, row, tol)) return;
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(c.matrix.nonZeros() + row.size()));
  for (Index r = 0; r < c.matrix.outerSize(); ++r)
    for (SparseRowMatrix::InnerIterator it(c.matrix, r); it; ++it)
      t.emplace_back(it.row(), it.col(), it.value());
  for (Index j = 0; j < row.size(); ++j)
    if (row[j] != 0.0) t.emplace_back(c.count(), j, row[j]);
  SparseRowMatrix a(c.count() + 1, c.dim());
  a.setFromTriplets(t.begin(), t.end());
  c.matrix = std::move(a);
}

/// Coordinate text dump, one `row col value` line per stored entry, zero-based.
inline void write_coordinate(std::ostream& os, const SparseMatrix& m) {
  os.precision(17);
  for (Index k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it)
      os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
}

}  // namespace stmort
