#pragma once

#include <Eigen/Dense>

#include <string>

#include "fedctx/errors.hpp"

namespace fedctx {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

// Relative cutoff below which singular values count as zero.
inline constexpr double kRankTolerance = 1e-10;

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* who) {
  if (!m.allFinite()) throw InvalidInput(std::string(who) + ": non-finite entries");
}

}  // namespace detail

// Orthonormal basis of {v : m v = 0}, one basis vector per row. Rank is the
// number of singular values above tol * sigma_max; a 0-row input spans
// nothing, so the whole space comes back.
inline Matrix nullspace_basis(const Matrix& m, double tol = kRankTolerance) {
  if (m.rows() > m.cols())
    throw InvalidInput("nullspace_basis: matrix has more rows than columns");
  if (!(tol > 0.0)) throw InvalidInput("nullspace_basis: tol must be > 0");
  detail::require_finite(m, "nullspace_basis");
  if (m.rows() == 0) return Matrix::Identity(m.cols(), m.cols());

  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const double cutoff = tol * sv(0);
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv(rank) > cutoff) ++rank;
  return svd.matrixV().rightCols(m.cols() - rank).transpose();
}

// Minimum-norm least-squares solution of a v = b. Exact solution whenever
// the system is consistent; singular values below tol * sigma_max are
// truncated.
inline Vector lstsq_min_norm(const Matrix& a, const Vector& b,
                             double tol = kRankTolerance) {
  if (a.rows() != b.size()) throw InvalidInput("lstsq_min_norm: dimension mismatch");
  if (!(tol > 0.0)) throw InvalidInput("lstsq_min_norm: tol must be > 0");
  detail::require_finite(a, "lstsq_min_norm");
  detail::require_finite(b, "lstsq_min_norm");
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(tol);
  return svd.solve(b);
}

// Solves a square system, falling back to the minimum-norm least-squares
// solution when the matrix is singular.
inline Vector solve_square(const Matrix& a, const Vector& b,
                           double tol = kRankTolerance) {
  if (a.rows() != a.cols()) throw InvalidInput("solve_square: matrix is not square");
  return lstsq_min_norm(a, b, tol);
}

inline double inner(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw InvalidInput("inner: dimension mismatch");
  return u.dot(v);
}

inline Eigen::Index numerical_rank(const Matrix& m, double tol = kRankTolerance) {
  if (m.size() == 0) return 0;
  detail::require_finite(m, "numerical_rank");
  Eigen::BDCSVD<Matrix> svd(m);
  const Vector& sv = svd.singularValues();
  const double cutoff = tol * sv(0);
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv(rank) > cutoff) ++rank;
  return rank;
}

}  // namespace linalg
}  // namespace fedctx
