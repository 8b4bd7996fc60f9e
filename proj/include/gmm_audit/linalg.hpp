#pragma once

#include "gmm_audit/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace gmm_audit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace linalg {

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// max |a_ij - a_ji| relative to max |a_ij|.
inline double relative_asymmetry(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  const double scale = a.cwiseAbs().maxCoeff();
  const double skew = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  return skew / scale;
}

struct EigenRange {
  double min = 0.0;
  double max = 0.0;
  [[nodiscard]] double condition() const {
    if (min <= 0.0) return std::numeric_limits<double>::infinity();
    return max / min;
  }
};

inline EigenRange eigen_range(const Matrix& symmetric) {
  if (symmetric.size() == 0) return {1.0, 1.0};
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetric, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

/// Solves a x = b for symmetric positive definite a. Raises RankError when a is
/// numerically singular (condition above `max_condition`).
inline Matrix solve_spd(const Matrix& a, const Matrix& b, const std::string& what,
                        double max_condition = 1e14) {
  const auto range = eigen_range(a);
  if (!(range.max > 0.0) || !(range.min > 0.0) || range.condition() > max_condition ||
      !std::isfinite(range.condition())) {
    throw RankError(what + " is singular", range.condition());
  }
  Eigen::LDLT<Matrix> ldlt(a);
  return ldlt.solve(b);
}

inline Matrix inverse_spd(const Matrix& a, const std::string& what,
                          double max_condition = 1e14) {
  return symmetrize(solve_spd(a, Matrix::Identity(a.rows(), a.cols()), what, max_condition));
}

/// Symmetric inverse of a covariance matrix; when its condition number exceeds
/// 1e12 the ridge  lambda = 1e-10 * trace / k  is added first.
struct RidgeInverse {
  Matrix inverse;
  bool repaired = false;
  double ridge = 0.0;
};

inline RidgeInverse ridge_inverse(const Matrix& sigma) {
  RidgeInverse out;
  const Index k = sigma.rows();
  Matrix s = symmetrize(sigma);
  const auto range = eigen_range(s);
  if (!(range.min > 0.0) || range.condition() > 1e12) {
    out.repaired = true;
    double tr = s.trace();
    if (!(tr > 0.0)) tr = static_cast<double>(k);
    out.ridge = 1e-10 * tr / static_cast<double>(k);
    s.diagonal().array() += out.ridge;
  }
  out.inverse = inverse_spd(s, "covariance matrix", std::numeric_limits<double>::infinity());
  return out;
}

/// Orthogonal projector onto the column space of `a` (full column rank).
inline Matrix column_projector(const Matrix& a) {
  if (a.cols() == 0) return Matrix::Zero(a.rows(), a.rows());
  const Matrix gram = a.transpose() * a;
  return symmetrize(a * solve_spd(gram, a.transpose(), "Gram matrix"));
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with sign fix.
template <class Rng>
Matrix random_orthogonal(Index k, Rng& rng) {
  std::normal_distribution<double> normal;
  Matrix g(k, k);
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < k; ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < k; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

}  // namespace linalg
}  // namespace gmm_audit
