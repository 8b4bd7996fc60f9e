#pragma once

// The Gaussian limit experiment  Y = -Gamma phi + eta + Sigma^{1/2} eps  in which
// GMM weighting choices can be analysed exactly: estimators, the J analogue, the
// canonical reparametrisation and the constructive weighting matrices.

#include "gmm_audit/interval.hpp"
#include "gmm_audit/linalg.hpp"
#include "gmm_audit/moment_core.hpp"
#include "gmm_audit/parallel.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/eigen.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace gmm_audit::limit_lab {

struct LimitProblem {
  Matrix gamma;  ///< k x p, full column rank
  Matrix sigma;  ///< k x k, positive definite
  Vector h;      ///< p
  Vector eta;    ///< k, drift
  Vector phi;    ///< p, local parameter

  [[nodiscard]] Index k() const { return gamma.rows(); }
  [[nodiscard]] Index p() const { return gamma.cols(); }

  void validate() const {
    const Index k = gamma.rows(), p = gamma.cols();
    if (p < 1 || k < p) throw ConfigError("limit problem needs k >= p >= 1");
    if (sigma.rows() != k || sigma.cols() != k) throw ConfigError("Sigma must be k x k");
    if (h.size() != p) throw ConfigError("h must have length p");
    if (eta.size() != k) throw ConfigError("eta must have length k");
    if (phi.size() != p) throw ConfigError("phi must have length p");
    if (linalg::relative_asymmetry(sigma) > 1e-12) throw SymmetryError("Sigma is not symmetric", linalg::relative_asymmetry(sigma));
    if (!(linalg::eigen_range(sigma).min > 0.0))
      throw RankError("Sigma is not positive definite", linalg::eigen_range(sigma).condition());
    Eigen::JacobiSVD<Matrix> svd(gamma);
    const auto& sv = svd.singularValues();
    if (!(sv(p - 1) > 1e-12 * sv(0))) throw RankError("Gamma is not full column rank", sv(0) / sv(p - 1));
  }
};

/**
 * Canonical form of the limit experiment.
 *
 * Q = [Lambda; M] with Lambda = -(G' S^-1 G)^-1 G' S^-1 and M = Mtilde (I + G Lambda),
 * where Mtilde stacks the left singular vectors of (I + G Lambda) with non-negligible
 * singular value. Then QY = (phi_hat_eff, Z) and Q Sigma Q' = diag(Sigma*_phi, Sigma*_Z).
 */
struct CanonicalForm {
  Matrix q;      ///< k x k
  Matrix q_inv;  ///< [-Gamma, Sigma M' (M Sigma M')^{-1}]
  Matrix lambda; ///< p x k
  Matrix m;      ///< (k-p) x k
  double mtilde_rank_tol = 0.0;
  Matrix sigma_star_phi;  ///< p x p
  Matrix sigma_star_z;    ///< (k-p) x (k-p)

  [[nodiscard]] Index k() const { return q.rows(); }
  [[nodiscard]] Index p() const { return lambda.rows(); }
};

inline CanonicalForm canonical_form(const Matrix& gamma, const Matrix& sigma) {
  const Index k = gamma.rows(), p = gamma.cols();
  CanonicalForm c;
  const Matrix sigma_inv = linalg::inverse_spd(sigma, "Sigma", std::numeric_limits<double>::infinity());
  const Matrix gs = gamma.transpose() * sigma_inv;
  c.lambda = -linalg::solve_spd(gs * gamma, gs, "Gamma' Sigma^-1 Gamma",
                                std::numeric_limits<double>::infinity());
  const Matrix residual_maker = Matrix::Identity(k, k) + gamma * c.lambda;

  Eigen::JacobiSVD<Matrix> svd(residual_maker, Eigen::ComputeFullU);
  const Vector& sv = svd.singularValues();
  const double smax = sv.size() ? sv(0) : 0.0;
  c.mtilde_rank_tol = 1e-12 * smax;
  Index rank = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv(i) > c.mtilde_rank_tol) ++rank;
  if (rank != k - p)
    throw ConstructionError("I + Gamma Lambda has rank " + std::to_string(rank) + ", expected k - p = " +
                            std::to_string(k - p) + " (Gamma not full rank within tolerance)");
  const Matrix mtilde = svd.matrixU().leftCols(k - p).transpose();
  c.m = mtilde * residual_maker;

  c.q.resize(k, k);
  c.q.topRows(p) = c.lambda;
  c.q.bottomRows(k - p) = c.m;

  c.sigma_star_phi = linalg::symmetrize(c.lambda * sigma * c.lambda.transpose());
  c.sigma_star_z = linalg::symmetrize(c.m * sigma * c.m.transpose());

  c.q_inv.resize(k, k);
  c.q_inv.leftCols(p) = -gamma;
  if (k > p) {
    const Matrix sm = sigma * c.m.transpose();
    c.q_inv.rightCols(k - p) =
        linalg::solve_spd(c.sigma_star_z, sm.transpose(), "M Sigma M'",
                          std::numeric_limits<double>::infinity())
            .transpose();
  }
  return c;
}

inline CanonicalForm canonical_form(const LimitProblem& problem) {
  problem.validate();
  return canonical_form(problem.gamma, problem.sigma);
}

/// Y = -Gamma phi + eta + chol(Sigma) eps with eps ~ N(0, I) from a seeded stream.
inline Vector draw(const LimitProblem& problem, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed));
  std::normal_distribution<double> normal;
  Vector eps(problem.k());
  for (Index i = 0; i < eps.size(); ++i) eps(i) = normal(rng);
  const Eigen::LLT<Matrix> llt(problem.sigma);
  return -problem.gamma * problem.phi + problem.eta + Matrix(llt.matrixL()) * eps;
}

struct PhiHat {
  Vector phi;
  double theta = 0.0;
  double var_theta = 0.0;
};

namespace detail {

template <class S>
using MatrixOf = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VectorOf = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
struct EstimateOf {
  VectorOf<S> phi;
  S theta{};
  S var_theta{};
};

/// phi = -(G'WG)^{-1} G'W Y and the exact variance of h' phi, in scalar type S.
template <class S>
EstimateOf<S> estimate(const MatrixOf<S>& gamma, const MatrixOf<S>& sigma, const VectorOf<S>& h,
                       const MatrixOf<S>& w, const VectorOf<S>& y) {
  const MatrixOf<S> gw = gamma.transpose() * w;
  const MatrixOf<S> bread = (gw * gamma + (gw * gamma).transpose()) / S(2);
  const Eigen::LDLT<MatrixOf<S>> ldlt(bread);
  // a = (G'WG)^{-1} h, so theta = -a' G'W Y and var = a' G'W S W G a
  const VectorOf<S> a = ldlt.solve(h);
  EstimateOf<S> out;
  out.phi = -ldlt.solve(VectorOf<S>(gw * y));
  out.theta = h.dot(out.phi);
  const VectorOf<S> q = gw.transpose() * a;  // W G (G'WG)^{-1} h
  out.var_theta = q.dot(sigma * q);
  return out;
}

/// The constructive weight of weight_for_direction without input checks.
template <class S>
MatrixOf<S> constructive_weight(const MatrixOf<S>& gamma, const VectorOf<S>& h, const VectorOf<S>& q) {
  using std::sqrt;
  const Index k = gamma.rows();
  const MatrixOf<S> gram = gamma.transpose() * gamma;
  const Eigen::LDLT<MatrixOf<S>> gram_ldlt(gram);
  const VectorOf<S> r = gram_ldlt.solve(h);
  const VectorOf<S> u = gamma * r;
  const MatrixOf<S> eye = MatrixOf<S>::Identity(k, k);
  const MatrixOf<S> proj_gamma = gamma * gram_ldlt.solve(MatrixOf<S>(gamma.transpose()));
  // orthogonal component of q; projecting removes the rounding left in q - u
  const VectorOf<S> w = (eye - proj_gamma) * (q - u);
  MatrixOf<S> omega = gamma * gamma.transpose();
  const S wn = sqrt(w.squaredNorm());
  const S un = sqrt(u.squaredNorm());
  if (wn <= S(1e-14) * (un > S(1) ? un : S(1))) {
    omega += eye - proj_gamma;
  } else {
    const S a = S(1) / r.squaredNorm();  // h'(G'G)^{-2} h = |(G'G)^{-1} h|^2
    const VectorOf<S> w_unit = w / wn;
    const MatrixOf<S> p_v = eye - proj_gamma - w_unit * w_unit.transpose();
    omega += a * (u * w.transpose() + w * u.transpose()) + S(2) * a * (w * w.transpose()) + p_v;
  }
  return (omega + omega.transpose()) / S(2);
}

}  // namespace detail

/// phi_hat = -(G'WG)^{-1} G'W Y with exact variance of h' phi_hat.
inline PhiHat phi_hat(const Matrix& gamma, const Matrix& sigma, const Vector& h, const Matrix& w,
                      const Vector& y) {
  const Matrix gw = gamma.transpose() * w;
  const auto range = linalg::eigen_range(linalg::symmetrize(gw * gamma));
  if (!(range.min > 0.0)) throw RankError("Gamma' W Gamma is singular", range.condition());
  const auto est = detail::estimate<double>(gamma, sigma, h, w, y);
  return {est.phi, est.theta, est.var_theta};
}

inline PhiHat phi_hat(const LimitProblem& problem, const WeightMatrix& w, const Vector& y) {
  return phi_hat(problem.gamma, problem.sigma, problem.h, w.values(), y);
}

struct JAnalog {
  double j = 0.0;
  double via_quadratic = 0.0;  ///< (Y + G phi_eff)' S^-1 (Y + G phi_eff)
  double via_canonical = 0.0;  ///< Z' (Sigma*_Z)^-1 Z
};

inline JAnalog j_analog(const Matrix& gamma, const Matrix& sigma, const CanonicalForm& c,
                        const Vector& y) {
  JAnalog out;
  const Vector phi_eff = c.lambda * y;
  const Vector resid = y + gamma * phi_eff;
  out.via_quadratic = resid.dot(Vector(linalg::solve_spd(sigma, resid, "Sigma", std::numeric_limits<double>::infinity())));
  if (c.m.rows() > 0) {
    const Vector z = c.m * y;
    out.via_canonical = z.dot(Vector(linalg::solve_spd(c.sigma_star_z, z, "Sigma*_Z", std::numeric_limits<double>::infinity())));
  }
  out.j = std::max(0.0, out.via_quadratic);
  return out;
}

inline JAnalog j_analog(const LimitProblem& problem, const Vector& y) {
  return j_analog(problem.gamma, problem.sigma, canonical_form(problem), y);
}

/**
 * A positive-definite W with  W G (G'WG)^{-1} h = q, for any q with G'q = h.
 *
 * Writes q = u + w with u = G (G'G)^{-1} h in range(G) and w orthogonal to it, and
 * returns  W = G G' + a (u w' + w u') + 2a w w' + P_V  with a = 1 / (h'(G'G)^{-2} h)
 * and P_V the projector onto the complement of range(G) + span(w). The w w'
 * coefficient 2a clears the positive-definiteness threshold a.
 */
inline WeightMatrix weight_for_direction(const Matrix& gamma, const Vector& h, const Vector& q) {
  const Index k = gamma.rows();
  if (h.size() != gamma.cols() || q.size() != k) throw ConfigError("weight_for_direction: dimension mismatch");
  const double residual = (gamma.transpose() * q - h).norm();
  const double scale = std::max(1.0, gamma.norm() * q.norm());
  if (residual > 1e-10 * scale)
    throw DirectionError("direction q does not satisfy Gamma' q = h", residual);
  const auto range = linalg::eigen_range(gamma.transpose() * gamma);
  if (!(range.min > 0.0)) throw RankError("Gamma' Gamma is singular", range.condition());
  return WeightMatrix::from(detail::constructive_weight<double>(gamma, h, q));
}

/// Quad-precision scalar for weights whose condition number makes double rounding
/// visible in the estimate.
using ExtendedScalar = boost::multiprecision::cpp_bin_float_quad;

/**
 * (theta, var) realised by the constructive weight for direction q, with the weight
 * built and applied in quad precision. cond(W) grows like |q|^2 and the estimate
 * like |q|, so a double-precision W pins theta down only to about eps |q|^3.
 */
inline PhiHat extended_direction_estimate(const LimitProblem& problem, const Vector& y, const Vector& q) {
  using S = ExtendedScalar;
  const detail::MatrixOf<S> gamma = problem.gamma.cast<S>();
  const detail::VectorOf<S> h = problem.h.cast<S>();
  const detail::MatrixOf<S> w = detail::constructive_weight<S>(gamma, h, q.cast<S>());
  const auto est = detail::estimate<S>(gamma, problem.sigma.cast<S>(), h, w, y.cast<S>());
  Vector phi(est.phi.size());
  for (Index i = 0; i < phi.size(); ++i) phi(i) = static_cast<double>(est.phi(i));
  return {phi, static_cast<double>(est.theta), static_cast<double>(est.var_theta)};
}

/// q of the efficient weight: Sigma^-1 G (G' Sigma^-1 G)^-1 h.
inline Vector efficient_direction(const CanonicalForm& c, const Vector& h) {
  // Lambda' = -Sigma^-1 G (G'S^-1G)^-1
  return -c.lambda.transpose() * h;
}

/// The direction q whose weight gives  theta_hat = theta_eff + v'Z.
inline Vector direction_for_v(const CanonicalForm& c, const Vector& h, const Vector& v) {
  return efficient_direction(c, h) - c.m.transpose() * v;
}

/// v_W = -(M S M')^{-1} M S W G (G'WG)^{-1} h.
inline Vector v_of_weight(const Matrix& gamma, const Matrix& sigma, const Vector& h,
                          const CanonicalForm& c, const Matrix& w) {
  if (c.m.rows() == 0) return Vector(0);
  const Matrix gw = gamma.transpose() * w;
  const Vector a = linalg::solve_spd(linalg::symmetrize(gw * gamma), h, "Gamma' W Gamma",
                                     std::numeric_limits<double>::infinity());
  const Vector q = gw.transpose() * a;
  return -linalg::solve_spd(c.sigma_star_z, c.m * (sigma * q), "Sigma*_Z",
                            std::numeric_limits<double>::infinity());
}

struct ExactInterval {
  Interval interval;
  WeightMatrix lower_weight;
  WeightMatrix upper_weight;
  double theta_eff = 0.0;
  double sigma_eff = 0.0;  ///< sqrt(h'(G'S^-1G)^-1 h)
  double j = 0.0;
  double tau = 0.0;
  double max_endpoint_error = 0.0;  ///< |theta(weight) - endpoint|, worst of the two
};

/// The set {h' phi_W : var_W <= (1 + tau^2) var_eff} together with PD weights
/// attaining both endpoints.
inline ExactInterval exact_interval(const LimitProblem& problem, const Vector& y, double tau) {
  if (!(tau >= 0.0)) throw ConfigError("tau must be >= 0");
  const CanonicalForm c = canonical_form(problem);
  ExactInterval out;
  out.tau = tau;
  const Vector phi_eff = c.lambda * y;
  out.theta_eff = problem.h.dot(phi_eff);
  out.sigma_eff = std::sqrt(std::max(0.0, problem.h.dot(c.sigma_star_phi * problem.h)));
  out.j = j_analog(problem.gamma, problem.sigma, c, y).j;
  const double radius = out.sigma_eff * tau * std::sqrt(out.j);
  out.interval = {out.theta_eff - radius, out.theta_eff + radius};

  if (out.j <= 0.0 || c.m.rows() == 0) {
    const WeightMatrix eff = WeightMatrix::from(linalg::inverse_spd(problem.sigma, "Sigma",
                                                                    std::numeric_limits<double>::infinity()));
    out.lower_weight = eff;
    out.upper_weight = eff;
    out.interval = {out.theta_eff, out.theta_eff};
    return out;
  }
  const Vector z = c.m * y;
  const Vector sz_inv_z = linalg::solve_spd(c.sigma_star_z, z, "Sigma*_Z", std::numeric_limits<double>::infinity());
  const double scale = tau * out.sigma_eff / std::sqrt(out.j);
  out.upper_weight = weight_for_direction(problem.gamma, problem.h, direction_for_v(c, problem.h, scale * sz_inv_z));
  out.lower_weight = weight_for_direction(problem.gamma, problem.h, direction_for_v(c, problem.h, -scale * sz_inv_z));
  const double hi = phi_hat(problem, out.upper_weight, y).theta;
  const double lo = phi_hat(problem, out.lower_weight, y).theta;
  out.max_endpoint_error = std::max(std::abs(hi - out.interval.hi), std::abs(lo - out.interval.lo));
  return out;
}

}  // namespace gmm_audit::limit_lab
