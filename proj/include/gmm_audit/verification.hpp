#pragma once

// Exact checks of the weighting results in the Gaussian limit experiment, run over
// seeded random instances. Shared by `gmm-audit verify` and the acceptance suite.

#include "gmm_audit/limit_lab.hpp"
#include "gmm_audit/weight_audit.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace gmm_audit::limit_lab {

struct CheckResult {
  std::string name;
  bool passed = false;
  double metric = 0.0;     ///< worst observed error
  double tolerance = 0.0;
  double seconds = 0.0;
  std::string detail;
};

/// Random instance: k in [2, max_k], p in [1, min(max_p, k - 1)], Gaussian Gamma
/// (redrawn until well conditioned), Sigma = Q diag(lambda) Q' with log lambda
/// uniform on [log 0.2, log 5], Gaussian h, eta and phi.
inline LimitProblem random_instance(std::mt19937_64& rng, Index max_k = 6, Index max_p = 3) {
  std::normal_distribution<double> nd;
  const Index k = std::uniform_int_distribution<Index>(2, max_k)(rng);
  const Index p = std::uniform_int_distribution<Index>(1, std::min(max_p, k - 1))(rng);
  LimitProblem pr;
  for (;;) {
    pr.gamma = Matrix(k, p);
    for (Index i = 0; i < k; ++i)
      for (Index j = 0; j < p; ++j) pr.gamma(i, j) = nd(rng);
    Eigen::JacobiSVD<Matrix> svd(pr.gamma);
    if (svd.singularValues()(p - 1) > 0.05 * svd.singularValues()(0)) break;
  }
  const Matrix q = linalg::random_orthogonal(k, rng);
  std::uniform_real_distribution<double> u(std::log(0.2), std::log(5.0));
  Vector lambda(k);
  for (Index i = 0; i < k; ++i) lambda(i) = std::exp(u(rng));
  pr.sigma = linalg::symmetrize(q * lambda.asDiagonal() * q.transpose());
  pr.h = Vector(p);
  for (Index j = 0; j < p; ++j) pr.h(j) = nd(rng);
  pr.eta = Vector(k);
  for (Index i = 0; i < k; ++i) pr.eta(i) = nd(rng);
  pr.phi = Vector(p);
  for (Index j = 0; j < p; ++j) pr.phi(j) = nd(rng);
  return pr;
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

}  // namespace detail

struct ExactIntervalCheck {
  std::size_t instances = 500;
  std::size_t omegas = 2000;
  double kappa = 1e6;
  double tolerance = 1e-8;
  double max_seconds = 120.0;
  std::uint64_t seed = 20240901;
};

/// Every brute-force estimate passing the variance filter lies inside the exact
/// interval, and the constructed weights attain both endpoints.
inline CheckResult check_exact_interval(const ExactIntervalCheck& cfg = {}) {
  const auto t0 = detail::Clock::now();
  std::mt19937_64 rng(mix_seed(cfg.seed));
  std::uniform_real_distribution<double> tau_dist(0.25, 2.0);
  double worst_excess = 0.0, worst_endpoint = 0.0;
  std::size_t accepted = 0, total = 0;
  for (std::size_t inst = 0; inst < cfg.instances; ++inst) {
    const LimitProblem pr = random_instance(rng);
    const Vector y = draw(pr, rng());
    const double tau = tau_dist(rng);
    const ExactInterval ex = exact_interval(pr, y, tau);
    worst_endpoint = std::max(worst_endpoint, ex.max_endpoint_error);
    const double bound = (1.0 + tau * tau) * ex.sigma_eff * ex.sigma_eff;
    std::mt19937_64 wrng(sub_seed(cfg.seed, inst));
    for (std::size_t d = 0; d < cfg.omegas; ++d) {
      const Matrix w = random_weight(pr.k(), cfg.kappa, wrng);
      const PhiHat est = phi_hat(pr.gamma, pr.sigma, pr.h, w, y);
      ++total;
      if (est.var_theta > bound) continue;
      ++accepted;
      const double excess = std::max({0.0, ex.interval.lo - est.theta, est.theta - ex.interval.hi});
      worst_excess = std::max(worst_excess, excess);
    }
  }
  CheckResult r;
  r.name = "exact attainable interval";
  r.seconds = detail::seconds_since(t0);
  r.metric = std::max(worst_excess, worst_endpoint);
  r.tolerance = cfg.tolerance;
  r.passed = worst_excess <= cfg.tolerance && worst_endpoint <= cfg.tolerance && r.seconds <= cfg.max_seconds;
  r.detail = std::to_string(cfg.instances) + " instances, " + std::to_string(accepted) + "/" +
             std::to_string(total) + " weights accepted; max containment excess " + detail::fmt(worst_excess) +
             ", max endpoint error " + detail::fmt(worst_endpoint) + ", " + detail::fmt(r.seconds) + " s";
  return r;
}

/// Cost levels for the constructed endpoint weights. The largest entries push the
/// constructed |t| at theta_eff to within sqrt(J) / (2 tau^2) of sqrt(J).
inline const std::vector<double>& corollary_taus() {
  static const std::vector<double> taus{0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0, 1e3, 1e4, 1e5};
  return taus;
}

struct CorollaryCheck {
  std::size_t instances = 100;
  std::size_t omegas = 2000;
  double kappa = 1e6;
  double minmax_tolerance = 1e-6;
  double cs_tolerance = 1e-8;
  std::uint64_t seed = 20240902;
};

struct CorollaryResults {
  CheckResult min_max_t;
  CheckResult cs;
};

/// On each instance: the min over theta0 of the max |t| over {endpoint weights and
/// random weights} equals sqrt(J), and the confidence sets first intersect at
/// critical value sqrt(J) at theta_eff.
inline CorollaryResults check_corollaries(const CorollaryCheck& cfg = {}) {
  const auto t0 = detail::Clock::now();
  std::mt19937_64 rng(mix_seed(cfg.seed));
  double worst_t = 0.0, worst_c = 0.0, worst_point = 0.0;
  for (std::size_t inst = 0; inst < cfg.instances; ++inst) {
    const LimitProblem pr = random_instance(rng);
    const Vector y = draw(pr, rng());
    const auto pts = limit_points(pr, y, corollary_taus(), cfg.omegas, cfg.kappa, sub_seed(cfg.seed, inst));
    const ExactInterval ex = exact_interval(pr, y, 1.0);
    const double sqrt_j = std::sqrt(ex.j);
    const MinMaxT mm = min_max_t(pts);
    worst_t = std::max(worst_t, std::abs(mm.value - sqrt_j));
    const CsIntersection cs = cs_intersection(pts);
    worst_c = std::max(worst_c, std::abs(cs.c_star - sqrt_j));
    worst_point = std::max(worst_point, std::abs(cs.point - ex.theta_eff));
  }
  const double secs = detail::seconds_since(t0);
  CorollaryResults out;
  out.min_max_t.name = "min-max |t| equals sqrt(J)";
  out.min_max_t.metric = worst_t;
  out.min_max_t.tolerance = cfg.minmax_tolerance;
  out.min_max_t.passed = worst_t <= cfg.minmax_tolerance;
  out.min_max_t.seconds = secs;
  out.min_max_t.detail = std::to_string(cfg.instances) + " instances; max |min_max_t - sqrt(J)| " + detail::fmt(worst_t);
  out.cs.name = "confidence-set intersection at sqrt(J)";
  out.cs.metric = std::max(worst_c, worst_point);
  out.cs.tolerance = cfg.cs_tolerance;
  out.cs.passed = worst_c <= cfg.cs_tolerance && worst_point <= cfg.cs_tolerance;
  out.cs.seconds = secs;
  out.cs.detail = std::to_string(cfg.instances) + " instances; max |c* - sqrt(J)| " + detail::fmt(worst_c) +
                  ", max |point - theta_eff| " + detail::fmt(worst_point);
  return out;
}

struct CanonicalCheck {
  std::size_t instances = 200;
  double identity_tolerance = 1e-10;
  double j_tolerance = 1e-8;
  std::uint64_t seed = 20240903;
};

/// Q Q^-1 = I, M Gamma = 0, Lambda Sigma M' = 0, Q Sigma Q' block diagonal, and the
/// quadratic-form and Z-norm J values agree.
inline CheckResult check_canonical(const CanonicalCheck& cfg = {}) {
  const auto t0 = detail::Clock::now();
  std::mt19937_64 rng(mix_seed(cfg.seed));
  double worst_identity = 0.0, worst_j = 0.0;
  for (std::size_t inst = 0; inst < cfg.instances; ++inst) {
    const LimitProblem pr = random_instance(rng);
    const CanonicalForm c = canonical_form(pr);
    const Index k = pr.k(), p = pr.p();
    const Matrix qsq = c.q * pr.sigma * c.q.transpose();
    const double errs[] = {
        (c.q * c.q_inv - Matrix::Identity(k, k)).norm(),
        (c.m * pr.gamma).norm(),
        (c.lambda * pr.sigma * c.m.transpose()).norm(),
        qsq.topRightCorner(p, k - p).norm(),
        qsq.bottomLeftCorner(k - p, p).norm(),
    };
    for (double e : errs) worst_identity = std::max(worst_identity, e);
    const JAnalog j = j_analog(pr, draw(pr, rng()));
    worst_j = std::max(worst_j, std::abs(j.via_quadratic - j.via_canonical));
  }
  CheckResult r;
  r.name = "canonical-form identities";
  r.seconds = detail::seconds_since(t0);
  r.metric = std::max(worst_identity, worst_j);
  r.tolerance = cfg.identity_tolerance;
  r.passed = worst_identity <= cfg.identity_tolerance && worst_j <= cfg.j_tolerance;
  r.detail = std::to_string(cfg.instances) + " instances; max identity residual " + detail::fmt(worst_identity) +
             ", max J disagreement " + detail::fmt(worst_j);
  return r;
}

struct SurjectivityCheck {
  std::size_t targets = 100;
  double tolerance = 1e-8;
  std::uint64_t seed = 20240904;
};

/// Every v is realised by some weight: weight_for_direction(direction_for_v(v))
/// maps back to v.
inline CheckResult check_v_surjectivity(const SurjectivityCheck& cfg = {}) {
  const auto t0 = detail::Clock::now();
  std::mt19937_64 rng(mix_seed(cfg.seed));
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (std::size_t t = 0; t < cfg.targets; ++t) {
    const LimitProblem pr = random_instance(rng);
    const CanonicalForm c = canonical_form(pr);
    Vector v(pr.k() - pr.p());
    for (Index i = 0; i < v.size(); ++i) v(i) = nd(rng);
    const WeightMatrix w = weight_for_direction(pr.gamma, pr.h, direction_for_v(c, pr.h, v));
    const Vector back = v_of_weight(pr.gamma, pr.sigma, pr.h, c, w.values());
    worst = std::max(worst, (back - v).norm());
  }
  CheckResult r;
  r.name = "v-parametrisation surjectivity";
  r.seconds = detail::seconds_since(t0);
  r.metric = worst;
  r.tolerance = cfg.tolerance;
  r.passed = worst <= cfg.tolerance;
  r.detail = std::to_string(cfg.targets) + " targets; max |v(W(v)) - v| " + detail::fmt(worst);
  return r;
}

}  // namespace gmm_audit::limit_lab
