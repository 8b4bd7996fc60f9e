#pragma once

// Conventional and misspecification-robust covariance, the J-statistic, and the
// nonparametric bootstrap.

#include "gmm_audit/estimation.hpp"
#include "gmm_audit/parallel.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace gmm_audit {

enum class CovFlavor { conventional, robust };

inline const char* to_string(CovFlavor f) {
  return f == CovFlavor::conventional ? "conventional" : "robust";
}

struct CovEstimate {
  Matrix cov_psi;  ///< p x p covariance of psi_hat
  double se_theta = 0.0;
  CovFlavor flavor = CovFlavor::conventional;
  Matrix bread;
  Matrix meat;
};

namespace detail {

inline double delta_se(const Matrix& cov, const Vector& h) {
  return std::sqrt(std::max(0.0, h.dot(cov * h)));
}

inline Matrix sandwich(const Matrix& bread, const Matrix& meat, double n, const char* what) {
  const Matrix inv_bread_meat = linalg::solve_spd(bread, meat, what);
  const Matrix cov = linalg::solve_spd(bread, inv_bread_meat.transpose(), what);
  return linalg::symmetrize(cov) / n;
}

}  // namespace detail

/// (G'WG)^{-1} G'W S W G (G'WG)^{-1} / n. Valid when the model is correctly
/// specified (or locally misspecified).
inline CovEstimate conventional_cov(const GmmFit& fit) {
  const Matrix& g = fit.stats.gamma_hat;
  const Matrix& w = fit.weight.values();
  const Matrix gw = g.transpose() * w;
  CovEstimate c;
  c.flavor = CovFlavor::conventional;
  c.bread = linalg::symmetrize(gw * g);
  c.meat = linalg::symmetrize(gw * fit.stats.sigma_hat * gw.transpose());
  c.cov_psi = detail::sandwich(c.bread, c.meat, static_cast<double>(fit.n()), "bread G'WG");
  c.se_theta = detail::delta_se(c.cov_psi, fit.h);
  return c;
}

/**
 * Misspecification-robust sandwich M^{-1} S M^{-1} / n.
 *
 * The bread M is the Hessian of  (1/2) g_bar(psi)' W g_bar(psi)  at psi_hat,
 * taken by central differences of the gradient G(psi)' W g_bar(psi); it keeps
 * the second-derivative terms that matter when g_bar(psi_hat) != 0. The meat
 * averages s_i s_i' with per-observation score
 *     s_i = G' W (g_i - g_bar) + (dg_i - G)' W g_bar.
 */
inline CovEstimate robust_cov(const GmmFit& fit, const MomentModel& model, const Dataset& data) {
  if (!fit.diagnostics.converged) throw Error("robust_cov requires a converged fit");
  const Index p = model.p;
  const Index k = model.k;
  const Matrix& w = fit.weight.values();
  const Vector& psi = fit.psi_hat;

  auto gradient = [&](const Vector& at) -> Vector {
    const auto mj = mean_and_jacobian(model, data, at);
    return mj.gamma.transpose() * (w * mj.g_bar);
  };
  // nested differences need a wider outer step when the Jacobian is itself numerical
  const double outer_scale = model.has_jacobian() ? 1.0 : 25.0;
  Matrix hess(p, p);
  for (Index j = 0; j < p; ++j) {
    Vector up = psi, down = psi;
    const double e = outer_scale * fd_step(psi(j));
    up(j) += e;
    down(j) -= e;
    hess.col(j) = (gradient(up) - gradient(down)) / (up(j) - down(j));
  }

  const Vector& g_bar = fit.stats.g_bar;
  const Matrix& gamma = fit.stats.gamma_hat;
  const Vector w_gbar = w * g_bar;
  const Matrix gw = gamma.transpose() * w;
  Matrix meat = Matrix::Zero(p, p);
  Vector gi(k);
  Matrix ji(k, p);
  Vector s(p);
  for (Index i = 0; i < data.rows(); ++i) {
    const RowView row = data.row(i);
    model.g(row, psi, std::span<double>(gi.data(), static_cast<std::size_t>(k)));
    detail::check_row(gi.data(), k, i, model.name, "moment value");
    row_jacobian(model, row, i, psi, ji);
    s.noalias() = gw * (gi - g_bar);
    s.noalias() += (ji - gamma).transpose() * w_gbar;
    meat.noalias() += s * s.transpose();
  }
  meat /= static_cast<double>(data.rows());

  CovEstimate c;
  c.flavor = CovFlavor::robust;
  c.bread = linalg::symmetrize(hess);
  c.meat = linalg::symmetrize(meat);
  c.cov_psi = detail::sandwich(c.bread, c.meat, static_cast<double>(data.rows()), "criterion Hessian");
  c.se_theta = detail::delta_se(c.cov_psi, fit.h);
  return c;
}

struct JStatistic {
  double j = 0.0;
  Index df = 0;            ///< k - p
  Vector psi_at_min;
  Matrix sigma_used;       ///< covariance whose inverse weights the criterion
  bool ridge_repaired = false;
  GmmFit efficient_fit;    ///< two-step fit that supplied sigma_used
};

/// J = min_psi n g_bar(psi)' sigma^{-1} g_bar(psi) with sigma held fixed.
inline double j_statistic_fixed(const MomentModel& model, const Dataset& data, const Matrix& sigma,
                                const OptimizerSettings& settings, Vector* psi_out = nullptr,
                                bool* repaired = nullptr) {
  const auto inv = linalg::ridge_inverse(sigma);
  if (repaired) *repaired = inv.repaired;
  const auto r = minimize_criterion(model, data, WeightMatrix::from(inv.inverse), settings);
  if (psi_out) *psi_out = r.psi;
  return std::max(0.0, r.criterion);
}

/// Hansen's J with sigma fixed at the covariance that formed the two-step
/// efficient weight, re-minimised from the two-step estimate.
inline JStatistic j_statistic(const MomentModel& model, const Dataset& data,
                              const OptimizerSettings& settings = {}) {
  JStatistic out;
  out.efficient_fit = fit(model, data, two_step_strategy(settings));
  out.df = model.k - model.p;
  out.sigma_used = linalg::inverse_spd(out.efficient_fit.weight.values(), "efficient weight",
                                       std::numeric_limits<double>::infinity());
  OptimizerSettings again = settings;
  again.init = out.efficient_fit.psi_hat;
  again.multistart = std::max(1, std::min(settings.multistart, 2));
  bool repaired = false;
  out.j = j_statistic_fixed(model, data, out.sigma_used, again, &out.psi_at_min, &repaired);
  out.ridge_repaired = repaired || out.efficient_fit.diagnostics.ridge_repaired;
  return out;
}

/// Upper-tail chi-square probability of J; descriptive context only.
inline double chi_square_tail(double j, Index df) {
  if (df <= 0) return 1.0;
  boost::math::chi_squared dist(static_cast<double>(df));
  return boost::math::cdf(boost::math::complement(dist, std::max(0.0, j)));
}

// ---------------------------------------------------------------------------
// Bootstrap

enum class BootstrapScheme { plain, recentered };

inline const char* to_string(BootstrapScheme s) {
  return s == BootstrapScheme::plain ? "plain" : "recentered";
}

struct BootstrapSettings {
  std::size_t replications = 1000;
  double alpha = 0.05;
  BootstrapScheme scheme = BootstrapScheme::plain;
  std::uint64_t seed = 0;
};

struct BootstrapResult {
  std::vector<double> draws;  ///< successful replicate theta estimates, replicate order
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool ci_valid = false;  ///< false when B < 100
  BootstrapScheme scheme = BootstrapScheme::plain;
  std::uint64_t seed = 0;
  std::size_t replications = 0;
  double alpha = 0.05;
  std::vector<ReplicateFailure> failures;
};

/// Linear-interpolation sample quantile of sorted data.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// g*(x, psi) = g(x, psi) - g_bar(psi_hat): imposes zero population moments at
/// psi_hat in the bootstrap world.
inline MomentModel recentered_model(const MomentModel& model, const Dataset& data,
                                    const Vector& psi_hat) {
  MomentModel m = model;
  const Vector shift = mean_moments(model, data, psi_hat);
  auto base = model.g;
  m.name = model.name + "[recentered]";
  m.g = [base, shift](RowView row, const Vector& psi, std::span<double> out) {
    base(row, psi, out);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] -= shift(static_cast<Index>(j));
  };
  return m;
}

/// Nonparametric iid bootstrap of theta_hat given the fit on the original data.
inline BootstrapResult bootstrap(const MomentModel& model, const Dataset& data,
                                 const FitStrategy& strategy, const GmmFit& original,
                                 const BootstrapSettings& settings) {
  if (settings.replications < 1) throw ConfigError("bootstrap needs at least one replication");
  if (!(settings.alpha > 0.0 && settings.alpha < 1.0))
    throw ConfigError("bootstrap alpha must lie in (0, 1)");
  const MomentModel boot_model = settings.scheme == BootstrapScheme::recentered
                                     ? recentered_model(model, data, original.psi_hat)
                                     : model;
  FitStrategy replicate_strategy = strategy;
  if (!replicate_strategy.optimizer.init) replicate_strategy.optimizer.init = original.psi_hat;

  const std::size_t b_count = settings.replications;
  const Index n = data.rows();
  std::vector<double> theta(b_count, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::string> failure(b_count);
  std::vector<char> failed(b_count, 0);

  parallel_for(b_count, [&](std::size_t r) {
    std::mt19937_64 rng(sub_seed(settings.seed, r));
    std::uniform_int_distribution<Index> pick(0, n - 1);
    std::vector<Index> index(static_cast<std::size_t>(n));
    for (auto& i : index) i = pick(rng);
    const Dataset sample = data.resample(index);
    FitStrategy s = replicate_strategy;
    s.optimizer.seed = sub_seed(settings.seed ^ 0x5bd1e995ULL, r);
    try {
      theta[r] = fit(boot_model, sample, s).theta_hat;
    } catch (const Error& e) {
      failed[r] = 1;
      failure[r] = e.what();
    }
  });

  BootstrapResult out;
  out.scheme = settings.scheme;
  out.seed = settings.seed;
  out.replications = b_count;
  out.alpha = settings.alpha;
  for (std::size_t r = 0; r < b_count; ++r) {
    if (failed[r]) {
      out.failures.push_back({r, failure[r]});
    } else {
      out.draws.push_back(theta[r]);
    }
  }
  if (static_cast<double>(out.failures.size()) > 0.05 * static_cast<double>(b_count)) {
    throw BootstrapInstabilityError(std::to_string(out.failures.size()) + " of " +
                                        std::to_string(b_count) +
                                        " bootstrap replicates failed (limit 5%)",
                                    out.failures);
  }
  const double m = static_cast<double>(out.draws.size());
  double mean = 0.0;
  for (double d : out.draws) mean += d;
  mean /= m;
  double ss = 0.0;
  for (double d : out.draws) ss += (d - mean) * (d - mean);
  out.se = out.draws.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
  std::vector<double> sorted = out.draws;
  std::sort(sorted.begin(), sorted.end());
  out.ci_lo = sorted_quantile(sorted, settings.alpha / 2.0);
  out.ci_hi = sorted_quantile(sorted, 1.0 - settings.alpha / 2.0);
  out.ci_valid = b_count >= 100;
  return out;
}

inline BootstrapResult bootstrap(const MomentModel& model, const Dataset& data,
                                 const FitStrategy& strategy, const BootstrapSettings& settings) {
  return bootstrap(model, data, strategy, fit(model, data, strategy), settings);
}

}  // namespace gmm_audit
