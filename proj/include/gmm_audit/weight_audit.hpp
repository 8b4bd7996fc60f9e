#pragma once

// Researcher degrees of freedom in the choice of weighting matrix: the
// attainable-estimate interval, adversarial t-statistics and the critical value
// at which all weight-specific confidence sets intersect.

#include "gmm_audit/estimation.hpp"
#include "gmm_audit/inference.hpp"
#include "gmm_audit/interval.hpp"
#include "gmm_audit/limit_lab.hpp"
#include "gmm_audit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gmm_audit {

enum class PointSource { efficient, identity, extremal, t_search, random };

inline const char* to_string(PointSource s) {
  switch (s) {
    case PointSource::efficient: return "efficient";
    case PointSource::identity: return "identity";
    case PointSource::extremal: return "extremal";
    case PointSource::t_search: return "t_search";
    case PointSource::random: return "random";
  }
  return "unknown";
}

/// An estimate and its standard error under one weighting matrix.
struct EstimatePoint {
  double theta = 0.0;
  double se = 0.0;
  double kappa = 1.0;  ///< smallest kappa with the (balanced) weight in W_kappa
  PointSource source = PointSource::random;
};

/// [theta_eff - tau sqrt(J) se_eff, theta_eff + tau sqrt(J) se_eff]
inline Interval attainable_interval(double theta_eff, double se_eff, double j, double tau) {
  const double radius = tau * std::sqrt(std::max(0.0, j)) * se_eff;
  return {theta_eff - radius, theta_eff + radius};
}

struct CsIntersection {
  double c_star = 0.0;
  double point = 0.0;
};

/// Smallest c >= 0 such that all intervals [theta_i -+ c se_i] share a point, by
/// bisection on the monotone gap  max_i(theta_i - c se_i) - min_i(theta_i + c se_i).
inline CsIntersection cs_intersection(std::span<const EstimatePoint> points) {
  if (points.empty()) throw ConfigError("cs_intersection needs at least one point");
  for (const auto& pt : points)
    if (!(pt.se > 0.0)) throw ConfigError("cs_intersection needs strictly positive standard errors");
  auto bounds = [&](double c) {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    for (const auto& pt : points) {
      lo = std::max(lo, pt.theta - c * pt.se);
      hi = std::min(hi, pt.theta + c * pt.se);
    }
    return std::pair{lo, hi};
  };
  auto [lo0, hi0] = bounds(0.0);
  if (lo0 <= hi0) return {0.0, 0.5 * (lo0 + hi0)};

  double min_se = std::numeric_limits<double>::infinity();
  for (const auto& pt : points) min_se = std::min(min_se, pt.se);
  double a = 0.0;
  double b = (lo0 - hi0) / min_se;
  while (bounds(b).first > bounds(b).second) b *= 2.0;
  for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, b); ++it) {
    const double mid = 0.5 * (a + b);
    if (mid <= a || mid >= b) break;
    const auto [lo, hi] = bounds(mid);
    (lo <= hi ? b : a) = mid;
  }
  const auto [lo, hi] = bounds(b);
  return {b, 0.5 * (lo + hi)};
}

struct SupT {
  double value = 0.0;
  std::size_t index = 0;
};

/// max_i |theta_i - theta0| / se_i over a cached weight set.
inline SupT sup_abs_t(std::span<const EstimatePoint> points, double theta0) {
  SupT best;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double t = std::abs(points[i].theta - theta0) / points[i].se;
    if (t > best.value || i == 0) best = {t, i};
  }
  return best;
}

struct MinMaxT {
  double value = 0.0;
  double theta0_star = 0.0;
};

/// inf over theta0 of sup_abs_t: a grid over the range of estimates refined by
/// golden-section search (the objective is convex and piecewise smooth in theta0).
inline MinMaxT min_max_t(std::span<const EstimatePoint> points) {
  if (points.empty()) throw ConfigError("min_max_t needs at least one point");
  double lo = points[0].theta, hi = points[0].theta;
  for (const auto& pt : points) {
    lo = std::min(lo, pt.theta);
    hi = std::max(hi, pt.theta);
  }
  auto objective = [&](double t0) { return sup_abs_t(points, t0).value; };
  if (hi - lo <= 0.0) return {objective(lo), lo};

  constexpr int grid = 200;
  const double step = (hi - lo) / grid;
  int best = 0;
  double best_val = objective(lo);
  for (int i = 1; i <= grid; ++i) {
    const double v = objective(lo + i * step);
    if (v < best_val) {
      best_val = v;
      best = i;
    }
  }
  double a = lo + std::max(0, best - 1) * step;
  double b = lo + std::min(grid, best + 1) * step;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = objective(x1), f2 = objective(x2);
  const double tol = 1e-15 * std::max({1.0, std::abs(lo), std::abs(hi)});
  for (int it = 0; it < 300 && b - a > tol; ++it) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = objective(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = objective(x2);
    }
  }
  MinMaxT out{best_val, lo + best * step};
  for (double x : {a, b, x1, x2, 0.5 * (a + b)}) {
    const double v = objective(x);
    if (v < out.value) out = {v, x};
  }
  return out;
}

/// Omega = Q diag(lambda) Q' with Q Haar-orthogonal and log lambda_i uniform on
/// [-log kappa, log kappa].
template <class Rng>
Matrix random_weight(Index k, double kappa, Rng& rng) {
  if (!(kappa >= 1.0)) throw ConfigError("kappa must be >= 1");
  const Matrix q = linalg::random_orthogonal(k, rng);
  std::uniform_real_distribution<double> u(-std::log(kappa), std::log(kappa));
  Vector lambda(k);
  for (Index i = 0; i < k; ++i) lambda(i) = std::exp(u(rng));
  return linalg::symmetrize(q * lambda.asDiagonal() * q.transpose());
}

/// Relative offsets along each extremal ray; the last entry is the endpoint.
inline const std::vector<double>& extremal_ladder() {
  static const std::vector<double> ladder{0.25, 0.5,  0.75,  0.9,   0.95, 0.98,
                                          0.99, 0.995, 0.998, 0.999, 1.0};
  return ladder;
}

/// Cost levels of the constructed weights used when searching for large |t|.
inline const std::vector<double>& t_search_taus() {
  static const std::vector<double> taus{1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0};
  return taus;
}

// ---------------------------------------------------------------------------
// Limit-experiment bridge

/// Weight set for an exact limit problem: the efficient weight, both endpoint
/// weights at every tau in `taus` and `n_random` draws from W_kappa. Standard errors
/// are exact. Endpoint weights are built and applied in extended precision because
/// their conditioning grows with tau.
inline std::vector<EstimatePoint> limit_points(const limit_lab::LimitProblem& problem, const Vector& y,
                                               const std::vector<double>& taus, std::size_t n_random,
                                               double kappa, std::uint64_t seed) {
  namespace ll = limit_lab;
  const auto c = ll::canonical_form(problem);
  std::vector<EstimatePoint> pts;
  const WeightMatrix eff =
      WeightMatrix::from(linalg::inverse_spd(problem.sigma, "Sigma", std::numeric_limits<double>::infinity()));
  const auto e = ll::phi_hat(problem, eff, y);
  pts.push_back({e.theta, std::sqrt(e.var_theta), eff.balanced().kappa(), PointSource::efficient});

  if (c.m.rows() > 0) {
    const Vector z = c.m * y;
    const Vector sz_inv_z = linalg::solve_spd(c.sigma_star_z, z, "Sigma*_Z", std::numeric_limits<double>::infinity());
    const double j = z.dot(sz_inv_z);
    const double sigma_eff = std::sqrt(problem.h.dot(c.sigma_star_phi * problem.h));
    if (j > 0.0) {
      for (double tau : taus) {
        for (double sign : {-1.0, 1.0}) {
          const Vector q = ll::direction_for_v(c, problem.h, sign * tau * sigma_eff / std::sqrt(j) * sz_inv_z);
          const auto est = ll::extended_direction_estimate(problem, y, q);
          // the double rounding of the weight is adequate for its conditioning
          const double kappa_w = ll::weight_for_direction(problem.gamma, problem.h, q).balanced().kappa();
          pts.push_back({est.theta, std::sqrt(est.var_theta), kappa_w, PointSource::extremal});
        }
      }
    }
  }
  std::mt19937_64 rng(mix_seed(seed));
  for (std::size_t i = 0; i < n_random; ++i) {
    const WeightMatrix w = WeightMatrix::from(random_weight(problem.k(), kappa, rng));
    const auto est = ll::phi_hat(problem, w, y);
    pts.push_back({est.theta, std::sqrt(est.var_theta), w.balanced().kappa(), PointSource::random});
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Sample-level audit

inline OptimizerSettings single_start() {
  OptimizerSettings opt;
  opt.multistart = 1;
  return opt;
}

struct AuditSettings {
  double kappa = 100.0;
  std::vector<double> tau{0.5};
  std::size_t n_draws = 400;   ///< random W_kappa draws for the attainable set
  std::size_t t_budget = 200;  ///< random W_kappa draws for the t-statistic search
  std::uint64_t seed = 0;
  OptimizerSettings optimizer = single_start();
  CovFlavor flavor = CovFlavor::conventional;
};

/// Efficient fit, J and the plug-in limit experiment (Gamma_hat, Sigma_hat, h_hat,
/// Y = sqrt(n) g_bar(psi_eff)) used to construct extremal weights.
struct AuditBaseline {
  JStatistic jstat;
  double theta_eff = 0.0;
  double se_eff = 0.0;
  double n = 0.0;
  bool has_plugin = false;
  Matrix gamma;
  Matrix sigma;
  Vector h;
  limit_lab::CanonicalForm canon;
  Vector z;             ///< M Y
  Vector sz_inv_z;      ///< Sigma*_Z^-1 Z
  double sigma_limit = 0.0;  ///< sqrt(h' Sigma*_phi h) = sqrt(n) se_eff at the plug-in
  double j_limit = 0.0;      ///< Z' Sigma*_Z^-1 Z
};

inline double point_se(const GmmFit& f, const MomentModel& model, const Dataset& data, CovFlavor flavor) {
  return flavor == CovFlavor::conventional ? conventional_cov(f).se_theta
                                           : robust_cov(f, model, data).se_theta;
}

inline AuditBaseline audit_baseline(const MomentModel& model, const Dataset& data,
                                    const AuditSettings& settings) {
  AuditBaseline b;
  OptimizerSettings eff_opt = settings.optimizer;
  eff_opt.multistart = std::max(eff_opt.multistart, 8);
  eff_opt.seed = mix_seed(settings.seed ^ 0xeffULL);
  b.jstat = j_statistic(model, data, eff_opt);
  const GmmFit& f = b.jstat.efficient_fit;
  b.theta_eff = f.theta_hat;
  b.se_eff = point_se(f, model, data, settings.flavor);
  b.n = static_cast<double>(data.rows());
  b.gamma = f.stats.gamma_hat;
  b.sigma = f.stats.sigma_hat;
  b.h = f.h;
  if (model.k > model.p) {
    try {
      b.canon = limit_lab::canonical_form(b.gamma, b.sigma);
      const Vector y = std::sqrt(b.n) * f.stats.g_bar;
      b.z = b.canon.m * y;
      b.sz_inv_z = linalg::solve_spd(b.canon.sigma_star_z, b.z, "Sigma*_Z");
      b.j_limit = b.z.dot(b.sz_inv_z);
      b.sigma_limit = std::sqrt(std::max(0.0, b.h.dot(b.canon.sigma_star_phi * b.h)));
      b.has_plugin = b.j_limit > 0.0 && b.sigma_limit > 0.0;
    } catch (const Error&) {
      b.has_plugin = false;  // singular plug-in: random search only
    }
  }
  return b;
}

namespace detail {

struct CandidateWeight {
  WeightMatrix weight;
  PointSource source;
};

/// Plug-in weight realising v = scale * Sigma*_Z^-1 Z, balanced; empty if outside W_kappa.
inline std::optional<WeightMatrix> plugin_weight(const AuditBaseline& b, double scale, double kappa) {
  try {
    const Vector q = limit_lab::direction_for_v(b.canon, b.h, scale * b.sz_inv_z);
    const WeightMatrix w = limit_lab::weight_for_direction(b.gamma, b.h, q).balanced();
    if (w.kappa() > kappa * (1.0 + 1e-9)) return std::nullopt;
    return w;
  } catch (const Error&) {
    return std::nullopt;
  }
}

/// The v-scale placing the plug-in estimate at cost level tau: tau sigma / sqrt(J).
inline double tau_scale(const AuditBaseline& b, double tau) {
  return tau * b.sigma_limit / std::sqrt(b.j_limit);
}

inline void add_extremal(std::vector<CandidateWeight>& out, const AuditBaseline& b, double tau,
                         double kappa, const std::vector<double>& ladder, PointSource src) {
  if (!b.has_plugin) return;
  for (double frac : ladder) {
    for (double sign : {-1.0, 1.0}) {
      if (auto w = plugin_weight(b, sign * frac * tau_scale(b, tau), kappa)) out.push_back({*w, src});
    }
  }
}

inline void add_anchor_weights(std::vector<CandidateWeight>& out, const AuditBaseline& b,
                               Index k, double kappa) {
  const WeightMatrix eff = b.jstat.efficient_fit.weight.balanced();
  if (eff.kappa() <= kappa * (1.0 + 1e-9)) out.push_back({eff, PointSource::efficient});
  out.push_back({WeightMatrix::identity(k), PointSource::identity});
}

inline void add_random(std::vector<CandidateWeight>& out, Index k, double kappa, std::size_t count,
                       std::uint64_t seed) {
  if (kappa == 1.0) return;  // W_1 = {I}
  std::mt19937_64 rng(mix_seed(seed));
  for (std::size_t i = 0; i < count; ++i)
    out.push_back({WeightMatrix::from(random_weight(k, kappa, rng)), PointSource::random});
}

struct Evaluated {
  std::vector<EstimatePoint> points;
  std::vector<std::size_t> candidate_index;  ///< points[i] came from candidates[candidate_index[i]]
  std::size_t failures = 0;
};

inline Evaluated evaluate_weights(const MomentModel& model, const Dataset& data,
                                  const std::vector<CandidateWeight>& candidates,
                                  const AuditBaseline& b, const AuditSettings& settings) {
  std::vector<std::optional<EstimatePoint>> slot(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t i) {
    OptimizerSettings opt = settings.optimizer;
    opt.init = b.jstat.efficient_fit.psi_hat;
    opt.seed = sub_seed(settings.seed, i);
    try {
      const GmmFit f = fit(model, data, fixed_weight_strategy(candidates[i].weight, opt));
      const double se = point_se(f, model, data, settings.flavor);
      if (std::isfinite(f.theta_hat) && se > 0.0 && std::isfinite(se))
        slot[i] = EstimatePoint{f.theta_hat, se, candidates[i].weight.kappa(), candidates[i].source};
    } catch (const Error&) {
    }
  });
  Evaluated out;
  for (std::size_t i = 0; i < slot.size(); ++i) {
    if (slot[i]) {
      out.points.push_back(*slot[i]);
      out.candidate_index.push_back(i);
    } else {
      ++out.failures;
    }
  }
  return out;
}

}  // namespace detail

struct AttainablePoint {
  EstimatePoint estimate;
  bool accepted = false;  ///< se^2 <= (1 + tau^2) se_eff^2
};

struct AttainableSample {
  double theta_eff = 0.0;
  double se_eff = 0.0;
  double j = 0.0;
  double tau = 0.0;
  double kappa = 1.0;
  std::vector<AttainablePoint> points;
  std::size_t failures = 0;

  /// Hull of the accepted estimates; empty when nothing was accepted.
  [[nodiscard]] std::optional<Interval> accepted_hull() const {
    std::optional<Interval> hull;
    for (const auto& p : points) {
      if (!p.accepted) continue;
      if (!hull) hull = Interval{p.estimate.theta, p.estimate.theta};
      hull->lo = std::min(hull->lo, p.estimate.theta);
      hull->hi = std::max(hull->hi, p.estimate.theta);
    }
    return hull;
  }
};

inline bool accepts(double se, double se_eff, double tau) {
  return se * se <= (1.0 + tau * tau) * se_eff * se_eff;
}

namespace detail {

inline AttainableSample attainable_from(const AuditBaseline& b, const std::vector<EstimatePoint>& pts,
                                        std::size_t failures, double kappa, double tau) {
  AttainableSample s;
  s.theta_eff = b.theta_eff;
  s.se_eff = b.se_eff;
  s.j = b.jstat.j;
  s.tau = tau;
  s.kappa = kappa;
  s.failures = failures;
  for (const auto& p : pts) s.points.push_back({p, accepts(p.se, b.se_eff, tau)});
  return s;
}

}  // namespace detail

/// Estimates attainable over W_kappa: random draws plus constructed extremal weights,
/// each flagged by the standard-error cost filter.
inline AttainableSample sample_attainable(const MomentModel& model, const Dataset& data, double kappa,
                                          double tau, std::size_t n_draws, std::uint64_t seed,
                                          AuditSettings settings = {}) {
  if (!(kappa >= 1.0)) throw ConfigError("kappa must be >= 1");
  if (n_draws < 1) throw ConfigError("n_draws must be >= 1");
  settings.kappa = kappa;
  settings.seed = seed;
  const AuditBaseline b = audit_baseline(model, data, settings);
  std::vector<detail::CandidateWeight> cands;
  if (kappa == 1.0) {
    cands.push_back({WeightMatrix::identity(model.k), PointSource::identity});
  } else {
    detail::add_anchor_weights(cands, b, model.k, kappa);
    detail::add_extremal(cands, b, tau, kappa, extremal_ladder(), PointSource::extremal);
    detail::add_random(cands, model.k, kappa, n_draws, sub_seed(seed, 1));
  }
  const auto ev = detail::evaluate_weights(model, data, cands, b, settings);
  return detail::attainable_from(b, ev.points, ev.failures, kappa, tau);
}

struct AdversarialT {
  double sup_abs_t = 0.0;
  WeightMatrix weight;  ///< argmax
  double theta = 0.0;
  double se = 0.0;
  std::size_t evaluated = 0;
  std::size_t failures = 0;
};

/// Largest |t_W(theta0)| found over constructed weights plus `budget` random draws
/// from W_kappa (a lower bound for the supremum).
inline AdversarialT adversarial_t(const MomentModel& model, const Dataset& data, double theta0,
                                  double kappa, std::size_t budget, std::uint64_t seed,
                                  AuditSettings settings = {}) {
  if (budget < 1) throw ConfigError("budget must be >= 1");
  settings.kappa = kappa;
  settings.seed = seed;
  const AuditBaseline b = audit_baseline(model, data, settings);
  std::vector<detail::CandidateWeight> cands;
  detail::add_anchor_weights(cands, b, model.k, kappa);
  for (double tau : t_search_taus())
    detail::add_extremal(cands, b, tau, kappa, {1.0}, PointSource::t_search);
  if (b.has_plugin) {
    // optimal ray for this null: v = (sigma^2 / d) Sigma*_Z^-1 Z with d = sqrt(n)(theta_eff - theta0)
    const double d = std::sqrt(b.n) * (b.theta_eff - theta0);
    if (d != 0.0)
      if (auto w = detail::plugin_weight(b, b.sigma_limit * b.sigma_limit / d, kappa))
        cands.push_back({*w, PointSource::t_search});
  }
  detail::add_random(cands, model.k, kappa, budget, sub_seed(seed, 2));
  const auto ev = detail::evaluate_weights(model, data, cands, b, settings);
  if (ev.points.empty()) throw Error("adversarial_t: no weight produced a usable fit");
  const auto best = sup_abs_t(ev.points, theta0);
  AdversarialT out;
  out.sup_abs_t = best.value;
  out.weight = cands[ev.candidate_index[best.index]].weight;
  out.theta = ev.points[best.index].theta;
  out.se = ev.points[best.index].se;
  out.evaluated = ev.points.size();
  out.failures = ev.failures;
  return out;
}

/// min over theta0 of the max |t| on a cached weight set (constructed + random).
inline MinMaxT min_max_t(const MomentModel& model, const Dataset& data, double kappa, std::size_t budget,
                         std::uint64_t seed, AuditSettings settings = {}) {
  settings.kappa = kappa;
  settings.seed = seed;
  const AuditBaseline b = audit_baseline(model, data, settings);
  std::vector<detail::CandidateWeight> cands;
  detail::add_anchor_weights(cands, b, model.k, kappa);
  for (double tau : t_search_taus())
    detail::add_extremal(cands, b, tau, kappa, {1.0}, PointSource::t_search);
  detail::add_random(cands, model.k, kappa, budget, sub_seed(seed, 2));
  const auto ev = detail::evaluate_weights(model, data, cands, b, settings);
  if (ev.points.empty()) throw Error("min_max_t: no weight produced a usable fit");
  return min_max_t(ev.points);
}

struct TauBlock {
  double tau = 0.0;
  Interval interval;              ///< theta_eff +- tau sqrt(J) se_eff
  std::optional<Interval> hull;   ///< hull of accepted sampled estimates
  std::size_t accepted = 0;
  double hausdorff = std::numeric_limits<double>::quiet_NaN();  ///< d_H(hull, interval)
};

struct AuditReport {
  double j_stat = 0.0;
  Index df = 0;
  double theta_eff = 0.0;
  double se_eff = 0.0;
  double kappa = 1.0;
  CovFlavor flavor = CovFlavor::conventional;
  std::vector<TauBlock> taus;
  std::vector<EstimatePoint> sampled_points;
  std::size_t failures = 0;
  double minmax_t = 0.0;
  double theta0_star = 0.0;
  double cs_critical = 0.0;
  double cs_point = 0.0;
  double sup_t_at_eff = 0.0;  ///< max |t_W(theta_eff)| over the sampled weights
};

/// Full sample-level audit over one shared weight cache, reusing a baseline
/// computed by audit_baseline with the same settings.
inline AuditReport audit(const MomentModel& model, const Dataset& data, const AuditSettings& settings,
                         const AuditBaseline& b) {
  if (!(settings.kappa >= 1.0)) throw ConfigError("kappa must be >= 1");
  for (double t : settings.tau)
    if (!(t >= 0.0)) throw ConfigError("tau values must be >= 0");
  std::vector<detail::CandidateWeight> cands;
  if (settings.kappa == 1.0) {
    cands.push_back({WeightMatrix::identity(model.k), PointSource::identity});
  } else {
    detail::add_anchor_weights(cands, b, model.k, settings.kappa);
    for (double tau : settings.tau)
      detail::add_extremal(cands, b, tau, settings.kappa, extremal_ladder(), PointSource::extremal);
    for (double tau : t_search_taus())
      detail::add_extremal(cands, b, tau, settings.kappa, {1.0}, PointSource::t_search);
    detail::add_random(cands, model.k, settings.kappa, settings.n_draws + settings.t_budget,
                       sub_seed(settings.seed, 1));
  }
  const auto ev = detail::evaluate_weights(model, data, cands, b, settings);

  AuditReport r;
  r.j_stat = b.jstat.j;
  r.df = b.jstat.df;
  r.theta_eff = b.theta_eff;
  r.se_eff = b.se_eff;
  r.kappa = settings.kappa;
  r.flavor = settings.flavor;
  r.sampled_points = ev.points;
  r.failures = ev.failures;
  for (double tau : settings.tau) {
    const auto s = detail::attainable_from(b, ev.points, ev.failures, settings.kappa, tau);
    TauBlock blk;
    blk.tau = tau;
    blk.interval = attainable_interval(b.theta_eff, b.se_eff, b.jstat.j, tau);
    blk.hull = s.accepted_hull();
    for (const auto& p : s.points) blk.accepted += p.accepted ? 1U : 0U;
    if (blk.hull) blk.hausdorff = hausdorff(*blk.hull, blk.interval);
    r.taus.push_back(blk);
  }
  if (!ev.points.empty()) {
    const auto mm = min_max_t(ev.points);
    r.minmax_t = mm.value;
    r.theta0_star = mm.theta0_star;
    const auto cs = cs_intersection(ev.points);
    r.cs_critical = cs.c_star;
    r.cs_point = cs.point;
    r.sup_t_at_eff = sup_abs_t(ev.points, b.theta_eff).value;
  }
  return r;
}

inline AuditReport audit(const MomentModel& model, const Dataset& data, const AuditSettings& settings) {
  return audit(model, data, settings, audit_baseline(model, data, settings));
}

}  // namespace gmm_audit
