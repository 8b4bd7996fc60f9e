#pragma once

#include "gmm_audit/moment_core.hpp"
#include "gmm_audit/parallel.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace gmm_audit {

struct OptimizerSettings {
  int multistart = 8;
  int max_iterations = 200;
  double gradient_tolerance = 1e-10;
  double step_tolerance = 1e-12;
  std::uint64_t seed = 0;
  /// Half-width of the start box for coordinates without finite bounds.
  double default_box = 10.0;
  std::optional<Vector> init;
};

struct MinimizeResult {
  Vector psi;
  double criterion = 0.0;  ///< n * g_bar' W g_bar
  bool converged = false;
  double gradient_norm = 0.0;
  int iterations = 0;
  std::size_t best_start = 0;
  int starts = 0;
  int starts_converged = 0;
};

namespace detail {

struct RunResult {
  Vector psi;
  double criterion = std::numeric_limits<double>::infinity();
  double gradient_norm = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
};

struct CriterionState {
  Vector psi;
  Vector g_bar;
  Matrix gamma;
  double criterion = 0.0;
};

inline CriterionState evaluate_state(const MomentModel& model, const Dataset& data,
                                     const Matrix& w, Vector psi, bool with_jacobian) {
  CriterionState s;
  s.psi = std::move(psi);
  if (with_jacobian) {
    auto mj = mean_and_jacobian(model, data, s.psi);
    s.g_bar = std::move(mj.g_bar);
    s.gamma = std::move(mj.gamma);
  } else {
    s.g_bar = mean_moments(model, data, s.psi);
  }
  s.criterion = static_cast<double>(data.rows()) * s.g_bar.dot(w * s.g_bar);
  return s;
}

/// Solves (A + mu I) delta = -b, raising mu until the system is well conditioned.
inline std::optional<Vector> damped_step(const Matrix& a, const Vector& b) {
  const double scale = std::max(a.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  double mu = 0.0;
  for (int attempt = 0; attempt < 24; ++attempt) {
    Matrix damped = a;
    damped.diagonal().array() += mu;
    const auto range = linalg::eigen_range(damped);
    if (range.min > 0.0 && range.condition() <= 1e12) {
      Vector step = -Eigen::LDLT<Matrix>(damped).solve(b);
      if (step.allFinite()) return step;
    }
    mu = (mu == 0.0) ? 1e-10 * scale : mu * 10.0;
  }
  return std::nullopt;
}

/// Damped Gauss-Newton with Armijo backtracking on  Q(psi) = n g_bar' W g_bar.
inline RunResult gauss_newton(const MomentModel& model, const Dataset& data, const Matrix& w,
                              const Vector& start, const OptimizerSettings& settings) {
  const double n = static_cast<double>(data.rows());
  const bool cheap_jacobian = model.has_jacobian();
  // tolerance floor that scales with W, so convergence is invariant to rescaling the weight
  const double w_scale = std::max(w.cwiseAbs().maxCoeff(), 1e-300);
  RunResult r;
  CriterionState s = evaluate_state(model, data, w, model.project(start), true);

  for (int it = 0; it < settings.max_iterations; ++it) {
    r.iterations = it;
    const Vector wg = w * s.g_bar;
    const Vector grad = 2.0 * n * s.gamma.transpose() * wg;
    r.gradient_norm = grad.norm();
    if (r.gradient_norm <= settings.gradient_tolerance * std::max(w_scale, s.criterion)) {
      r.converged = true;
      break;
    }
    const Matrix a = s.gamma.transpose() * w * s.gamma;
    const Vector b = s.gamma.transpose() * wg;

    std::vector<Vector> directions;
    if (auto gn = damped_step(a, b)) directions.push_back(*gn);
    // steepest descent, scaled so a unit step is the Cauchy step of the GN model
    const double curvature = grad.dot(a * grad);
    if (curvature > 0.0) directions.push_back(-(grad.squaredNorm() / (2.0 * n * curvature)) * grad);

    bool accepted = false;
    bool stalled = false;
    for (const Vector& dir : directions) {
      const double slope = grad.dot(dir);
      if (!(slope < 0.0)) continue;
      if (std::abs(slope) <= 1e-14 * std::max(w_scale, s.criterion)) {
        stalled = true;
        continue;
      }
      double t = 1.0;
      for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
        Vector cand = model.project(s.psi + t * dir);
        CriterionState c;
        try {
          c = evaluate_state(model, data, w, std::move(cand), cheap_jacobian);
        } catch (const EvaluationError&) {
          continue;
        }
        if (!std::isfinite(c.criterion)) continue;
        if (c.criterion <= s.criterion + 1e-4 * t * slope) {
          if (!cheap_jacobian) c = evaluate_state(model, data, w, c.psi, true);
          const double moved = (c.psi - s.psi).norm();
          s = std::move(c);
          accepted = true;
          if (moved <= settings.step_tolerance * (1.0 + s.psi.norm())) {
            r.converged = true;
          }
          break;
        }
      }
      if (accepted) break;
    }
    if (r.converged) {
      r.iterations = it + 1;
      break;
    }
    if (!accepted) {
      // No descent available at working precision: the iterate is a numerical
      // stationary point if the predicted decrease is at the rounding floor.
      r.converged = stalled;
      break;
    }
    r.iterations = it + 1;
  }
  const Vector grad = 2.0 * n * s.gamma.transpose() * (w * s.g_bar);
  r.gradient_norm = grad.norm();
  r.psi = s.psi;
  r.criterion = s.criterion;
  return r;
}

/// Start points: the user init (if any) followed by a Latin-hypercube design.
inline std::vector<Vector> start_points(const MomentModel& model, const OptimizerSettings& settings) {
  std::vector<Vector> starts;
  const int m = std::max(1, settings.multistart);
  if (settings.init) starts.push_back(model.project(*settings.init));
  const int draws = m - static_cast<int>(starts.size());
  if (draws <= 0) return starts;
  std::mt19937_64 rng(mix_seed(settings.seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vector> design(static_cast<std::size_t>(draws), Vector(model.p));
  for (Index j = 0; j < model.p; ++j) {
    double lo = -settings.default_box, hi = settings.default_box;
    if (!model.param_bounds.empty()) {
      const Bound& b = model.param_bounds[static_cast<std::size_t>(j)];
      if (std::isfinite(b.lo)) lo = b.lo;
      if (std::isfinite(b.hi)) hi = b.hi;
      if (std::isfinite(b.lo) && !std::isfinite(b.hi)) hi = lo + 2.0 * settings.default_box;
      if (!std::isfinite(b.lo) && std::isfinite(b.hi)) lo = hi - 2.0 * settings.default_box;
    }
    std::vector<int> strata(static_cast<std::size_t>(draws));
    std::iota(strata.begin(), strata.end(), 0);
    std::shuffle(strata.begin(), strata.end(), rng);
    for (int i = 0; i < draws; ++i) {
      const double u = (strata[static_cast<std::size_t>(i)] + unit(rng)) / draws;
      design[static_cast<std::size_t>(i)](j) = lo + u * (hi - lo);
    }
  }
  starts.insert(starts.end(), design.begin(), design.end());
  return starts;
}

}  // namespace detail

/// Minimises psi -> n g_bar(psi)' W g_bar(psi) from every start point and returns
/// the best converged run, ties broken by start index.
inline MinimizeResult minimize_criterion(const MomentModel& model, const Dataset& data,
                                         const WeightMatrix& w,
                                         const OptimizerSettings& settings = {}) {
  model.validate();
  if (w.size() != model.k)
    throw ConfigError("weighting matrix is " + std::to_string(w.size()) + "x" +
                      std::to_string(w.size()) + ", model has k=" + std::to_string(model.k));
  if (settings.init) {
    if (settings.init->size() != model.p) throw ConfigError("initial value has the wrong length");
    if (!model.within_bounds(*settings.init))
      throw ConfigError("initial value outside parameter bounds");
  }
  const auto starts = detail::start_points(model, settings);
  MinimizeResult out;
  out.starts = static_cast<int>(starts.size());
  std::optional<detail::RunResult> best;
  detail::RunResult best_any;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    detail::RunResult r;
    try {
      r = detail::gauss_newton(model, data, w.values(), starts[i], settings);
    } catch (const EvaluationError&) {
      if (starts.size() == 1) throw;
      continue;
    }
    if (r.criterion < best_any.criterion || best_any.psi.size() == 0) best_any = r;
    if (!r.converged) continue;
    ++out.starts_converged;
    if (!best || r.criterion < best->criterion) {
      best = r;
      out.best_start = i;
    }
  }
  if (!best) {
    throw NonConvergenceError("GMM criterion minimisation did not converge from any of " +
                                  std::to_string(starts.size()) + " starts",
                              best_any.psi, best_any.criterion);
  }
  out.psi = best->psi;
  out.criterion = best->criterion;
  out.converged = true;
  out.gradient_norm = best->gradient_norm;
  out.iterations = best->iterations;
  return out;
}

/// psi_hat = (B'WB)^{-1} B'W A, the minimiser for moments linear in psi,
/// g_bar(psi) = A - B psi.
inline Vector closed_form_linear(const Vector& a, const Matrix& b, const WeightMatrix& w) {
  if (b.rows() != a.size() || w.size() != a.size())
    throw ConfigError("closed_form_linear: dimension mismatch");
  const Matrix bw = b.transpose() * w.values();
  return linalg::solve_spd(bw * b, bw * a, "B'WB");
}

// ---------------------------------------------------------------------------
// Strategies

struct FixedWeight {
  WeightMatrix weight;
};
struct TwoStep {
  std::optional<WeightMatrix> first_step;  ///< identity when empty
};
struct Iterated {
  int max_rounds = 50;
  double tol = 1e-10;
};
struct DiagInverse {};
struct IdentityScaled {
  Vector scale;
};

using StrategyKind = std::variant<FixedWeight, TwoStep, Iterated, DiagInverse, IdentityScaled>;

struct FitStrategy {
  StrategyKind kind = TwoStep{};
  OptimizerSettings optimizer;

  [[nodiscard]] std::string name() const {
    return std::visit(
        [](const auto& k) -> std::string {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, FixedWeight>) return "fixed_weight";
          if constexpr (std::is_same_v<T, TwoStep>) return "two_step";
          if constexpr (std::is_same_v<T, Iterated>) return "iterated";
          if constexpr (std::is_same_v<T, DiagInverse>) return "diag_inverse";
          if constexpr (std::is_same_v<T, IdentityScaled>) return "identity_scaled";
        },
        kind);
  }
};

struct FitDiagnostics {
  bool converged = false;
  double gradient_norm = 0.0;
  int iterations = 0;  ///< optimizer iterations in the final round
  int rounds = 0;      ///< weight-update rounds (1 for single minimisation)
  bool rounds_converged = true;  ///< iterated GMM reached its tolerance
  bool ridge_repaired = false;   ///< a singular covariance was ridge-repaired
  int starts_converged = 0;
};

struct GmmFit {
  Vector psi_hat;
  double theta_hat = 0.0;
  WeightMatrix weight;  ///< weight used in the final round
  MomentStats stats;    ///< at psi_hat
  double criterion = 0.0;  ///< n g_bar' W g_bar at psi_hat
  Vector h;                ///< gradient of vartheta at psi_hat
  std::string strategy;
  FitDiagnostics diagnostics;

  [[nodiscard]] Index n() const { return stats.n; }
};

namespace detail {

inline GmmFit finish_fit(const MomentModel& model, const Dataset& data, const WeightMatrix& w,
                         const MinimizeResult& r, std::string strategy) {
  GmmFit f;
  f.psi_hat = r.psi;
  f.theta_hat = model.theta(r.psi);
  f.weight = w;
  f.stats = moment_stats(model, data, r.psi);
  f.criterion = r.criterion;
  f.h = model.theta_gradient(r.psi);
  f.strategy = std::move(strategy);
  f.diagnostics.converged = r.converged;
  f.diagnostics.gradient_norm = r.gradient_norm;
  f.diagnostics.iterations = r.iterations;
  f.diagnostics.rounds = 1;
  f.diagnostics.starts_converged = r.starts_converged;
  return f;
}

inline WeightMatrix efficient_weight(const Matrix& sigma, bool& repaired) {
  const auto inv = linalg::ridge_inverse(sigma);
  repaired = repaired || inv.repaired;
  return WeightMatrix::from(inv.inverse);
}

}  // namespace detail

inline GmmFit fit(const MomentModel& model, const Dataset& data, const FitStrategy& strategy) {
  model.validate();
  const auto& opt = strategy.optimizer;
  const std::string name = strategy.name();

  auto run = [&](const WeightMatrix& w, const std::optional<Vector>& init) {
    OptimizerSettings s = opt;
    if (init) s.init = init;
    return minimize_criterion(model, data, w, s);
  };

  return std::visit(
      [&](const auto& kind) -> GmmFit {
        using T = std::decay_t<decltype(kind)>;
        if constexpr (std::is_same_v<T, FixedWeight>) {
          return detail::finish_fit(model, data, kind.weight, run(kind.weight, std::nullopt), name);
        } else if constexpr (std::is_same_v<T, IdentityScaled>) {
          if (kind.scale.size() != model.k || !(kind.scale.array() > 0.0).all())
            throw ConfigError("identity_scaled needs k strictly positive scale entries");
          const WeightMatrix w =
              WeightMatrix::from(Matrix(kind.scale.array().square().matrix().asDiagonal()));
          return detail::finish_fit(model, data, w, run(w, std::nullopt), name);
        } else if constexpr (std::is_same_v<T, DiagInverse>) {
          const WeightMatrix id = WeightMatrix::identity(model.k);
          const auto first = run(id, std::nullopt);
          const Matrix sigma = moment_stats(model, data, first.psi).sigma_hat;
          Vector d = sigma.diagonal();
          bool repaired = false;
          if (!(d.array() > 0.0).all() ||
              d.maxCoeff() / std::max(d.minCoeff(), 1e-300) > 1e12) {
            repaired = true;
            d.array() += 1e-10 * std::max(d.sum(), 1.0) / static_cast<double>(model.k);
          }
          const WeightMatrix w = WeightMatrix::from(Matrix(d.cwiseInverse().asDiagonal()));
          auto f = detail::finish_fit(model, data, w, run(w, first.psi), name);
          f.diagnostics.rounds = 2;
          f.diagnostics.ridge_repaired = repaired;
          return f;
        } else if constexpr (std::is_same_v<T, TwoStep>) {
          const WeightMatrix w1 = kind.first_step ? *kind.first_step : WeightMatrix::identity(model.k);
          if (w1.size() != model.k) throw ConfigError("first-step weight has the wrong size");
          const auto first = run(w1, std::nullopt);
          bool repaired = false;
          const WeightMatrix w2 =
              detail::efficient_weight(moment_stats(model, data, first.psi).sigma_hat, repaired);
          auto f = detail::finish_fit(model, data, w2, run(w2, first.psi), name);
          f.diagnostics.rounds = 2;
          f.diagnostics.ridge_repaired = repaired;
          return f;
        } else {
          static_assert(std::is_same_v<T, Iterated>);
          if (kind.max_rounds < 1) throw ConfigError("iterated GMM needs max_rounds >= 1");
          WeightMatrix w = WeightMatrix::identity(model.k);
          MinimizeResult r = run(w, std::nullopt);
          bool repaired = false;
          int rounds = 1;
          bool settled = kind.max_rounds == 1;
          while (rounds < kind.max_rounds) {
            w = detail::efficient_weight(moment_stats(model, data, r.psi).sigma_hat, repaired);
            MinimizeResult next = run(w, r.psi);
            ++rounds;
            const double change = (next.psi - r.psi).norm();
            r = std::move(next);
            if (change <= kind.tol) {
              settled = true;
              break;
            }
          }
          auto f = detail::finish_fit(model, data, w, r, name);
          f.diagnostics.rounds = rounds;
          f.diagnostics.rounds_converged = settled;
          f.diagnostics.ridge_repaired = repaired;
          return f;
        }
      },
      strategy.kind);
}

inline FitStrategy fixed_weight_strategy(const WeightMatrix& w, OptimizerSettings opt = {}) {
  return FitStrategy{FixedWeight{w}, std::move(opt)};
}

inline FitStrategy two_step_strategy(OptimizerSettings opt = {}) {
  return FitStrategy{TwoStep{}, std::move(opt)};
}

}  // namespace gmm_audit
