#pragma once

// Simulation harness: data-generating processes with fixed or local (eta / sqrt(n))
// misspecification, a large-population oracle for pseudo-true values, and the
// replication loops behind the coverage and convergence experiments.

#include "gmm_audit/estimation.hpp"
#include "gmm_audit/inference.hpp"
#include "gmm_audit/parallel.hpp"
#include "gmm_audit/weight_audit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace gmm_audit::mc {

/// y = w beta + e + z'eta / sqrt(n),  w = z'pi + v,  z ~ N(0, I_k),
/// (e, v) standard normal with correlation rho. E[z (y - w beta)] = eta / sqrt(n).
struct LinearIvDgp {
  Vector pi;    ///< first-stage coefficients, length k
  double beta = 1.0;
  double rho = 0.5;
  Vector eta;   ///< local drift, length k (zero: correct specification)

  [[nodiscard]] Index k() const { return pi.size(); }

  [[nodiscard]] std::vector<std::string> columns() const {
    std::vector<std::string> names{"y", "w"};
    for (Index l = 0; l < k(); ++l) names.push_back("z" + std::to_string(l + 1));
    return names;
  }

  [[nodiscard]] MomentModel model() const {
    const auto names = columns();
    return builtin_model("linear_iv",
                         {{"y", {"y"}}, {"w", {"w"}}, {"z", {names.begin() + 2, names.end()}}}, names);
  }

  [[nodiscard]] Dataset simulate(Index n, std::uint64_t seed) const {
    const Index k = this->k();
    if (eta.size() != 0 && eta.size() != k) throw ConfigError("eta must have one entry per instrument");
    std::mt19937_64 rng(mix_seed(seed));
    std::normal_distribution<double> nd;
    RowMatrix x(n, 2 + k);
    const double drift_scale = 1.0 / std::sqrt(static_cast<double>(n));
    const double rho_c = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    for (Index i = 0; i < n; ++i) {
      double zpi = 0.0, zeta = 0.0;
      for (Index l = 0; l < k; ++l) {
        const double z = nd(rng);
        x(i, 2 + l) = z;
        zpi += z * pi(l);
        if (eta.size() != 0) zeta += z * eta(l);
      }
      const double v = nd(rng);
      const double e = rho * v + rho_c * nd(rng);
      const double w = zpi + v;
      x(i, 0) = w * beta + e + zeta * drift_scale;
      x(i, 1) = w;
    }
    return Dataset(std::move(x), columns());
  }
};

/// x ~ N(mu, sd^2) fitted by mean_square_match; misspecified unless sd = 0, so the
/// estimand depends on the weighting matrix.
struct MeanSquareDgp {
  double mu = 0.27;
  double sd = 0.64;

  [[nodiscard]] MomentModel model() const { return builtin_model("mean_square_match", {{"x", {"x"}}}, {"x"}); }

  [[nodiscard]] Dataset simulate(Index n, std::uint64_t seed) const {
    std::mt19937_64 rng(mix_seed(seed));
    std::normal_distribution<double> nd(mu, sd);
    RowMatrix x(n, 1);
    for (Index i = 0; i < n; ++i) x(i, 0) = nd(rng);
    return Dataset(std::move(x), {"x"});
  }
};

/// Pseudo-true theta under a fixed weight: minimise the criterion on one large
/// simulated population (default 10^6 rows).
template <class Dgp>
double pseudo_true(const Dgp& dgp, const WeightMatrix& w, std::uint64_t seed, Index population = 1'000'000,
                   std::optional<Vector> init = std::nullopt) {
  const Dataset pop = dgp.simulate(population, seed);
  const MomentModel model = dgp.model();
  OptimizerSettings opt;
  opt.seed = seed;
  opt.init = std::move(init);
  const GmmFit f = fit(model, pop, fixed_weight_strategy(w, opt));
  return f.theta_hat;
}

inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  return sorted_quantile(values, q);
}

inline double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

inline double mean(const std::vector<double>& values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

inline constexpr double z975 = 1.959963984540054;

// ---------------------------------------------------------------------------
// J under correct specification

struct JDistribution {
  std::vector<double> j;
  Index df = 0;
  std::size_t failures = 0;
  [[nodiscard]] double mean() const { return mc::mean(j); }
  [[nodiscard]] double quantile(double q) const { return mc::quantile(j, q); }
};

inline JDistribution j_distribution(const LinearIvDgp& dgp, Index n, std::size_t reps, std::uint64_t seed) {
  const MomentModel model = dgp.model();
  std::vector<std::optional<double>> slot(reps);
  parallel_for(reps, [&](std::size_t r) {
    const Dataset data = dgp.simulate(n, sub_seed(seed, r));
    OptimizerSettings opt;
    opt.multistart = 1;
    opt.init = Vector::Constant(model.p, dgp.beta);
    opt.seed = sub_seed(seed ^ 0x5eedULL, r);
    try {
      slot[r] = j_statistic(model, data, opt).j;
    } catch (const Error&) {
    }
  });
  JDistribution out;
  out.df = model.k - model.p;
  for (const auto& v : slot) {
    if (v) out.j.push_back(*v);
    else ++out.failures;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Coverage under fixed misspecification

struct CoverageRow {
  std::size_t rep = 0;
  double theta = 0.0;
  double se_conventional = 0.0;
  double se_robust = 0.0;
  bool covers_conventional = false;
  bool covers_robust = false;
};

struct CoverageSummary {
  double theta_star = 0.0;
  std::vector<CoverageRow> rows;
  std::size_t failures = 0;
  [[nodiscard]] double robust() const {
    return static_cast<double>(std::count_if(rows.begin(), rows.end(), [](auto& r) { return r.covers_robust; })) /
           static_cast<double>(rows.size());
  }
  [[nodiscard]] double conventional() const {
    return static_cast<double>(
               std::count_if(rows.begin(), rows.end(), [](auto& r) { return r.covers_conventional; })) /
           static_cast<double>(rows.size());
  }
};

/// Fixed-weight fits on replicated samples; 95% Wald intervals with both
/// standard-error flavors, scored against theta_star.
template <class Dgp>
CoverageSummary wald_coverage(const Dgp& dgp, const WeightMatrix& w, double theta_star, Index n, std::size_t reps,
                              std::uint64_t seed) {
  const MomentModel model = dgp.model();
  std::vector<std::optional<CoverageRow>> slot(reps);
  parallel_for(reps, [&](std::size_t r) {
    const Dataset data = dgp.simulate(n, sub_seed(seed, r));
    OptimizerSettings opt;
    opt.multistart = 1;
    opt.init = Vector::Constant(model.p, theta_star);
    try {
      const GmmFit f = fit(model, data, fixed_weight_strategy(w, opt));
      CoverageRow row;
      row.rep = r;
      row.theta = f.theta_hat;
      row.se_conventional = conventional_cov(f).se_theta;
      row.se_robust = robust_cov(f, model, data).se_theta;
      row.covers_conventional = std::abs(f.theta_hat - theta_star) <= z975 * row.se_conventional;
      row.covers_robust = std::abs(f.theta_hat - theta_star) <= z975 * row.se_robust;
      slot[r] = row;
    } catch (const Error&) {
    }
  });
  CoverageSummary out;
  out.theta_star = theta_star;
  for (auto& s : slot) {
    if (s) out.rows.push_back(*s);
    else ++out.failures;
  }
  return out;
}

struct BootstrapCoverage {
  double theta_star = 0.0;
  std::size_t reps = 0;
  std::size_t plain_covers = 0;
  std::size_t recentered_covers = 0;
  std::size_t failures = 0;
  [[nodiscard]] double plain() const { return static_cast<double>(plain_covers) / static_cast<double>(reps); }
  [[nodiscard]] double recentered() const {
    return static_cast<double>(recentered_covers) / static_cast<double>(reps);
  }
};

/// Percentile-interval coverage of theta_star for the plain and recentered
/// nonparametric bootstraps on the same samples.
template <class Dgp>
BootstrapCoverage bootstrap_coverage(const Dgp& dgp, const WeightMatrix& w, double theta_star, Index n,
                                     std::size_t reps, std::size_t b, std::uint64_t seed) {
  const MomentModel model = dgp.model();
  struct Outcome {
    bool plain = false;
    bool recentered = false;
  };
  std::vector<std::optional<Outcome>> slot(reps);
  // replications run in parallel; each bootstrap runs serially inside its worker
  parallel_for(reps, [&](std::size_t r) {
    const Dataset data = dgp.simulate(n, sub_seed(seed, r));
    OptimizerSettings opt;
    opt.multistart = 1;
    opt.init = Vector::Constant(model.p, theta_star);
    const FitStrategy strategy = fixed_weight_strategy(w, opt);
    try {
      const GmmFit f = fit(model, data, strategy);
      Outcome o;
      for (auto scheme : {BootstrapScheme::plain, BootstrapScheme::recentered}) {
        BootstrapSettings bs;
        bs.replications = b;
        bs.scheme = scheme;
        bs.seed = sub_seed(seed ^ 0xb007ULL, r);
        const auto res = bootstrap(model, data, strategy, f, bs);
        const bool covers = res.ci_lo <= theta_star && theta_star <= res.ci_hi;
        (scheme == BootstrapScheme::plain ? o.plain : o.recentered) = covers;
      }
      slot[r] = o;
    } catch (const Error&) {
    }
  });
  BootstrapCoverage out;
  out.theta_star = theta_star;
  for (const auto& s : slot) {
    if (!s) {
      ++out.failures;
      continue;
    }
    ++out.reps;
    out.plain_covers += s->plain ? 1U : 0U;
    out.recentered_covers += s->recentered ? 1U : 0U;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Local misspecification: convergence of the sampled attainable set

struct LocalSettings {
  std::vector<Index> n_grid{500, 2000, 8000};
  std::size_t reps = 200;
  double kappa = 100.0;
  double tau = 0.5;
  std::size_t n_draws = 40;
  std::uint64_t seed = 0;
};

struct LocalRow {
  Index n = 0;
  std::size_t rep = 0;
  double j = 0.0;
  double theta_eff = 0.0;
  double se_eff = 0.0;
  double dh = std::numeric_limits<double>::quiet_NaN();  ///< d_H(sampled hull, interval)
  double scaled_dh = std::numeric_limits<double>::quiet_NaN();  ///< sqrt(n) d_H
  bool eff_covers = false;         ///< theta_eff +- 1.96 se_eff covers the true beta
  bool interval_covers = false;    ///< the attainable interval covers the true beta
  std::size_t accepted = 0;
  std::size_t failures = 0;
};

struct LocalSummaryRow {
  Index n = 0;
  std::size_t reps = 0;
  std::size_t failed = 0;
  double median_scaled_dh = 0.0;
  double mean_j = 0.0;
  double j_q90 = 0.0;
  double eff_coverage = 0.0;
};

struct LocalResult {
  std::vector<LocalRow> rows;
  std::vector<LocalSummaryRow> summary;
  [[nodiscard]] const LocalSummaryRow& at(Index n) const {
    for (const auto& s : summary)
      if (s.n == n) return s;
    throw ConfigError("no summary for n=" + std::to_string(n));
  }
};

inline LocalSummaryRow summarize_local(Index n, const std::vector<LocalRow>& rows, std::size_t failed) {
  LocalSummaryRow s;
  s.n = n;
  s.failed = failed;
  std::vector<double> dh, j;
  std::size_t covers = 0;
  for (const auto& r : rows) {
    if (r.n != n) continue;
    ++s.reps;
    j.push_back(r.j);
    if (std::isfinite(r.scaled_dh)) dh.push_back(r.scaled_dh);
    covers += r.eff_covers ? 1U : 0U;
  }
  s.median_scaled_dh = median(dh);
  s.mean_j = mean(j);
  s.j_q90 = quantile(j, 0.9);
  s.eff_coverage = s.reps ? static_cast<double>(covers) / static_cast<double>(s.reps) : 0.0;
  return s;
}

/// For each n: simulate, audit the attainable set over W_kappa at cost tau, and
/// record sqrt(n) d_H between the sampled hull and the interval.
inline LocalResult mc_local(const LinearIvDgp& dgp, const LocalSettings& settings) {
  if (settings.reps < 1) throw ConfigError("reps must be >= 1");
  if (!std::is_sorted(settings.n_grid.begin(), settings.n_grid.end()))
    throw ConfigError("n_grid must be ascending");
  const MomentModel model = dgp.model();
  LocalResult out;
  for (std::size_t gi = 0; gi < settings.n_grid.size(); ++gi) {
    const Index n = settings.n_grid[gi];
    std::vector<std::optional<LocalRow>> slot(settings.reps);
    const std::uint64_t n_seed = sub_seed(settings.seed, gi);
    parallel_for(settings.reps, [&](std::size_t r) {
      const Dataset data = dgp.simulate(n, sub_seed(n_seed, r));
      AuditSettings as;
      as.kappa = settings.kappa;
      as.tau = {settings.tau};
      as.n_draws = settings.n_draws;
      as.t_budget = 0;
      as.seed = sub_seed(n_seed ^ 0xa0d17ULL, r);
      as.optimizer.init = Vector::Constant(model.p, dgp.beta);
      try {
        const AttainableSample s = sample_attainable(model, data, as.kappa, settings.tau, as.n_draws, as.seed, as);
        LocalRow row;
        row.n = n;
        row.rep = r;
        row.j = s.j;
        row.theta_eff = s.theta_eff;
        row.se_eff = s.se_eff;
        row.failures = s.failures;
        const Interval target = attainable_interval(s.theta_eff, s.se_eff, s.j, settings.tau);
        for (const auto& p : s.points) row.accepted += p.accepted ? 1U : 0U;
        if (auto hull = s.accepted_hull()) {
          row.dh = hausdorff(*hull, target);
          row.scaled_dh = std::sqrt(static_cast<double>(n)) * row.dh;
        }
        row.eff_covers = std::abs(s.theta_eff - dgp.beta) <= z975 * s.se_eff;
        row.interval_covers = target.contains(dgp.beta);
        slot[r] = row;
      } catch (const Error&) {
      }
    });
    std::size_t failed = 0;
    for (auto& s : slot) {
      if (s) out.rows.push_back(*s);
      else ++failed;
    }
    if (static_cast<double>(failed) > 0.05 * static_cast<double>(settings.reps))
      throw Error("mc_local: " + std::to_string(failed) + " of " + std::to_string(settings.reps) +
                  " replications failed at n=" + std::to_string(n));
    out.summary.push_back(summarize_local(n, out.rows, failed));
  }
  return out;
}

inline std::string local_rows_csv(const LocalResult& result) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "n,rep,J,theta_eff,se_eff,dH,sqrt_n_dH,eff_covers,interval_covers,accepted,failures\n";
  for (const auto& r : result.rows) {
    os << r.n << ',' << r.rep << ',' << r.j << ',' << r.theta_eff << ',' << r.se_eff << ',' << r.dh << ','
       << r.scaled_dh << ',' << (r.eff_covers ? 1 : 0) << ',' << (r.interval_covers ? 1 : 0) << ','
       << r.accepted << ',' << r.failures << '\n';
  }
  return os.str();
}

inline std::string local_summary_csv(const LocalResult& result) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "n,reps,failed,median_sqrt_n_dH,mean_J,J_q90,eff_coverage\n";
  for (const auto& s : result.summary)
    os << s.n << ',' << s.reps << ',' << s.failed << ',' << s.median_scaled_dh << ',' << s.mean_j << ','
       << s.j_q90 << ',' << s.eff_coverage << '\n';
  return os.str();
}

}  // namespace gmm_audit::mc
