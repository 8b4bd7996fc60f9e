#pragma once

// The batch commands behind the gmm-audit executable.

#include "gmm_audit/cli/config.hpp"
#include "gmm_audit/cli/csv.hpp"
#include "gmm_audit/cli/report.hpp"
#include "gmm_audit/monte_carlo.hpp"
#include "gmm_audit/verification.hpp"
#include "gmm_audit/weight_audit.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace gmm_audit::cli {

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
};

struct RunOutcome {
  int exit_code = 0;
  std::filesystem::path output_dir;
  ojson report;
};

namespace detail {

// Stream indices for sub_seed(seed, .): one per independent consumer.
inline constexpr std::uint64_t audit_stream = 1;
inline constexpr std::uint64_t limit_stream = 2;
inline constexpr std::uint64_t strategy_stream = 100;
inline constexpr std::uint64_t bootstrap_stream = 200;

inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& from_config, const RunOptions& opts) {
  if (opts.seed) return *opts.seed;
  if (from_config) return *from_config;
  throw ConfigError("config field 'seed': is required (set it in the config or pass --seed)");
}

inline void write_outputs(const std::filesystem::path& dir, const ojson& report) {
  write_atomic(dir / "report.json", report.dump(2) + "\n");
  write_atomic(dir / "report.md", markdown(report));
}

inline ojson exact_block(const ExactExperiment& ex, std::uint64_t seed, const std::filesystem::path& dir) {
  namespace ll = limit_lab;
  const Vector y = ex.y ? *ex.y : ll::draw(ex.problem, sub_seed(seed, 0));
  const auto c = ll::canonical_form(ex.problem);
  const auto j = ll::j_analog(ex.problem, y);
  ojson intervals = ojson::array();
  double theta_eff = 0.0, sigma_eff = 0.0;
  for (double tau : ex.tau) {
    const auto iv = ll::exact_interval(ex.problem, y, tau);
    theta_eff = iv.theta_eff;
    sigma_eff = iv.sigma_eff;
    intervals.push_back(ojson{{"tau", tau},
                              {"interval", to_json(iv.interval)},
                              {"max_endpoint_error", number(iv.max_endpoint_error)},
                              {"lower_weight", to_json(iv.lower_weight.values())},
                              {"upper_weight", to_json(iv.upper_weight.values())}});
  }
  std::vector<double> taus = ll::corollary_taus();
  taus.insert(taus.end(), ex.tau.begin(), ex.tau.end());
  const auto pts = limit_points(ex.problem, y, taus, ex.n_random, ex.kappa, sub_seed(seed, 1));
  const auto mm = min_max_t(pts);
  const auto cs = cs_intersection(pts);
  write_atomic(dir / "limit_points.csv", points_csv(pts));
  return ojson{{"experiment", "exact"},
               {"k", ex.problem.k()},
               {"p", ex.problem.p()},
               {"y", to_json(y)},
               {"J", number(j.j)},
               {"J_via_canonical", number(j.via_canonical)},
               {"theta_eff", number(theta_eff)},
               {"sigma_eff", number(sigma_eff)},
               {"sigma_star_z", to_json(c.sigma_star_z)},
               {"intervals", intervals},
               {"weights_evaluated", pts.size()},
               {"minmax_t", ojson{{"value", number(mm.value)}, {"theta0_star", number(mm.theta0_star)}}},
               {"cs_intersection", ojson{{"c_star", number(cs.c_star)}, {"point", number(cs.point)}}},
               {"sqrt_J", number(std::sqrt(j.j))}};
}

inline ojson local_block(const LocalExperiment& le, std::uint64_t seed, const std::filesystem::path& dir) {
  mc::LocalSettings settings = le.settings;
  settings.seed = seed;
  const auto result = mc::mc_local(le.dgp, settings);
  write_atomic(dir / "mc_local_rows.csv", mc::local_rows_csv(result));
  write_atomic(dir / "mc_local_summary.csv", mc::local_summary_csv(result));
  ojson summary = ojson::array();
  for (const auto& s : result.summary)
    summary.push_back(ojson{{"n", s.n},
                            {"reps", s.reps},
                            {"failed", s.failed},
                            {"median_sqrt_n_dH", number(s.median_scaled_dh)},
                            {"mean_J", number(s.mean_j)},
                            {"J_q90", number(s.j_q90)},
                            {"eff_coverage", number(s.eff_coverage)}});
  return ojson{{"experiment", "mc_local"},
               {"kappa", settings.kappa},
               {"tau", settings.tau},
               {"n_draws", settings.n_draws},
               {"eta", to_json(le.dgp.eta)},
               {"summary", summary}};
}

inline ojson limit_block(const LimitLabSpec& spec, std::uint64_t seed, const std::filesystem::path& dir) {
  return std::visit(
      [&](const auto& ex) -> ojson {
        using T = std::decay_t<decltype(ex)>;
        if constexpr (std::is_same_v<T, ExactExperiment>) return exact_block(ex, seed, dir);
        else return local_block(ex, seed, dir);
      },
      spec);
}

inline ojson error_json(const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  return ojson{{"kind", err ? err->kind() : "internal"}, {"message", e.what()}};
}

}  // namespace detail

/// Fits, inference, J, audit and optional limit experiment for one config.
/// Configuration errors throw ConfigError; errors after validation are recorded
/// in report.json and give a nonzero exit code.
inline RunOutcome run(const std::filesystem::path& config_path, const RunOptions& opts = {}) {
  const RunConfig cfg =
      parse_run_config(read_text(config_path), config_path.parent_path(), config_path.string());
  const std::uint64_t seed = detail::resolve_seed(cfg.seed, opts);
  RunOutcome out;
  out.output_dir = opts.output_dir ? *opts.output_dir : cfg.output_dir;
  std::filesystem::create_directories(out.output_dir);

  ojson& report = out.report;
  report["schema_version"] = report_schema_version;
  report["provenance"] = provenance(seed, cfg.config_hash, "run");
  report["status"] = "ok";
  try {
    if (!cfg.strategies.empty()) {
      const Dataset data = ingest_csv(cfg.data_path);
      const MomentModel model = builtin_model(cfg.model_name, cfg.model_params, data.column_names());
      report["model"] = ojson{{"name", model.name}, {"k", model.k}, {"p", model.p}, {"n", data.rows()},
                              {"columns", data.column_names()}};

      ojson estimates = ojson::array();
      for (std::size_t i = 0; i < cfg.strategies.size(); ++i) {
        FitStrategy st = cfg.strategies[i];
        st.optimizer.seed = sub_seed(seed, detail::strategy_stream + i);
        const GmmFit f = fit(model, data, st);
        ojson se = ojson::object();
        if (cfg.inference.conventional) se["conventional"] = number(conventional_cov(f).se_theta);
        if (cfg.inference.robust) se["robust"] = number(robust_cov(f, model, data).se_theta);
        ojson e{{"strategy", f.strategy},
                {"psi_hat", to_json(f.psi_hat)},
                {"theta_hat", number(f.theta_hat)},
                {"criterion", number(f.criterion)},
                {"se", se},
                {"weight", to_json(f.weight.values())},
                {"diagnostics", to_json(f.diagnostics)}};
        if (cfg.inference.bootstrap) {
          BootstrapSettings bs;
          bs.replications = cfg.inference.bootstrap->replications;
          bs.alpha = cfg.inference.bootstrap->alpha;
          bs.scheme = cfg.inference.bootstrap->scheme;
          bs.seed = sub_seed(seed, detail::bootstrap_stream + i);
          e["bootstrap"] = to_json(bootstrap(model, data, st, f, bs));
        }
        estimates.push_back(e);
      }
      report["estimates"] = estimates;

      if (model.k > model.p || cfg.audit) {
        AuditSettings as;
        if (cfg.audit) {
          as.kappa = cfg.audit->kappa;
          as.tau = cfg.audit->tau;
          as.n_draws = cfg.audit->n_draws;
          as.t_budget = cfg.audit->t_budget;
          as.flavor = cfg.audit->flavor;
        }
        as.seed = sub_seed(seed, detail::audit_stream);
        as.optimizer = cfg.optimizer;
        const AuditBaseline baseline = audit_baseline(model, data, as);
        if (model.k > model.p) report["j_statistic"] = to_json(baseline.jstat);
        if (cfg.audit) {
          as.optimizer.multistart = 1;  // weight fits start from the efficient estimate
          const AuditReport ar = audit(model, data, as, baseline);
          report["audit"] = to_json(ar);
          write_atomic(out.output_dir / "audit_points.csv", audit_points_csv(ar));
        }
      }
    }
    if (cfg.limit_lab)
      report["limit_lab"] = detail::limit_block(*cfg.limit_lab, sub_seed(seed, detail::limit_stream), out.output_dir);
  } catch (const std::exception& e) {
    report["status"] = "error";
    report["error"] = detail::error_json(e);
    out.exit_code = 1;
  }
  detail::write_outputs(out.output_dir, report);
  return out;
}

/// Runs a standalone limit-experiment config.
inline RunOutcome limit_lab_run(const std::filesystem::path& config_path, const RunOptions& opts = {}) {
  const LimitLabConfig cfg =
      parse_limit_lab_config(read_text(config_path), config_path.parent_path(), config_path.string());
  const std::uint64_t seed = detail::resolve_seed(cfg.seed, opts);
  RunOutcome out;
  out.output_dir = opts.output_dir ? *opts.output_dir : cfg.output_dir;
  std::filesystem::create_directories(out.output_dir);
  ojson& report = out.report;
  report["schema_version"] = report_schema_version;
  report["provenance"] = provenance(seed, cfg.config_hash, "limit-lab");
  report["status"] = "ok";
  try {
    report["limit_lab"] = detail::limit_block(cfg.spec, seed, out.output_dir);
  } catch (const std::exception& e) {
    report["status"] = "error";
    report["error"] = detail::error_json(e);
    out.exit_code = 1;
  }
  detail::write_outputs(out.output_dir, report);
  return out;
}

/// The exact limit-experiment suite; prints one PASS/FAIL line per check.
inline int verify(std::ostream& os, const std::optional<std::filesystem::path>& output_dir = std::nullopt) {
  namespace ll = limit_lab;
  std::vector<ll::CheckResult> results;
  results.push_back(ll::check_canonical());
  results.push_back(ll::check_v_surjectivity());
  results.push_back(ll::check_exact_interval());
  const auto cor = ll::check_corollaries();
  results.push_back(cor.min_max_t);
  results.push_back(cor.cs);
  bool all = true;
  ojson rows = ojson::array();
  for (const auto& r : results) {
    all = all && r.passed;
    os << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " (tolerance " << r.tolerance << ")\n";
    rows.push_back(ojson{{"name", r.name},
                         {"passed", r.passed},
                         {"metric", number(r.metric)},
                         {"tolerance", r.tolerance},
                         {"detail", r.detail}});
  }
  if (output_dir) {
    std::filesystem::create_directories(*output_dir);
    write_atomic(*output_dir / "verify.json", ojson{{"checks", rows}, {"passed", all}}.dump(2) + "\n");
  }
  return all ? 0 : 1;
}

}  // namespace gmm_audit::cli
