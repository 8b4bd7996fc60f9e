#pragma once

// Report plumbing: JSON conversion of results, provenance, markdown tables and
// atomic file output.

#include "gmm_audit/cli/config.hpp"
#include "gmm_audit/estimation.hpp"
#include "gmm_audit/inference.hpp"
#include "gmm_audit/weight_audit.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <system_error>

#ifndef GMM_AUDIT_VERSION
#define GMM_AUDIT_VERSION "0.1.0"
#endif

namespace gmm_audit::cli {

using ojson = nlohmann::ordered_json;

inline constexpr int report_schema_version = 1;

/// Writes `contents` to `path` via a temporary file in the same directory and a rename.
inline void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) throw FormatError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline ojson provenance(std::uint64_t seed, const std::string& config_hash, const std::string& command) {
  return ojson{{"tool", "gmm-audit"},
               {"version", GMM_AUDIT_VERSION},
               {"command", command},
               {"config_dialect", config_dialect},
               {"config_hash", "fnv1a64:" + config_hash},
               {"seed", seed},
               {"generated_at", utc_timestamp()}};
}

/// NaN and infinities become null.
inline ojson number(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

inline ojson to_json(const Vector& v) {
  ojson a = ojson::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(number(v(i)));
  return a;
}

inline ojson to_json(const Matrix& m) {
  ojson a = ojson::array();
  for (Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

inline ojson to_json(const Interval& i) { return ojson{{"lo", number(i.lo)}, {"hi", number(i.hi)}}; }

inline ojson to_json(const FitDiagnostics& d) {
  return ojson{{"converged", d.converged},
               {"gradient_norm", number(d.gradient_norm)},
               {"iterations", d.iterations},
               {"rounds", d.rounds},
               {"rounds_converged", d.rounds_converged},
               {"ridge_repaired", d.ridge_repaired},
               {"starts_converged", d.starts_converged}};
}

inline ojson to_json(const BootstrapResult& b) {
  return ojson{{"scheme", to_string(b.scheme)},
               {"replications", b.replications},
               {"successful", b.draws.size()},
               {"failed", b.failures.size()},
               {"alpha", b.alpha},
               {"seed", b.seed},
               {"se", number(b.se)},
               {"percentile_ci", ojson{{"lo", number(b.ci_lo)}, {"hi", number(b.ci_hi)}}},
               {"ci_valid", b.ci_valid}};
}

inline ojson to_json(const JStatistic& j) {
  return ojson{{"J", number(j.j)},
               {"df", j.df},
               {"chi_square_tail_probability", number(chi_square_tail(j.j, j.df))},
               {"note", "descriptive reference only; not an accept/reject verdict"},
               {"sigma_ridge_repaired", j.ridge_repaired}};
}

inline ojson to_json(const AuditReport& r) {
  ojson taus = ojson::array();
  for (const auto& t : r.taus) {
    ojson hull = t.hull ? to_json(*t.hull) : ojson(nullptr);
    taus.push_back(ojson{{"tau", t.tau},
                         {"interval", to_json(t.interval)},
                         {"sampled_hull", hull},
                         {"accepted_points", t.accepted},
                         {"hausdorff", number(t.hausdorff)}});
  }
  return ojson{{"kappa", r.kappa},
               {"se_flavor", to_string(r.flavor)},
               {"theta_eff", number(r.theta_eff)},
               {"se_eff", number(r.se_eff)},
               {"J", number(r.j_stat)},
               {"df", r.df},
               {"intervals", taus},
               {"sampled_points", r.sampled_points.size()},
               {"failed_draws", r.failures},
               {"minmax_t", ojson{{"value", number(r.minmax_t)}, {"theta0_star", number(r.theta0_star)}}},
               {"cs_intersection", ojson{{"c_star", number(r.cs_critical)}, {"point", number(r.cs_point)}}},
               {"adversarial_t_at_theta_eff", ojson{{"sup_abs_t", number(r.sup_t_at_eff)},
                                                    {"sqrt_J", number(std::sqrt(std::max(0.0, r.j_stat)))}}}};
}

/// audit_points.csv: one row per sampled weight with acceptance at every tau.
inline std::string audit_points_csv(const AuditReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "source,theta,se,kappa";
  for (const auto& t : r.taus) os << ",accepted_tau_" << t.tau;
  os << '\n';
  for (const auto& p : r.sampled_points) {
    os << to_string(p.source) << ',' << p.theta << ',' << p.se << ',' << p.kappa;
    for (const auto& t : r.taus) os << ',' << (accepts(p.se, r.se_eff, t.tau) ? 1 : 0);
    os << '\n';
  }
  return os.str();
}

inline std::string points_csv(const std::vector<EstimatePoint>& pts) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "source,theta,se,kappa\n";
  for (const auto& p : pts) os << to_string(p.source) << ',' << p.theta << ',' << p.se << ',' << p.kappa << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Markdown

inline std::string md_number(const ojson& v) {
  if (v.is_null()) return "n/a";
  if (v.is_number_float()) {
    std::ostringstream os;
    os << std::setprecision(6) << v.get<double>();
    return os.str();
  }
  return v.dump();
}

inline void md_estimates(std::ostringstream& md, const ojson& report) {
  if (!report.contains("estimates")) return;
  md << "## Estimates by strategy\n\n";
  md << "| strategy | theta_hat | se (conventional) | se (robust) | bootstrap percentile CI | criterion |\n";
  md << "|---|---|---|---|---|---|\n";
  for (const auto& e : report.at("estimates")) {
    const auto& se = e.at("se");
    std::string boot = "-";
    if (e.contains("bootstrap")) {
      const auto& ci = e.at("bootstrap").at("percentile_ci");
      boot = "[" + md_number(ci.at("lo")) + ", " + md_number(ci.at("hi")) + "] (" +
             e.at("bootstrap").at("scheme").get<std::string>() + ")";
    }
    md << "| " << e.at("strategy").get<std::string>() << " | " << md_number(e.at("theta_hat")) << " | "
       << (se.contains("conventional") ? md_number(se.at("conventional")) : "-") << " | "
       << (se.contains("robust") ? md_number(se.at("robust")) : "-") << " | " << boot << " | "
       << md_number(e.at("criterion")) << " |\n";
  }
  md << '\n';
}

inline void md_j(std::ostringstream& md, const ojson& report) {
  if (!report.contains("j_statistic")) return;
  const auto& j = report.at("j_statistic");
  md << "## J-statistic\n\n";
  md << "J = " << md_number(j.at("J")) << " with k - p = " << j.at("df").dump()
     << " (chi-square tail probability " << md_number(j.at("chi_square_tail_probability"))
     << ", descriptive only).\n\n";
}

inline void md_audit(std::ostringstream& md, const ojson& report) {
  if (!report.contains("audit")) return;
  const auto& a = report.at("audit");
  md << "## Weighting-matrix audit\n\n";
  md << "Efficient estimate " << md_number(a.at("theta_eff")) << " (se " << md_number(a.at("se_eff")) << ", "
     << a.at("se_flavor").get<std::string>() << "), kappa = " << md_number(a.at("kappa")) << ", "
     << a.at("sampled_points").dump() << " weights evaluated (" << a.at("failed_draws").dump() << " failed).\n\n";
  md << "| tau | attainable interval | sampled hull | accepted | Hausdorff distance |\n";
  md << "|---|---|---|---|---|\n";
  for (const auto& t : a.at("intervals")) {
    const auto& iv = t.at("interval");
    const auto& h = t.at("sampled_hull");
    md << "| " << md_number(t.at("tau")) << " | [" << md_number(iv.at("lo")) << ", " << md_number(iv.at("hi"))
       << "] | "
       << (h.is_null() ? std::string("-") : "[" + md_number(h.at("lo")) + ", " + md_number(h.at("hi")) + "]")
       << " | " << t.at("accepted_points").dump() << " | " << md_number(t.at("hausdorff")) << " |\n";
  }
  md << "\n### Adversarial t-statistics\n\n";
  md << "| quantity | value |\n|---|---|\n";
  md << "| sqrt(J) | " << md_number(a.at("adversarial_t_at_theta_eff").at("sqrt_J")) << " |\n";
  md << "| max abs t at theta_eff | " << md_number(a.at("adversarial_t_at_theta_eff").at("sup_abs_t")) << " |\n";
  md << "| min over theta0 of max abs t | " << md_number(a.at("minmax_t").at("value")) << " (at theta0 = "
     << md_number(a.at("minmax_t").at("theta0_star")) << ") |\n";
  md << "| critical value where all confidence sets intersect | "
     << md_number(a.at("cs_intersection").at("c_star")) << " (at " << md_number(a.at("cs_intersection").at("point"))
     << ") |\n\n";
}

inline void md_limit_lab(std::ostringstream& md, const ojson& report) {
  if (!report.contains("limit_lab")) return;
  const auto& l = report.at("limit_lab");
  md << "## Limit experiment (" << l.at("experiment").get<std::string>() << ")\n\n";
  if (l.at("experiment") == "exact") {
    md << "J = " << md_number(l.at("J")) << ", theta_eff = " << md_number(l.at("theta_eff"))
       << ", sigma_eff = " << md_number(l.at("sigma_eff")) << ".\n\n";
    md << "| tau | exact interval | endpoint error |\n|---|---|---|\n";
    for (const auto& t : l.at("intervals"))
      md << "| " << md_number(t.at("tau")) << " | [" << md_number(t.at("interval").at("lo")) << ", "
         << md_number(t.at("interval").at("hi")) << "] | " << md_number(t.at("max_endpoint_error")) << " |\n";
    md << "\nmin-max |t| = " << md_number(l.at("minmax_t").at("value")) << ", intersection critical value = "
       << md_number(l.at("cs_intersection").at("c_star")) << ".\n\n";
  } else {
    md << "| n | reps | median sqrt(n) d_H | mean J | efficient CI coverage |\n|---|---|---|---|---|\n";
    for (const auto& s : l.at("summary"))
      md << "| " << s.at("n").dump() << " | " << s.at("reps").dump() << " | " << md_number(s.at("median_sqrt_n_dH"))
         << " | " << md_number(s.at("mean_J")) << " | " << md_number(s.at("eff_coverage")) << " |\n";
    md << '\n';
  }
}

inline std::string markdown(const ojson& report) {
  std::ostringstream md;
  const auto& prov = report.at("provenance");
  md << "# gmm-audit report\n\n";
  md << "- version: " << prov.at("version").get<std::string>() << "\n";
  md << "- seed: " << prov.at("seed").dump() << "\n";
  md << "- config hash: " << prov.at("config_hash").get<std::string>() << "\n";
  md << "- status: " << report.at("status").get<std::string>() << "\n\n";
  if (report.contains("error")) {
    md << "## Error\n\n" << report.at("error").at("kind").get<std::string>() << ": "
       << report.at("error").at("message").get<std::string>() << "\n\n";
  }
  if (report.contains("model")) {
    const auto& m = report.at("model");
    md << "Model `" << m.at("name").get<std::string>() << "` with k = " << m.at("k").dump()
       << " moments, p = " << m.at("p").dump() << " parameters, n = " << m.at("n").dump() << " observations.\n\n";
  }
  md_estimates(md, report);
  md_j(md, report);
  md_audit(md, report);
  md_limit_lab(md, report);
  return md.str();
}

}  // namespace gmm_audit::cli
