#pragma once

// Run configuration: a JSON document (dialect "json/v1") describing the model,
// data, strategies, inference, audit and optional limit-experiment sections.
// Unknown keys are rejected so that typos surface as errors naming the field.

#include "gmm_audit/errors.hpp"
#include "gmm_audit/estimation.hpp"
#include "gmm_audit/inference.hpp"
#include "gmm_audit/limit_lab.hpp"
#include "gmm_audit/monte_carlo.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace gmm_audit::cli {

using json = nlohmann::json;

inline constexpr int config_version = 1;
inline constexpr const char* config_dialect = "json/v1";

struct BootstrapSpec {
  std::size_t replications = 999;
  double alpha = 0.05;
  BootstrapScheme scheme = BootstrapScheme::plain;
};

struct InferenceSpec {
  bool conventional = true;
  bool robust = true;
  std::optional<BootstrapSpec> bootstrap;
};

struct AuditSpec {
  double kappa = 100.0;
  std::vector<double> tau{0.5, 1.0};
  std::size_t n_draws = 400;
  std::size_t t_budget = 200;
  CovFlavor flavor = CovFlavor::conventional;
};

struct ExactExperiment {
  limit_lab::LimitProblem problem;
  std::optional<Vector> y;  ///< drawn from the problem when absent
  std::vector<double> tau{0.5, 1.0};
  std::size_t n_random = 2000;
  double kappa = 1e6;
};

struct LocalExperiment {
  mc::LinearIvDgp dgp;
  mc::LocalSettings settings;
};

using LimitLabSpec = std::variant<ExactExperiment, LocalExperiment>;

struct RunConfig {
  std::string model_name;
  ModelParams model_params;
  std::filesystem::path data_path;
  OptimizerSettings optimizer;
  std::vector<FitStrategy> strategies;
  InferenceSpec inference;
  std::optional<AuditSpec> audit;
  std::optional<LimitLabSpec> limit_lab;
  std::optional<std::uint64_t> seed;
  std::filesystem::path output_dir = "gmm-audit-out";
  std::string config_hash;  ///< FNV-1a of the canonical JSON
};

/// 64-bit FNV-1a as 16 lowercase hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

namespace detail {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

[[noreturn]] inline void fail(const std::string& field, const std::string& message) {
  throw ConfigError("config field '" + field + "': " + message);
}

inline void allow_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) fail(path.empty() ? "<root>" : path, "must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) fail(join(path, key), "unknown key");
}

template <class T>
T get(const json& obj, const std::string& path, const std::string& key) {
  const auto field = join(path, key);
  if (!obj.contains(key)) fail(field, "is required");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    fail(field, "has the wrong type");
  }
}

template <class T>
T get_or(const json& obj, const std::string& path, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  return get<T>(obj, path, key);
}

inline Vector vector_from(const json& v, const std::string& field) {
  if (!v.is_array()) fail(field, "must be an array of numbers");
  Vector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) fail(field + "[" + std::to_string(i) + "]", "must be a number");
    out(static_cast<Index>(i)) = v[i].get<double>();
  }
  return out;
}

inline Matrix matrix_from(const json& v, const std::string& field) {
  if (!v.is_array() || v.empty()) fail(field, "must be a non-empty array of rows");
  const std::size_t rows = v.size();
  const std::size_t cols = v[0].is_array() ? v[0].size() : 0;
  Matrix out(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    const auto rf = field + "[" + std::to_string(i) + "]";
    if (!v[i].is_array() || v[i].size() != cols) fail(rf, "rows must all have " + std::to_string(cols) + " entries");
    out.row(static_cast<Index>(i)) = vector_from(v[i], rf).transpose();
  }
  return out;
}

inline WeightMatrix weight_from(const json& v, const std::string& field) {
  try {
    return WeightMatrix::from(matrix_from(v, field));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    fail(field, e.what());
  }
}

inline FitStrategy parse_strategy(const json& s, const std::string& path, const OptimizerSettings& opt) {
  const auto kind = get<std::string>(s, path, "kind");
  FitStrategy st;
  st.optimizer = opt;
  if (kind == "fixed_weight") {
    allow_keys(s, path, {"kind", "weight"});
    if (!s.contains("weight")) fail(join(path, "weight"), "is required");
    st.kind = FixedWeight{weight_from(s.at("weight"), join(path, "weight"))};
  } else if (kind == "two_step") {
    allow_keys(s, path, {"kind", "first_step"});
    TwoStep t;
    if (s.contains("first_step")) t.first_step = weight_from(s.at("first_step"), join(path, "first_step"));
    st.kind = t;
  } else if (kind == "iterated") {
    allow_keys(s, path, {"kind", "max_rounds", "tol"});
    Iterated it;
    it.max_rounds = get_or<int>(s, path, "max_rounds", it.max_rounds);
    it.tol = get_or<double>(s, path, "tol", it.tol);
    if (it.max_rounds < 1) fail(join(path, "max_rounds"), "must be >= 1");
    if (!(it.tol > 0.0)) fail(join(path, "tol"), "must be > 0");
    st.kind = it;
  } else if (kind == "diag_inverse") {
    allow_keys(s, path, {"kind"});
    st.kind = DiagInverse{};
  } else if (kind == "identity_scaled") {
    allow_keys(s, path, {"kind", "scale"});
    if (!s.contains("scale")) fail(join(path, "scale"), "is required");
    IdentityScaled is{vector_from(s.at("scale"), join(path, "scale"))};
    for (Index i = 0; i < is.scale.size(); ++i)
      if (!(is.scale(i) > 0.0)) fail(join(path, "scale"), "entries must be > 0");
    st.kind = is;
  } else {
    fail(join(path, "kind"), "unknown strategy kind '" + kind +
                                 "'; valid kinds: fixed_weight, two_step, iterated, diag_inverse, identity_scaled");
  }
  return st;
}

inline std::vector<double> tau_list(const json& obj, const std::string& path, std::vector<double> fallback) {
  if (!obj.contains("tau")) return fallback;
  const json& t = obj.at("tau");
  std::vector<double> out;
  if (t.is_number()) out.push_back(t.get<double>());
  else {
    const Vector v = vector_from(t, join(path, "tau"));
    out.assign(v.data(), v.data() + v.size());
  }
  if (out.empty()) fail(join(path, "tau"), "must not be empty");
  for (double x : out)
    if (!(x >= 0.0)) fail(join(path, "tau"), "values must be >= 0");
  return out;
}

inline LimitLabSpec parse_limit_lab(const json& l, const std::string& path) {
  const auto experiment = get<std::string>(l, path, "experiment");
  if (experiment == "exact") {
    allow_keys(l, path, {"experiment", "gamma", "sigma", "h", "eta", "phi", "y", "tau", "n_random", "kappa"});
    ExactExperiment ex;
    for (const char* key : {"gamma", "sigma", "h"})
      if (!l.contains(key)) fail(join(path, key), "is required");
    ex.problem.gamma = matrix_from(l.at("gamma"), join(path, "gamma"));
    ex.problem.sigma = matrix_from(l.at("sigma"), join(path, "sigma"));
    ex.problem.h = vector_from(l.at("h"), join(path, "h"));
    const Index k = ex.problem.gamma.rows(), p = ex.problem.gamma.cols();
    ex.problem.eta = l.contains("eta") ? vector_from(l.at("eta"), join(path, "eta")) : Vector::Zero(k);
    ex.problem.phi = l.contains("phi") ? vector_from(l.at("phi"), join(path, "phi")) : Vector::Zero(p);
    if (l.contains("y")) {
      ex.y = vector_from(l.at("y"), join(path, "y"));
      if (ex.y->size() != k) fail(join(path, "y"), "must have one entry per moment");
    }
    ex.tau = tau_list(l, path, ex.tau);
    ex.n_random = get_or<std::size_t>(l, path, "n_random", ex.n_random);
    ex.kappa = get_or<double>(l, path, "kappa", ex.kappa);
    if (!(ex.kappa >= 1.0)) fail(join(path, "kappa"), "must be >= 1");
    try {
      ex.problem.validate();
    } catch (const Error& e) {
      fail(path, e.what());
    }
    return ex;
  }
  if (experiment == "mc_local") {
    allow_keys(l, path, {"experiment", "dgp", "n_grid", "reps", "kappa", "tau", "n_draws"});
    LocalExperiment le;
    const auto dpath = join(path, "dgp");
    if (!l.contains("dgp")) fail(dpath, "is required");
    const json& d = l.at("dgp");
    allow_keys(d, dpath, {"model", "pi", "beta", "rho", "eta"});
    const auto model = get_or<std::string>(d, dpath, "model", "linear_iv");
    if (model != "linear_iv") fail(join(dpath, "model"), "only 'linear_iv' supports local drift");
    if (!d.contains("pi")) fail(join(dpath, "pi"), "is required");
    le.dgp.pi = vector_from(d.at("pi"), join(dpath, "pi"));
    if (le.dgp.pi.size() < 2) fail(join(dpath, "pi"), "needs at least two instruments");
    le.dgp.beta = get_or<double>(d, dpath, "beta", le.dgp.beta);
    le.dgp.rho = get_or<double>(d, dpath, "rho", le.dgp.rho);
    if (!(std::abs(le.dgp.rho) < 1.0)) fail(join(dpath, "rho"), "must lie in (-1, 1)");
    le.dgp.eta = d.contains("eta") ? vector_from(d.at("eta"), join(dpath, "eta")) : Vector::Zero(le.dgp.pi.size());
    if (le.dgp.eta.size() != le.dgp.pi.size()) fail(join(dpath, "eta"), "must have one entry per instrument");
    if (l.contains("n_grid")) {
      le.settings.n_grid.clear();
      for (const auto& v : l.at("n_grid")) {
        if (!v.is_number_integer() || v.get<long long>() < 10) fail(join(path, "n_grid"), "entries must be integers >= 10");
        le.settings.n_grid.push_back(v.get<Index>());
      }
      if (le.settings.n_grid.empty() ||
          !std::is_sorted(le.settings.n_grid.begin(), le.settings.n_grid.end()))
        fail(join(path, "n_grid"), "must be a non-empty ascending list");
    }
    le.settings.reps = get_or<std::size_t>(l, path, "reps", le.settings.reps);
    if (le.settings.reps < 1) fail(join(path, "reps"), "must be >= 1");
    le.settings.kappa = get_or<double>(l, path, "kappa", le.settings.kappa);
    if (!(le.settings.kappa >= 1.0)) fail(join(path, "kappa"), "must be >= 1");
    const auto taus = tau_list(l, path, {le.settings.tau});
    if (taus.size() != 1) fail(join(path, "tau"), "mc_local takes a single tau");
    le.settings.tau = taus.front();
    le.settings.n_draws = get_or<std::size_t>(l, path, "n_draws", le.settings.n_draws);
    return le;
  }
  fail(join(path, "experiment"), "unknown experiment '" + experiment + "'; valid: exact, mc_local");
}

inline std::optional<std::uint64_t> seed_from(const json& root) {
  if (!root.contains("seed")) return std::nullopt;
  const json& s = root.at("seed");
  if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0))
    fail("seed", "must be a non-negative integer");
  return s.get<std::uint64_t>();
}

inline json parse_json(std::string_view text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": invalid JSON: " + e.what());
  }
}

inline void check_version(const json& root) {
  const int v = get<int>(root, "", "config_version");
  if (v != config_version)
    fail("config_version", "unsupported version " + std::to_string(v) + " (expected " +
                               std::to_string(config_version) + ")");
}

}  // namespace detail

/// Parses a run configuration; relative paths resolve against `base_dir`.
inline RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {},
                                  const std::string& source = "config") {
  using namespace detail;
  const json root = parse_json(text, source);
  allow_keys(root, "", {"config_version", "seed", "model", "data_path", "optimizer", "strategies", "inference",
                        "audit", "limit_lab", "output_dir"});
  check_version(root);
  RunConfig cfg;
  cfg.config_hash = fnv1a_hex(root.dump());
  cfg.seed = seed_from(root);

  if (root.contains("output_dir")) cfg.output_dir = base_dir / get<std::string>(root, "", "output_dir");

  if (root.contains("optimizer")) {
    const json& o = root.at("optimizer");
    allow_keys(o, "optimizer", {"multistart", "max_iterations", "init", "default_box"});
    cfg.optimizer.multistart = get_or<int>(o, "optimizer", "multistart", cfg.optimizer.multistart);
    cfg.optimizer.max_iterations = get_or<int>(o, "optimizer", "max_iterations", cfg.optimizer.max_iterations);
    cfg.optimizer.default_box = get_or<double>(o, "optimizer", "default_box", cfg.optimizer.default_box);
    if (o.contains("init")) cfg.optimizer.init = vector_from(o.at("init"), "optimizer.init");
    if (cfg.optimizer.multistart < 1) fail("optimizer.multistart", "must be >= 1");
    if (cfg.optimizer.max_iterations < 1) fail("optimizer.max_iterations", "must be >= 1");
    if (!(cfg.optimizer.default_box > 0.0)) fail("optimizer.default_box", "must be > 0");
  }

  if (root.contains("strategies")) {
    const json& s = root.at("strategies");
    if (!s.is_array()) fail("strategies", "must be an array");
    for (std::size_t i = 0; i < s.size(); ++i)
      cfg.strategies.push_back(parse_strategy(s[i], "strategies[" + std::to_string(i) + "]", cfg.optimizer));
  }

  if (!cfg.strategies.empty() || root.contains("model") || root.contains("data_path")) {
    if (!root.contains("model")) fail("model", "is required when strategies are given");
    const json& m = root.at("model");
    allow_keys(m, "model", {"name", "params"});
    cfg.model_name = get<std::string>(m, "model", "name");
    if (m.contains("params")) {
      const json& p = m.at("params");
      if (!p.is_object()) fail("model.params", "must be an object of column lists");
      for (const auto& [role, cols] : p.items()) {
        const auto field = "model.params." + role;
        if (cols.is_string()) cfg.model_params[role] = {cols.get<std::string>()};
        else if (cols.is_array()) {
          for (const auto& c : cols) {
            if (!c.is_string()) fail(field, "must list column names");
            cfg.model_params[role].push_back(c.get<std::string>());
          }
        } else {
          fail(field, "must be a column name or a list of column names");
        }
      }
    }
    cfg.data_path = base_dir / get<std::string>(root, "", "data_path");
    if (cfg.strategies.empty()) fail("strategies", "must list at least one strategy");
  }

  if (root.contains("inference")) {
    const json& inf = root.at("inference");
    allow_keys(inf, "inference", {"conventional", "robust", "bootstrap"});
    cfg.inference.conventional = get_or<bool>(inf, "inference", "conventional", true);
    cfg.inference.robust = get_or<bool>(inf, "inference", "robust", true);
    if (inf.contains("bootstrap")) {
      const json& b = inf.at("bootstrap");
      allow_keys(b, "inference.bootstrap", {"B", "alpha", "scheme"});
      BootstrapSpec bs;
      bs.replications = get_or<std::size_t>(b, "inference.bootstrap", "B", bs.replications);
      bs.alpha = get_or<double>(b, "inference.bootstrap", "alpha", bs.alpha);
      const auto scheme = get_or<std::string>(b, "inference.bootstrap", "scheme", "plain");
      if (scheme == "plain") bs.scheme = BootstrapScheme::plain;
      else if (scheme == "recentered") bs.scheme = BootstrapScheme::recentered;
      else fail("inference.bootstrap.scheme", "must be 'plain' or 'recentered'");
      if (bs.replications < 2) fail("inference.bootstrap.B", "must be >= 2");
      if (!(bs.alpha > 0.0 && bs.alpha < 1.0)) fail("inference.bootstrap.alpha", "must lie in (0, 1)");
      cfg.inference.bootstrap = bs;
    }
  }

  if (root.contains("audit")) {
    const json& a = root.at("audit");
    allow_keys(a, "audit", {"kappa", "tau", "n_draws", "t_budget", "se_flavor"});
    AuditSpec as;
    as.kappa = get_or<double>(a, "audit", "kappa", as.kappa);
    if (!(as.kappa >= 1.0)) fail("audit.kappa", "must be >= 1");
    as.tau = tau_list(a, "audit", as.tau);
    as.n_draws = get_or<std::size_t>(a, "audit", "n_draws", as.n_draws);
    if (as.n_draws < 1) fail("audit.n_draws", "must be >= 1");
    as.t_budget = get_or<std::size_t>(a, "audit", "t_budget", as.t_budget);
    const auto flavor = get_or<std::string>(a, "audit", "se_flavor", "conventional");
    if (flavor == "conventional") as.flavor = CovFlavor::conventional;
    else if (flavor == "robust") as.flavor = CovFlavor::robust;
    else fail("audit.se_flavor", "must be 'conventional' or 'robust'");
    if (cfg.strategies.empty()) fail("audit", "needs a model, data and strategies");
    cfg.audit = as;
  }

  if (root.contains("limit_lab")) cfg.limit_lab = parse_limit_lab(root.at("limit_lab"), "limit_lab");
  if (cfg.strategies.empty() && !cfg.limit_lab) fail("strategies", "at least one of strategies or limit_lab is required");
  return cfg;
}

/// A limit-experiment configuration: `config_version`, `seed`, optional
/// `output_dir` and the experiment fields of a `limit_lab` section.
struct LimitLabConfig {
  LimitLabSpec spec;
  std::optional<std::uint64_t> seed;
  std::filesystem::path output_dir = "gmm-audit-out";
  std::string config_hash;
};

inline LimitLabConfig parse_limit_lab_config(std::string_view text, const std::filesystem::path& base_dir = {},
                                             const std::string& source = "config") {
  using namespace detail;
  json root = parse_json(text, source);
  if (!root.is_object()) fail("<root>", "must be an object");
  check_version(root);
  LimitLabConfig cfg;
  cfg.config_hash = fnv1a_hex(root.dump());
  cfg.seed = seed_from(root);
  if (root.contains("output_dir")) cfg.output_dir = base_dir / get<std::string>(root, "", "output_dir");
  for (const char* key : {"config_version", "seed", "output_dir"}) root.erase(key);
  cfg.spec = parse_limit_lab(root, "");
  return cfg;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace gmm_audit::cli
