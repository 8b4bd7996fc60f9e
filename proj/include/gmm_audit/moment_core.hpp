#pragma once

// Moment-condition models, datasets, weighting matrices and sample moment
// statistics.

#include "gmm_audit/errors.hpp"
#include "gmm_audit/linalg.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace gmm_audit {

using RowView = std::span<const double>;

/// g(x, psi) written into `out` (length k).
using MomentFn = std::function<void(RowView row, const Vector& psi, std::span<double> out)>;
/// d g(x, psi) / d psi written into `out` (k x p).
using JacobianFn = std::function<void(RowView row, const Vector& psi, Eigen::Ref<Matrix> out)>;

struct Bound {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

/// Central-difference step for coordinate value v: cbrt(eps) * max(1, |v|).
inline double fd_step(double v) {
  static const double base = std::cbrt(std::numeric_limits<double>::epsilon());
  return base * std::max(1.0, std::abs(v));
}

struct MomentModel {
  std::string name;
  Index k = 0;  ///< number of moment conditions
  Index p = 0;  ///< number of parameters
  MomentFn g;
  JacobianFn jacobian;                        ///< empty: central differences
  std::function<double(const Vector&)> vartheta;  ///< empty: psi(0)
  std::function<Vector(const Vector&)> h_grad;    ///< empty: central differences of vartheta
  std::vector<Bound> param_bounds;             ///< empty: unbounded

  void validate() const {
    if (p < 1 || k < p)
      throw ConfigError("moment model '" + name + "' needs k >= p >= 1 (k=" +
                        std::to_string(k) + ", p=" + std::to_string(p) + ")");
    if (!g) throw ConfigError("moment model '" + name + "' has no moment function");
    if (!param_bounds.empty() && static_cast<Index>(param_bounds.size()) != p)
      throw ConfigError("moment model '" + name + "' has bounds of the wrong length");
  }

  [[nodiscard]] bool has_jacobian() const { return static_cast<bool>(jacobian); }

  [[nodiscard]] double theta(const Vector& psi) const {
    return vartheta ? vartheta(psi) : psi(0);
  }

  [[nodiscard]] Vector theta_gradient(const Vector& psi) const {
    if (h_grad) return h_grad(psi);
    if (!vartheta) return Vector::Unit(p, 0);
    Vector h(p);
    for (Index j = 0; j < p; ++j) {
      Vector up = psi, down = psi;
      const double e = fd_step(psi(j));
      up(j) += e;
      down(j) -= e;
      h(j) = (vartheta(up) - vartheta(down)) / (up(j) - down(j));
    }
    return h;
  }

  [[nodiscard]] bool within_bounds(const Vector& psi) const {
    if (param_bounds.empty()) return true;
    for (Index j = 0; j < p; ++j)
      if (psi(j) < param_bounds[j].lo || psi(j) > param_bounds[j].hi) return false;
    return true;
  }

  [[nodiscard]] Vector project(Vector psi) const {
    if (param_bounds.empty()) return psi;
    for (Index j = 0; j < p; ++j)
      psi(j) = std::clamp(psi(j), param_bounds[j].lo, param_bounds[j].hi);
    return psi;
  }
};

/// n observations of width d, all finite.
class Dataset {
 public:
  Dataset() = default;
  Dataset(RowMatrix values, std::vector<std::string> column_names)
      : values_(std::move(values)), names_(std::move(column_names)) {
    if (values_.rows() < 1) throw FormatError("dataset has no observations");
    if (names_.empty()) {
      for (Index j = 0; j < values_.cols(); ++j) names_.push_back("x" + std::to_string(j + 1));
    }
    if (static_cast<Index>(names_.size()) != values_.cols())
      throw FormatError("dataset has " + std::to_string(values_.cols()) + " columns but " +
                        std::to_string(names_.size()) + " names");
    for (Index i = 0; i < values_.rows(); ++i)
      for (Index j = 0; j < values_.cols(); ++j)
        if (!std::isfinite(values_(i, j)))
          throw FormatError("non-finite value at row " + std::to_string(i) + ", column '" +
                            names_[j] + "'");
  }

  [[nodiscard]] Index rows() const { return values_.rows(); }
  [[nodiscard]] Index cols() const { return values_.cols(); }
  [[nodiscard]] RowView row(Index i) const {
    return {values_.data() + i * values_.cols(), static_cast<std::size_t>(values_.cols())};
  }
  [[nodiscard]] const RowMatrix& values() const { return values_; }
  [[nodiscard]] const std::vector<std::string>& column_names() const { return names_; }

  [[nodiscard]] Index column_index(std::string_view name) const {
    for (std::size_t j = 0; j < names_.size(); ++j)
      if (names_[j] == name) return static_cast<Index>(j);
    throw ConfigError("dataset has no column named '" + std::string(name) + "'");
  }

  /// Rows selected by `index` (with repetition).
  [[nodiscard]] Dataset resample(std::span<const Index> index) const {
    RowMatrix out(static_cast<Index>(index.size()), values_.cols());
    for (std::size_t i = 0; i < index.size(); ++i) out.row(static_cast<Index>(i)) = values_.row(index[i]);
    Dataset d;
    d.values_ = std::move(out);
    d.names_ = names_;
    return d;
  }

 private:
  RowMatrix values_;
  std::vector<std::string> names_;
};

/// Symmetric positive-definite weighting matrix with cached extreme eigenvalues.
class WeightMatrix {
 public:
  /// Accepts any symmetric positive-definite matrix.
  static WeightMatrix from(const Matrix& values) {
    if (values.rows() != values.cols() || values.rows() == 0)
      throw ConfigError("weighting matrix must be square and non-empty");
    const double asym = linalg::relative_asymmetry(values);
    if (asym > 1e-12)
      throw SymmetryError("weighting matrix is not symmetric (relative asymmetry " +
                              std::to_string(asym) + ")",
                          asym);
    WeightMatrix w;
    w.values_ = linalg::symmetrize(values);
    const auto range = linalg::eigen_range(w.values_);
    if (!(range.min > 0.0))
      throw RankError("weighting matrix is not positive definite", range.condition());
    w.eig_min_ = range.min;
    w.eig_max_ = range.max;
    return w;
  }

  static WeightMatrix identity(Index k) { return from(Matrix::Identity(k, k)); }

  [[nodiscard]] const Matrix& values() const { return values_; }
  [[nodiscard]] Index size() const { return values_.rows(); }
  [[nodiscard]] double eig_min() const { return eig_min_; }
  [[nodiscard]] double eig_max() const { return eig_max_; }
  [[nodiscard]] double condition() const { return eig_max_ / eig_min_; }
  /// Smallest kappa for which this matrix lies in W_kappa.
  [[nodiscard]] double kappa() const { return std::max(eig_max_, 1.0 / eig_min_); }

  [[nodiscard]] WeightMatrix scaled(double c) const {
    WeightMatrix w = *this;
    w.values_ *= c;
    w.eig_min_ *= c;
    w.eig_max_ *= c;
    return w;
  }

  /// Rescaled by 1/sqrt(eig_min * eig_max): the member of the ray {c W} with the
  /// smallest kappa.
  [[nodiscard]] WeightMatrix balanced() const { return scaled(1.0 / std::sqrt(eig_min_ * eig_max_)); }

 private:
  Matrix values_;
  double eig_min_ = 1.0;
  double eig_max_ = 1.0;
};

struct WeightViolation {
  double eig_min = 0.0;
  double eig_max = 0.0;
  double kappa = 1.0;
  bool below_lower = false;  ///< eig_min < 1/kappa
  bool above_upper = false;  ///< eig_max > kappa
  [[nodiscard]] std::string describe() const {
    std::string s = "weighting matrix outside W_kappa (kappa=" + std::to_string(kappa) + "):";
    if (below_lower) s += " minimum eigenvalue " + std::to_string(eig_min) + " below 1/kappa;";
    if (above_upper) s += " maximum eigenvalue " + std::to_string(eig_max) + " above kappa;";
    return s;
  }
};

/// Membership test for W_kappa = {symmetric W : 1/kappa <= eig(W) <= kappa}.
inline std::variant<WeightMatrix, WeightViolation> check_weight(const Matrix& w, double kappa) {
  if (w.rows() != w.cols()) throw ConfigError("weighting matrix must be square");
  if (!(kappa >= 1.0)) throw ConfigError("kappa must be >= 1");
  const double asym = linalg::relative_asymmetry(w);
  if (asym > 1e-12)
    throw SymmetryError("weighting matrix is not symmetric (relative asymmetry " +
                            std::to_string(asym) + ")",
                        asym);
  const Matrix sym = linalg::symmetrize(w);
  const auto range = linalg::eigen_range(sym);
  const double tol = 1e-10 * kappa;
  WeightViolation v{range.min, range.max, kappa, range.min < 1.0 / kappa - tol,
                    range.max > kappa + tol};
  if (v.below_lower || v.above_upper || !(range.min > 0.0)) {
    v.below_lower = v.below_lower || !(range.min > 0.0);
    return v;
  }
  return WeightMatrix::from(sym);
}

struct MomentStats {
  Vector g_bar;       ///< k
  Matrix gamma_hat;   ///< k x p
  Matrix sigma_hat;   ///< k x k, centered, divisor n
  Index n = 0;
};

namespace detail {

inline void check_row(const double* v, Index k, Index row, const std::string& model,
                      const char* what) {
  for (Index j = 0; j < k; ++j)
    if (!std::isfinite(v[j]))
      throw EvaluationError("non-finite " + std::string(what) + " in model '" + model + "'",
                            row);
}

}  // namespace detail

/// n x k matrix of per-observation moments g(X_i, psi).
inline RowMatrix moment_matrix(const MomentModel& model, const Dataset& data, const Vector& psi) {
  RowMatrix out(data.rows(), model.k);
  for (Index i = 0; i < data.rows(); ++i) {
    double* dst = out.data() + i * model.k;
    model.g(data.row(i), psi, std::span<double>(dst, static_cast<std::size_t>(model.k)));
    detail::check_row(dst, model.k, i, model.name, "moment value");
  }
  return out;
}

/// Sample mean of the moments, without materialising the n x k matrix.
inline Vector mean_moments(const MomentModel& model, const Dataset& data, const Vector& psi) {
  Vector sum = Vector::Zero(model.k);
  Vector buf(model.k);
  std::span<double> out(buf.data(), static_cast<std::size_t>(model.k));
  for (Index i = 0; i < data.rows(); ++i) {
    model.g(data.row(i), psi, out);
    detail::check_row(buf.data(), model.k, i, model.name, "moment value");
    sum += buf;
  }
  return sum / static_cast<double>(data.rows());
}

/// Per-observation Jacobian of g at row i; analytic when available.
inline void row_jacobian(const MomentModel& model, RowView row, Index i, const Vector& psi,
                         Eigen::Ref<Matrix> out) {
  if (model.jacobian) {
    model.jacobian(row, psi, out);
  } else {
    Vector up(model.k), down(model.k);
    for (Index j = 0; j < model.p; ++j) {
      Vector a = psi, b = psi;
      const double e = fd_step(psi(j));
      a(j) += e;
      b(j) -= e;
      model.g(row, a, std::span<double>(up.data(), static_cast<std::size_t>(model.k)));
      model.g(row, b, std::span<double>(down.data(), static_cast<std::size_t>(model.k)));
      out.col(j) = (up - down) / (a(j) - b(j));
    }
  }
  for (Index j = 0; j < model.p; ++j)
    detail::check_row(out.col(j).data(), model.k, i, model.name, "Jacobian entry");
}

struct MeanAndJacobian {
  Vector g_bar;
  Matrix gamma;
};

/// One pass producing g_bar and Gamma_hat. Without an analytic Jacobian the
/// Jacobian is a central difference of g_bar.
inline MeanAndJacobian mean_and_jacobian(const MomentModel& model, const Dataset& data,
                                         const Vector& psi) {
  MeanAndJacobian out;
  if (!model.jacobian) {
    out.g_bar = mean_moments(model, data, psi);
    out.gamma.resize(model.k, model.p);
    for (Index j = 0; j < model.p; ++j) {
      Vector a = psi, b = psi;
      const double e = fd_step(psi(j));
      a(j) += e;
      b(j) -= e;
      out.gamma.col(j) = (mean_moments(model, data, a) - mean_moments(model, data, b)) / (a(j) - b(j));
    }
    return out;
  }
  Vector sum = Vector::Zero(model.k);
  Matrix jsum = Matrix::Zero(model.k, model.p);
  Vector buf(model.k);
  Matrix jbuf(model.k, model.p);
  std::span<double> gout(buf.data(), static_cast<std::size_t>(model.k));
  for (Index i = 0; i < data.rows(); ++i) {
    const RowView row = data.row(i);
    model.g(row, psi, gout);
    detail::check_row(buf.data(), model.k, i, model.name, "moment value");
    model.jacobian(row, psi, jbuf);
    detail::check_row(jbuf.data(), model.k * model.p, i, model.name, "Jacobian entry");
    sum += buf;
    jsum += jbuf;
  }
  const double n = static_cast<double>(data.rows());
  out.g_bar = sum / n;
  out.gamma = jsum / n;
  return out;
}

/// Centered covariance (1/n) sum (g_i - g_bar)(g_i - g_bar)'.
inline Matrix centered_covariance(const RowMatrix& g, const Vector& g_bar) {
  const Matrix centered = g.rowwise() - g_bar.transpose();
  return linalg::symmetrize(centered.transpose() * centered / static_cast<double>(g.rows()));
}

inline MomentStats moment_stats(const MomentModel& model, const Dataset& data, const Vector& psi) {
  if (psi.size() != model.p)
    throw ConfigError("parameter vector has length " + std::to_string(psi.size()) +
                      ", model expects " + std::to_string(model.p));
  if (!model.within_bounds(psi)) throw ConfigError("parameter vector outside model bounds");
  MomentStats s;
  s.n = data.rows();
  const RowMatrix g = moment_matrix(model, data, psi);
  s.g_bar = g.colwise().mean().transpose();
  s.sigma_hat = centered_covariance(g, s.g_bar);
  s.gamma_hat = mean_and_jacobian(model, data, psi).gamma;
  return s;
}

using ModelParams = std::map<std::string, std::vector<std::string>>;

inline const std::vector<std::string>& builtin_model_names() {
  static const std::vector<std::string> names{"linear_iv", "mean_square_match"};
  return names;
}

namespace detail {

inline Index resolve_column(const std::string& name, const std::vector<std::string>& columns,
                            const std::vector<std::string>& layout) {
  const auto& pool = columns.empty() ? layout : columns;
  for (std::size_t j = 0; j < pool.size(); ++j)
    if (pool[j] == name) return static_cast<Index>(j);
  throw ConfigError("column '" + name + "' not found");
}

inline const std::vector<std::string>& require_role(const ModelParams& params,
                                                    const std::string& role) {
  const auto it = params.find(role);
  if (it == params.end() || it->second.empty())
    throw ConfigError("linear_iv requires column role '" + role + "'");
  return it->second;
}

}  // namespace detail

/**
 * Built-in demo models.
 *
 *  - `linear_iv`: g(x, psi) = z (y - w' psi). Roles `y` (one column), `w`
 *    (p columns) and `z` (k columns) name dataset columns.
 *  - `mean_square_match`: g(x, psi) = (x - psi, x^2 - psi^2), k = 2, p = 1.
 *    Optional role `x` names the column (default: first column).
 *
 * `columns` are the dataset's column names used to resolve roles. When empty,
 * roles resolve against the layout implied by the roles themselves
 * (linear_iv: y, w..., z...; mean_square_match: x).
 */
inline MomentModel builtin_model(const std::string& name, const ModelParams& params,
                                 const std::vector<std::string>& columns = {}) {
  if (name == "linear_iv") {
    const auto& y = detail::require_role(params, "y");
    const auto& w = detail::require_role(params, "w");
    const auto& z = detail::require_role(params, "z");
    if (y.size() != 1) throw ConfigError("linear_iv role 'y' must name exactly one column");
    std::vector<std::string> layout = y;
    layout.insert(layout.end(), w.begin(), w.end());
    layout.insert(layout.end(), z.begin(), z.end());

    const Index yi = detail::resolve_column(y.front(), columns, layout);
    std::vector<Index> wi, zi;
    for (const auto& c : w) wi.push_back(detail::resolve_column(c, columns, layout));
    for (const auto& c : z) zi.push_back(detail::resolve_column(c, columns, layout));

    MomentModel m;
    m.name = "linear_iv";
    m.k = static_cast<Index>(zi.size());
    m.p = static_cast<Index>(wi.size());
    m.g = [yi, wi, zi](RowView x, const Vector& psi, std::span<double> out) {
      double resid = x[static_cast<std::size_t>(yi)];
      for (std::size_t j = 0; j < wi.size(); ++j)
        resid -= x[static_cast<std::size_t>(wi[j])] * psi(static_cast<Index>(j));
      for (std::size_t l = 0; l < zi.size(); ++l) out[l] = x[static_cast<std::size_t>(zi[l])] * resid;
    };
    m.jacobian = [wi, zi](RowView x, const Vector&, Eigen::Ref<Matrix> out) {
      for (std::size_t l = 0; l < zi.size(); ++l)
        for (std::size_t j = 0; j < wi.size(); ++j)
          out(static_cast<Index>(l), static_cast<Index>(j)) =
              -x[static_cast<std::size_t>(zi[l])] * x[static_cast<std::size_t>(wi[j])];
    };
    m.validate();
    return m;
  }
  if (name == "mean_square_match") {
    Index xi = 0;
    if (auto it = params.find("x"); it != params.end() && !it->second.empty())
      xi = detail::resolve_column(it->second.front(), columns, it->second);
    MomentModel m;
    m.name = "mean_square_match";
    m.k = 2;
    m.p = 1;
    m.g = [xi](RowView x, const Vector& psi, std::span<double> out) {
      const double v = x[static_cast<std::size_t>(xi)];
      out[0] = v - psi(0);
      out[1] = v * v - psi(0) * psi(0);
    };
    m.jacobian = [](RowView, const Vector& psi, Eigen::Ref<Matrix> out) {
      out(0, 0) = -1.0;
      out(1, 0) = -2.0 * psi(0);
    };
    m.validate();
    return m;
  }
  std::string valid;
  for (const auto& n : builtin_model_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw RegistryError("unknown model '" + name + "'; valid names: " + valid);
}

}  // namespace gmm_audit
