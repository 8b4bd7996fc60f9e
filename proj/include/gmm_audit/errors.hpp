#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gmm_audit {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  /// Short machine-readable category, used in structured reports.
  [[nodiscard]] virtual const char* kind() const noexcept { return "error"; }
};

/// A moment function (or its Jacobian) produced a non-finite value.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, std::ptrdiff_t row)
      : Error(what + " (row " + std::to_string(row) + ")"), row_(row) {}
  [[nodiscard]] std::ptrdiff_t row() const noexcept { return row_; }
  [[nodiscard]] const char* kind() const noexcept override { return "evaluation"; }

 private:
  std::ptrdiff_t row_;
};

class RankError : public Error {
 public:
  RankError(const std::string& what, double condition)
      : Error(what + " (condition number " + std::to_string(condition) + ")"),
        condition_(condition) {}
  [[nodiscard]] double condition() const noexcept { return condition_; }
  [[nodiscard]] const char* kind() const noexcept override { return "rank"; }

 private:
  double condition_;
};

class SymmetryError : public Error {
 public:
  SymmetryError(const std::string& what, double asymmetry)
      : Error(what), asymmetry_(asymmetry) {}
  [[nodiscard]] double asymmetry() const noexcept { return asymmetry_; }
  [[nodiscard]] const char* kind() const noexcept override { return "symmetry"; }

 private:
  double asymmetry_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "config"; }
};

class RegistryError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "registry"; }
};

/// Every optimizer start exhausted its iteration budget; carries the best iterate seen.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, Eigen::VectorXd best, double criterion)
      : Error(what), best_(std::move(best)), criterion_(criterion) {}
  [[nodiscard]] const Eigen::VectorXd& best() const noexcept { return best_; }
  [[nodiscard]] double criterion() const noexcept { return criterion_; }
  [[nodiscard]] const char* kind() const noexcept override { return "non_convergence"; }

 private:
  Eigen::VectorXd best_;
  double criterion_;
};

struct ReplicateFailure {
  std::size_t replicate;
  std::string message;
};

class BootstrapInstabilityError : public Error {
 public:
  BootstrapInstabilityError(const std::string& what, std::vector<ReplicateFailure> failures)
      : Error(what), failures_(std::move(failures)) {}
  [[nodiscard]] const std::vector<ReplicateFailure>& failures() const noexcept {
    return failures_;
  }
  [[nodiscard]] const char* kind() const noexcept override { return "bootstrap_instability"; }

 private:
  std::vector<ReplicateFailure> failures_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : Error(what + " at line " + std::to_string(line) + ", column " +
              std::to_string(column)),
        line_(line),
        column_(column) {}
  [[nodiscard]] std::size_t line() const noexcept { return line_; }
  [[nodiscard]] std::size_t column() const noexcept { return column_; }
  [[nodiscard]] const char* kind() const noexcept override { return "parse"; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class FormatError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "format"; }
};

/// A target direction q violates Gamma' q = h.
class DirectionError : public Error {
 public:
  DirectionError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}
  [[nodiscard]] double residual() const noexcept { return residual_; }
  [[nodiscard]] const char* kind() const noexcept override { return "direction"; }

 private:
  double residual_;
};

class ConstructionError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] const char* kind() const noexcept override { return "construction"; }
};

}  // namespace gmm_audit
