#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace stip {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A factorization could not be completed, even after diagonal loading.
class SingularMatrix : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a map (log of a nonpositive value, zero norm).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class UnsupportedDimension : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical blow-up while integrating an ODE.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, double last_finite_time)
      : std::runtime_error(what), last_finite_time_(last_finite_time) {}

  double last_finite_time() const noexcept { return last_finite_time_; }

 private:
  double last_finite_time_;
};

}  // namespace stip
