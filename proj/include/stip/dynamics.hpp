#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "stip/types.hpp"

namespace stip::dynamics {

enum class SystemKind { lorenz63, rossler, chen, linear_decay, zero, custom };

/// First-order autonomous ODE x' = f(x; u).
///
/// Parameter order for the built-ins:
///   lorenz63: (sigma, beta, rho)
///   rossler:  (a, b, c)
///   chen:     (a, b, c)
/// `linear_decay` (x' = -x) and `zero` (x' = 0) accept any dimension and
/// ignore u; they exist for integrator checks.
class OdeSystem {
 public:
  using Field = std::function<void(const double* x, const Vector& u, double* dx)>;

  static OdeSystem lorenz63();
  static OdeSystem rossler();
  static OdeSystem chen();
  static OdeSystem linear_decay(std::size_t dimension);
  static OdeSystem zero(std::size_t dimension);
  static OdeSystem custom(std::string name, std::size_t dimension, std::size_t parameters, Field field);
  /// Lookup of the chaotic built-ins by name ("lorenz63", "rossler", "chen").
  static OdeSystem from_name(std::string_view name);

  SystemKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  std::size_t dimension() const { return dimension_; }
  /// Number of parameters the field expects; 0 means any.
  std::size_t parameter_count() const { return parameters_; }
  std::vector<std::string> parameter_names() const;

  Vector rhs(const Vector& state, const Vector& u) const;

  /// Equilibria for parameter u (the analytic ones quoted for each system).
  std::vector<Vector> equilibria(const Vector& u) const;

  const Field& field() const { return field_; }

 private:
  OdeSystem(SystemKind kind, std::string name, std::size_t dimension, std::size_t parameters, Field field = {})
      : kind_(kind), name_(std::move(name)), dimension_(dimension), parameters_(parameters), field_(std::move(field)) {}

  SystemKind kind_;
  std::string name_;
  std::size_t dimension_;
  std::size_t parameters_;
  Field field_;
};

Vector eval_rhs(const OdeSystem& system, const Vector& state, const Vector& u);

struct ObservationConfig {
  double t0 = 100.0;  ///< spin-up, discarded
  double T = 10.0;    ///< observation window
  std::size_t J = 100;  ///< observation times, equally spaced on [t0, t0+T] inclusive
  double h = 0.01;    ///< upper bound on the integrator step
  Vector x0 = Vector::Ones(3);

  /// Throws InvalidArgument unless t0 >= 0, T > 0, J >= 2, h > 0, x0 nonempty and finite.
  void validate() const;
  double spacing() const { return T / static_cast<double>(J - 1); }
  /// Integrator step actually used on [0, t0]; divides t0 exactly.
  double spinup_step() const;
  std::size_t spinup_steps() const;
  /// Integrator step used inside the window; divides spacing() exactly.
  double window_step() const;
  std::size_t substeps_per_observation() const;
};

struct TrajectoryMatrix {
  Matrix values;  ///< I x J
  Vector times;   ///< length J
  std::vector<std::string> component_labels;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
};

/// Fixed-step classical RK4 from x0 through the spin-up, then across the
/// window, recording the state at the observation times. `extra_columns`
/// continues the same grid past t0+T (forecast horizon); the first J columns
/// are bitwise identical to the result with extra_columns = 0.
///
/// Throws DivergenceError if any component becomes non-finite or exceeds 1e8.
TrajectoryMatrix integrate(const OdeSystem& system, const Vector& u, const ObservationConfig& cfg,
                           std::size_t extra_columns = 0);

/// Rows (x, y, z, x^2, y^2, z^2, xy, xz, yz).
TrajectoryMatrix augment_second_order(const TrajectoryMatrix& x);

/// Row means.
Vector time_average(const TrajectoryMatrix& x);
Vector time_average(const Matrix& x);

/// X (I - 1 1^T / J) X^T plus jitter * mean(diag) * Identity. Throws
/// SingularMatrix if the result does not admit a Cholesky factorization.
Matrix estimate_gamma_obs(const TrajectoryMatrix& truth, double jitter);

/// CSV with header `time,<labels...>`, one row per observation time, 17 significant digits.
void write_trajectory_csv(std::ostream& out, const TrajectoryMatrix& x);

inline constexpr double kBlowUpThreshold = 1e8;

}  // namespace stip::dynamics
