#include "stip/dynamics.hpp"

#include <array>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

namespace stip::dynamics {
namespace {

using State3 = std::array<double, 3>;

struct Lorenz63 {
  double sigma, beta, rho;
  void operator()(const State3& s, State3& d) const {
    d[0] = sigma * (s[1] - s[0]);
    d[1] = s[0] * (rho - s[2]) - s[1];
    d[2] = s[0] * s[1] - beta * s[2];
  }
};

struct Rossler {
  double a, b, c;
  void operator()(const State3& s, State3& d) const {
    d[0] = -s[1] - s[2];
    d[1] = s[0] + a * s[1];
    d[2] = b + s[2] * (s[0] - c);
  }
};

struct Chen {
  double a, b, c;
  void operator()(const State3& s, State3& d) const {
    d[0] = a * (s[1] - s[0]);
    d[1] = (c - a) * s[0] - s[0] * s[2] + c * s[1];
    d[2] = s[0] * s[1] - b * s[2];
  }
};

void check_parameters(const OdeSystem& system, const Vector& u) {
  if (system.parameter_count() != 0 && static_cast<std::size_t>(u.size()) != system.parameter_count()) {
    throw InvalidArgument(fmt::format("{}: expected {} parameters, got {}", system.name(),
                                      system.parameter_count(), u.size()));
  }
}

bool blown_up(double v) { return !std::isfinite(v) || std::abs(v) > kBlowUpThreshold; }

[[noreturn]] void diverged(const OdeSystem& system, double last_time) {
  throw DivergenceError(fmt::format("{}: trajectory diverged after t={}", system.name(), last_time), last_time);
}

// Time bookkeeping shared by both integration paths: n_spin steps of size
// h_spin, then for every observation interval `sub` steps of size h_win.
struct Grid {
  std::size_t n_spin;
  double h_spin;
  std::size_t sub;
  double h_win;
  double t0;
  double spacing;
  std::size_t columns;
};

Grid make_grid(const ObservationConfig& cfg, std::size_t extra_columns) {
  cfg.validate();
  return Grid{cfg.spinup_steps(), cfg.spinup_step(), cfg.substeps_per_observation(), cfg.window_step(),
              cfg.t0, cfg.spacing(), cfg.J + extra_columns};
}

template <class Rhs>
Matrix integrate_fixed3(const OdeSystem& system, const Rhs& f, const Vector& x0, const Grid& g) {
  State3 x{x0[0], x0[1], x0[2]};
  State3 k1, k2, k3, k4, tmp;
  auto step = [&](double h) {
    f(x, k1);
    for (int i = 0; i < 3; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
    f(tmp, k2);
    for (int i = 0; i < 3; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
    f(tmp, k3);
    for (int i = 0; i < 3; ++i) tmp[i] = x[i] + h * k3[i];
    f(tmp, k4);
    for (int i = 0; i < 3; ++i) x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return blown_up(x[0]) || blown_up(x[1]) || blown_up(x[2]);
  };

  for (std::size_t n = 0; n < g.n_spin; ++n) {
    if (step(g.h_spin)) diverged(system, static_cast<double>(n) * g.h_spin);
  }
  Matrix out(3, static_cast<Eigen::Index>(g.columns));
  for (std::size_t j = 0; j < g.columns; ++j) {
    if (j > 0) {
      const double t_prev = g.t0 + static_cast<double>(j - 1) * g.spacing;
      for (std::size_t s = 0; s < g.sub; ++s) {
        if (step(g.h_win)) diverged(system, t_prev + static_cast<double>(s) * g.h_win);
      }
    }
    for (int i = 0; i < 3; ++i) out(i, static_cast<Eigen::Index>(j)) = x[i];
  }
  return out;
}

Matrix integrate_generic(const OdeSystem& system, const Vector& u, const Vector& x0, const Grid& g) {
  const Eigen::Index n = x0.size();
  Vector x = x0, k1(n), k2(n), k3(n), k4(n), tmp(n);
  auto step = [&](double h) {
    system.field()(x.data(), u, k1.data());
    tmp = x + 0.5 * h * k1;
    system.field()(tmp.data(), u, k2.data());
    tmp = x + 0.5 * h * k2;
    system.field()(tmp.data(), u, k3.data());
    tmp = x + h * k3;
    system.field()(tmp.data(), u, k4.data());
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (blown_up(x[i])) return true;
    }
    return false;
  };

  for (std::size_t s = 0; s < g.n_spin; ++s) {
    if (step(g.h_spin)) diverged(system, static_cast<double>(s) * g.h_spin);
  }
  Matrix out(n, static_cast<Eigen::Index>(g.columns));
  for (std::size_t j = 0; j < g.columns; ++j) {
    if (j > 0) {
      const double t_prev = g.t0 + static_cast<double>(j - 1) * g.spacing;
      for (std::size_t s = 0; s < g.sub; ++s) {
        if (step(g.h_win)) diverged(system, t_prev + static_cast<double>(s) * g.h_win);
      }
    }
    out.col(static_cast<Eigen::Index>(j)) = x;
  }
  return out;
}

std::size_t steps_for(double length, double h) {
  if (length <= 0.0) return 0;
  // Tolerate representation error so that e.g. 100 / 0.01 gives 10000, not 10001.
  return static_cast<std::size_t>(std::ceil(length / h - 1e-9));
}

}  // namespace

OdeSystem OdeSystem::lorenz63() { return OdeSystem(SystemKind::lorenz63, "lorenz63", 3, 3); }
OdeSystem OdeSystem::rossler() { return OdeSystem(SystemKind::rossler, "rossler", 3, 3); }
OdeSystem OdeSystem::chen() { return OdeSystem(SystemKind::chen, "chen", 3, 3); }

OdeSystem OdeSystem::linear_decay(std::size_t dimension) {
  return OdeSystem(SystemKind::linear_decay, "linear_decay", dimension, 0,
                   [dimension](const double* x, const Vector&, double* dx) {
                     for (std::size_t i = 0; i < dimension; ++i) dx[i] = -x[i];
                   });
}

OdeSystem OdeSystem::zero(std::size_t dimension) {
  return OdeSystem(SystemKind::zero, "zero", dimension, 0, [dimension](const double*, const Vector&, double* dx) {
    for (std::size_t i = 0; i < dimension; ++i) dx[i] = 0.0;
  });
}

OdeSystem OdeSystem::custom(std::string name, std::size_t dimension, std::size_t parameters, Field field) {
  return OdeSystem(SystemKind::custom, std::move(name), dimension, parameters, std::move(field));
}

OdeSystem OdeSystem::from_name(std::string_view name) {
  if (name == "lorenz63" || name == "lorenz") return lorenz63();
  if (name == "rossler") return rossler();
  if (name == "chen") return chen();
  throw InvalidArgument(fmt::format("unknown system '{}'", name));
}

std::vector<std::string> OdeSystem::parameter_names() const {
  switch (kind_) {
    case SystemKind::lorenz63: return {"sigma", "beta", "rho"};
    case SystemKind::rossler:
    case SystemKind::chen: return {"a", "b", "c"};
    default: {
      std::vector<std::string> names;
      for (std::size_t i = 0; i < parameters_; ++i) names.push_back(fmt::format("u{}", i + 1));
      return names;
    }
  }
}

Vector OdeSystem::rhs(const Vector& state, const Vector& u) const {
  if (static_cast<std::size_t>(state.size()) != dimension_) {
    throw InvalidArgument(fmt::format("{}: state has length {}, expected {}", name_, state.size(), dimension_));
  }
  check_parameters(*this, u);
  Vector out(state.size());
  State3 s{}, d{};
  auto fixed = [&](const auto& f) {
    for (int i = 0; i < 3; ++i) s[i] = state[i];
    f(s, d);
    for (int i = 0; i < 3; ++i) out[i] = d[i];
  };
  switch (kind_) {
    case SystemKind::lorenz63: fixed(Lorenz63{u[0], u[1], u[2]}); break;
    case SystemKind::rossler: fixed(Rossler{u[0], u[1], u[2]}); break;
    case SystemKind::chen: fixed(Chen{u[0], u[1], u[2]}); break;
    default: field_(state.data(), u, out.data()); break;
  }
  return out;
}

std::vector<Vector> OdeSystem::equilibria(const Vector& u) const {
  check_parameters(*this, u);
  std::vector<Vector> eq;
  switch (kind_) {
    case SystemKind::lorenz63: {
      const double beta = u[1], rho = u[2];
      eq.push_back(Vector::Zero(3));
      if (rho > 1.0) {
        const double g = std::sqrt(beta * (rho - 1.0));
        eq.push_back((Vector(3) << g, g, rho - 1.0).finished());
        eq.push_back((Vector(3) << -g, -g, rho - 1.0).finished());
      }
      break;
    }
    case SystemKind::rossler: {
      const double a = u[0], b = u[1], c = u[2];
      const double disc = c * c - 4.0 * a * b;
      if (disc >= 0.0) {
        for (double sign : {-1.0, 1.0}) {
          const double g = (c + sign * std::sqrt(disc)) / (2.0 * a);
          eq.push_back((Vector(3) << a * g, -g, g).finished());
        }
      }
      break;
    }
    case SystemKind::chen: {
      const double a = u[0], b = u[1], c = u[2];
      eq.push_back(Vector::Zero(3));
      if (2.0 * c - a > 0.0) {
        const double g = std::sqrt(b * (2.0 * c - a));
        eq.push_back((Vector(3) << g, g, 2.0 * c - a).finished());
        eq.push_back((Vector(3) << -g, -g, 2.0 * c - a).finished());
      }
      break;
    }
    case SystemKind::linear_decay:
    case SystemKind::zero: eq.push_back(Vector::Zero(static_cast<Eigen::Index>(dimension_))); break;
    case SystemKind::custom: break;
  }
  return eq;
}

Vector eval_rhs(const OdeSystem& system, const Vector& state, const Vector& u) { return system.rhs(state, u); }

void ObservationConfig::validate() const {
  if (!(t0 >= 0.0) || !std::isfinite(t0)) throw InvalidArgument(fmt::format("t0 must be >= 0 (got {})", t0));
  if (!(T > 0.0) || !std::isfinite(T)) throw InvalidArgument(fmt::format("T must be > 0 (got {})", T));
  if (J < 2) throw InvalidArgument(fmt::format("J must be >= 2 (got {})", J));
  if (!(h > 0.0) || !std::isfinite(h)) throw InvalidArgument(fmt::format("h must be > 0 (got {})", h));
  if (x0.size() == 0 || !x0.allFinite()) throw InvalidArgument("x0 must be nonempty and finite");
}

std::size_t ObservationConfig::spinup_steps() const { return steps_for(t0, h); }

double ObservationConfig::spinup_step() const {
  const std::size_t n = spinup_steps();
  return n == 0 ? 0.0 : t0 / static_cast<double>(n);
}

std::size_t ObservationConfig::substeps_per_observation() const { return std::max<std::size_t>(1, steps_for(spacing(), h)); }

double ObservationConfig::window_step() const { return spacing() / static_cast<double>(substeps_per_observation()); }

TrajectoryMatrix integrate(const OdeSystem& system, const Vector& u, const ObservationConfig& cfg,
                           std::size_t extra_columns) {
  check_parameters(system, u);
  if (static_cast<std::size_t>(cfg.x0.size()) != system.dimension()) {
    throw InvalidArgument(fmt::format("{}: x0 has length {}, expected {}", system.name(), cfg.x0.size(),
                                      system.dimension()));
  }
  const Grid g = make_grid(cfg, extra_columns);

  TrajectoryMatrix out;
  switch (system.kind()) {
    case SystemKind::lorenz63: out.values = integrate_fixed3(system, Lorenz63{u[0], u[1], u[2]}, cfg.x0, g); break;
    case SystemKind::rossler: out.values = integrate_fixed3(system, Rossler{u[0], u[1], u[2]}, cfg.x0, g); break;
    case SystemKind::chen: out.values = integrate_fixed3(system, Chen{u[0], u[1], u[2]}, cfg.x0, g); break;
    default: out.values = integrate_generic(system, u, cfg.x0, g); break;
  }
  out.times.resize(static_cast<Eigen::Index>(g.columns));
  for (std::size_t j = 0; j < g.columns; ++j) {
    out.times[static_cast<Eigen::Index>(j)] = g.t0 + static_cast<double>(j) * g.spacing;
  }
  if (system.dimension() == 3) {
    out.component_labels = {"x", "y", "z"};
  } else {
    for (std::size_t i = 0; i < system.dimension(); ++i) out.component_labels.push_back(fmt::format("x{}", i + 1));
  }
  return out;
}

TrajectoryMatrix augment_second_order(const TrajectoryMatrix& x) {
  if (x.rows() != 3) {
    throw UnsupportedDimension(fmt::format("augment_second_order: expected 3 rows, got {}", x.rows()));
  }
  const auto& v = x.values;
  TrajectoryMatrix out;
  out.times = x.times;
  out.values.resize(9, v.cols());
  out.values.topRows(3) = v;
  out.values.row(3) = v.row(0).cwiseProduct(v.row(0));
  out.values.row(4) = v.row(1).cwiseProduct(v.row(1));
  out.values.row(5) = v.row(2).cwiseProduct(v.row(2));
  out.values.row(6) = v.row(0).cwiseProduct(v.row(1));
  out.values.row(7) = v.row(0).cwiseProduct(v.row(2));
  out.values.row(8) = v.row(1).cwiseProduct(v.row(2));
  out.component_labels = {"x", "y", "z", "xx", "yy", "zz", "xy", "xz", "yz"};
  return out;
}

Vector time_average(const Matrix& x) {
  if (x.size() == 0) throw InvalidArgument("time_average: empty trajectory");
  return x.rowwise().mean();
}

Vector time_average(const TrajectoryMatrix& x) { return time_average(x.values); }

Matrix estimate_gamma_obs(const TrajectoryMatrix& truth, double jitter) {
  if (truth.cols() < 2) throw InvalidArgument("estimate_gamma_obs: need at least two observation times");
  if (jitter < 0.0) throw InvalidArgument("estimate_gamma_obs: jitter must be >= 0");
  const Matrix centered = truth.values.colwise() - truth.values.rowwise().mean();
  Matrix gamma = centered * centered.transpose();
  gamma = 0.5 * (gamma + gamma.transpose());
  gamma.diagonal().array() += jitter * gamma.diagonal().mean();
  Eigen::LLT<Matrix> llt(gamma);
  if (llt.info() != Eigen::Success) {
    throw SingularMatrix("estimate_gamma_obs: centered trajectory covariance is singular");
  }
  return gamma;
}

void write_trajectory_csv(std::ostream& out, const TrajectoryMatrix& x) {
  out << "time";
  for (const auto& label : x.component_labels) out << ',' << label;
  out << '\n';
  for (Eigen::Index j = 0; j < x.values.cols(); ++j) {
    out << fmt::format("{:.17g}", x.times[j]);
    for (Eigen::Index i = 0; i < x.values.rows(); ++i) out << fmt::format(",{:.17g}", x.values(i, j));
    out << '\n';
  }
}

}  // namespace stip::dynamics
