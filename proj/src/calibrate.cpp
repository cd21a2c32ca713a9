#include "stip/calibrate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "stip/linalg.hpp"

namespace stip::calibrate {
namespace {

Vector standard_normal(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

// Whitened centered forward values (J x q) and centered particles (J x p).
struct Centered {
  Matrix particles;
  Matrix forward;
};

Centered center(const Ensemble& ens, const likelihood::DataMetric& gamma) {
  Centered c;
  c.particles = ens.particles.rowwise() - ens.particles.colwise().mean();
  const Matrix g = ens.forward_values.rowwise() - ens.forward_values.colwise().mean();
  c.forward = gamma.whiten(Matrix(g.transpose())).transpose();
  return c;
}

// Whitened residuals G(u_j) - y, one row per particle.
Matrix whitened_residuals(const Ensemble& ens, const Vector& y, const likelihood::DataMetric& gamma) {
  if (static_cast<std::size_t>(y.size()) != gamma.data_size() || ens.forward_values.cols() != y.size()) {
    throw InvalidArgument(fmt::format("data vector has length {}, forward values {}, metric {}", y.size(),
                                      ens.forward_values.cols(), gamma.data_size()));
  }
  const Matrix r = ens.forward_values.rowwise() - y.transpose();
  return gamma.whiten(Matrix(r.transpose())).transpose();
}

void require_ensemble(const Ensemble& ens) {
  if (ens.size() < 2) throw InvalidArgument("ensemble methods need at least two particles");
  if (ens.forward_values.rows() != ens.particles.rows()) {
    throw InvalidArgument("ensemble: forward values do not match particles");
  }
}

}  // namespace

std::string_view to_string(Method method) { return method == Method::eki ? "eki" : "eks"; }

Method method_from_string(std::string_view name) {
  if (name == "eki") return Method::eki;
  if (name == "eks") return Method::eks;
  throw ConfigError(fmt::format("unknown EnK method '{}'", name));
}

std::mt19937_64 StreamSeeder::stream(std::uint64_t iteration, std::uint64_t particle, std::uint64_t purpose,
                                     std::uint64_t attempt) const {
  std::vector<std::uint32_t> words;
  for (std::uint64_t x : {seed_, iteration, particle, purpose, attempt}) {
    words.push_back(static_cast<std::uint32_t>(x));
    words.push_back(static_cast<std::uint32_t>(x >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

void evaluate_ensemble(Ensemble& ens, const ForwardMap& forward, const StreamSeeder& seeder,
                       const EvaluationOptions& options) {
  const Eigen::Index n = ens.particles.rows();
  const Eigen::Index p = ens.particles.cols();
  std::vector<Vector> values(static_cast<std::size_t>(n));
  std::vector<std::size_t> replaced(static_cast<std::size_t>(n), 0);

  auto evaluate_one = [&](Eigen::Index j) {
    for (std::size_t attempt = 0;; ++attempt) {
      try {
        values[static_cast<std::size_t>(j)] = forward(ens.particles.row(j).transpose());
        return;
      } catch (const DivergenceError&) {
        if (attempt + 1 >= options.max_resample_attempts) throw;
        auto rng = seeder.stream(ens.iteration, static_cast<std::uint64_t>(j), StreamSeeder::kResample, attempt);
        ens.particles.row(j) = standard_normal(rng, p).transpose();
        ++replaced[static_cast<std::size_t>(j)];
      }
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min<std::size_t>(options.jobs, static_cast<std::size_t>(n)));
  if (jobs == 1) {
    for (Eigen::Index j = 0; j < n; ++j) evaluate_one(j);
  } else {
    std::atomic<Eigen::Index> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (Eigen::Index j = next++; j < n; j = next++) {
          try {
            evaluate_one(j);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  const Eigen::Index q = values.empty() ? 0 : values.front().size();
  ens.forward_values.resize(n, q);
  ens.resampled = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& v = values[static_cast<std::size_t>(j)];
    if (v.size() != q) throw InvalidArgument("forward map returned vectors of differing length");
    if (!v.allFinite()) throw DivergenceError("forward map returned non-finite values", 0.0);
    ens.forward_values.row(j) = v.transpose();
    ens.resampled += replaced[static_cast<std::size_t>(j)];
  }
}

Ensemble initial_ensemble(std::size_t particles, std::size_t dimension, const ForwardMap& forward,
                          const StreamSeeder& seeder, const EvaluationOptions& options) {
  if (particles < 2) throw InvalidArgument("ensemble needs at least two particles");
  if (dimension == 0) throw InvalidArgument("parameter dimension must be positive");
  Ensemble ens;
  ens.iteration = 0;
  ens.particles.resize(static_cast<Eigen::Index>(particles), static_cast<Eigen::Index>(dimension));
  for (std::size_t j = 0; j < particles; ++j) {
    auto rng = seeder.stream(0, j, StreamSeeder::kInitial);
    ens.particles.row(static_cast<Eigen::Index>(j)) =
        standard_normal(rng, static_cast<Eigen::Index>(dimension)).transpose();
  }
  evaluate_ensemble(ens, forward, seeder, options);
  return ens;
}

double adaptive_step(const Ensemble& ens, const Vector& y, const likelihood::DataMetric& gamma, double dt0) {
  require_ensemble(ens);
  const Centered c = center(ens, gamma);
  const Matrix r = whitened_residuals(ens, y, gamma);
  const Matrix d = r * c.forward.transpose() / static_cast<double>(ens.size());
  return dt0 / (d.norm() + 1e-8);
}

Ensemble eki_step(const Ensemble& ens, const Vector& y, const likelihood::DataMetric& gamma, double dt, bool noisy,
                  const StreamSeeder& seeder, const ForwardMap& forward, const EvaluationOptions& options) {
  require_ensemble(ens);
  if (!(dt > 0.0)) throw InvalidArgument("eki_step: dt must be > 0");
  const auto n = static_cast<Eigen::Index>(ens.size());
  const Centered c = center(ens, gamma);
  // Whitened innovation y - G(u_j) + zeta_j; W Gamma^{1/2} xi / sqrt(dt) = xi / sqrt(dt).
  Matrix innovation = -whitened_residuals(ens, y, gamma);
  if (noisy) {
    for (Eigen::Index j = 0; j < n; ++j) {
      auto rng = seeder.stream(ens.iteration + 1, static_cast<std::uint64_t>(j), StreamSeeder::kNoise);
      innovation.row(j) += standard_normal(rng, innovation.cols()).transpose() / std::sqrt(dt);
    }
  }
  const Matrix weights = innovation * c.forward.transpose();  // (j, k) = <G_k - G_bar, innovation_j>
  Ensemble next;
  next.iteration = ens.iteration + 1;
  next.step_size = dt;
  next.particles = ens.particles + (dt / static_cast<double>(n)) * weights * c.particles;
  evaluate_ensemble(next, forward, seeder, options);
  return next;
}

Ensemble eks_step(const Ensemble& ens, const Vector& y, const likelihood::DataMetric& gamma, double dt0,
                  const StreamSeeder& seeder, const ForwardMap& forward, const EvaluationOptions& options,
                  EksTerms terms) {
  require_ensemble(ens);
  if (!(dt0 > 0.0)) throw InvalidArgument("eks_step: dt0 must be > 0");
  const auto n = static_cast<Eigen::Index>(ens.size());
  const auto p = ens.particles.cols();
  const Centered c = center(ens, gamma);
  const Matrix r = whitened_residuals(ens, y, gamma);
  const Matrix d = r * c.forward.transpose() / static_cast<double>(n);  // D_jk = <G_k - G_bar, G_j - y> / J
  const double dt = dt0 / (d.norm() + 1e-8);

  Matrix moved = ens.particles - dt * d * c.particles;
  const Matrix cov = c.particles.transpose() * c.particles / static_cast<double>(n);
  if (terms.prior_drift) {
    const Matrix lhs = Matrix::Identity(p, p) + dt * cov;
    moved = lhs.ldlt().solve(moved.transpose()).transpose();
  }
  if (terms.noise) {
    // loading relative to the mean particle variance, so a collapsed ensemble stays put
    const double load = 1e-10 * cov.trace() / static_cast<double>(p);
    const Matrix root = linalg::sym_sqrt(cov + load * Matrix::Identity(p, p));
    const double scale = std::sqrt(2.0 * dt);
    for (Eigen::Index j = 0; j < n; ++j) {
      auto rng = seeder.stream(ens.iteration + 1, static_cast<std::uint64_t>(j), StreamSeeder::kNoise);
      moved.row(j) += scale * (root * standard_normal(rng, p)).transpose();
    }
  }
  Ensemble next;
  next.iteration = ens.iteration + 1;
  next.step_size = dt;
  next.particles = std::move(moved);
  evaluate_ensemble(next, forward, seeder, options);
  return next;
}

std::size_t EnkHistory::divergences() const {
  std::size_t total = 0;
  for (const auto& e : ensembles) total += e.resampled;
  return total;
}

EnkHistory run_enk(const ForwardMap& forward, const likelihood::DataMetric& gamma, const Vector& y,
                   std::size_t dimension, const EnkOptions& options, std::uint64_t seed) {
  if (options.ensemble_size < 2) throw InvalidArgument("run_enk: ensemble size must be >= 2");
  const StreamSeeder seeder(seed);
  EnkHistory history;
  history.seed = seed;
  history.ensembles.reserve(options.iterations + 1);
  history.ensembles.push_back(initial_ensemble(options.ensemble_size, dimension, forward, seeder, options.evaluation));
  for (std::size_t it = 0; it < options.iterations; ++it) {
    const Ensemble& current = history.ensembles.back();
    try {
      if (options.method == Method::eki) {
        const double dt = options.eki_adaptive ? adaptive_step(current, y, gamma, options.dt) : options.dt;
        history.ensembles.push_back(
            eki_step(current, y, gamma, dt, options.eki_noisy, seeder, forward, options.evaluation));
      } else {
        history.ensembles.push_back(eks_step(current, y, gamma, options.dt, seeder, forward, options.evaluation));
      }
    } catch (const std::exception& e) {
      history.completed = false;
      history.error = fmt::format("iteration {}: {}", it + 1, e.what());
      break;
    }
  }
  return history;
}

void write_history_csv(std::ostream& out, const EnkHistory& history, const prior::LogNormalPrior& prior) {
  const std::size_t p = prior.dimension();
  out << "iter,particle";
  for (std::size_t i = 1; i <= p; ++i) out << ",v" << i;
  for (std::size_t i = 1; i <= p; ++i) out << ",u" << i;
  out << '\n';
  for (const auto& ens : history.ensembles) {
    for (Eigen::Index j = 0; j < ens.particles.rows(); ++j) {
      const Vector v = ens.particles.row(j).transpose();
      const Vector u = prior.unwhiten(v);
      out << ens.iteration << ',' << j;
      for (Eigen::Index i = 0; i < v.size(); ++i) out << fmt::format(",{:.17g}", v[i]);
      for (Eigen::Index i = 0; i < u.size(); ++i) out << fmt::format(",{:.17g}", u[i]);
      out << '\n';
    }
  }
}

void write_forward_csv(std::ostream& out, const EnkHistory& history) {
  const Eigen::Index q = history.ensembles.empty() ? 0 : history.ensembles.front().forward_values.cols();
  out << "iter,particle";
  for (Eigen::Index i = 1; i <= q; ++i) out << ",g" << i;
  out << '\n';
  for (const auto& ens : history.ensembles) {
    for (Eigen::Index j = 0; j < ens.forward_values.rows(); ++j) {
      out << ens.iteration << ',' << j;
      for (Eigen::Index i = 0; i < q; ++i) out << fmt::format(",{:.17g}", ens.forward_values(j, i));
      out << '\n';
    }
  }
}

}  // namespace stip::calibrate
