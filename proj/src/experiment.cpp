#include "stip/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "stip/emulate.hpp"
#include "stip/io.hpp"

namespace stip::experiment {

using nlohmann::json;

namespace {

std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector to_eigen(const json& j, const std::string& key) {
  if (!j.is_array()) throw ConfigError(fmt::format("{}: expected an array of numbers", key));
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(fmt::format("{}: expected an array of numbers", key));
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

json optional_json(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

std::optional<double> optional_number(const json& j, const std::string& key) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_number()) throw ConfigError(fmt::format("{}: expected a number or null", key));
  return j.get<double>();
}

template <typename T>
T get_as(const json& obj, const char* block, const char* key) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}.{}: {}", block, key, e.what()));
  }
}

/// Keys present in `user` but not in `base`.
void check_keys(const json& user, const json& base, const std::string& prefix) {
  if (!user.is_object() || !base.is_object()) return;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError(fmt::format("unknown configuration key '{}'", path));
    check_keys(it.value(), base.at(it.key()), path);
  }
}

std::string csv_number(double x) { return fmt::format("{:.17g}", x); }

std::string matrix_csv(const Matrix& m, const std::string& prefix) {
  std::ostringstream out;
  for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << prefix << c + 1;
  out << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << csv_number(m(r, c));
    out << '\n';
  }
  return out.str();
}

/// Runs f(0..n-1) on up to `jobs` threads. Exceptions are rethrown after all workers finish.
template <typename F>
void parallel_for(std::size_t n, std::size_t jobs, F&& f) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < std::min(jobs, n); ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

std::filesystem::path out_dir(const ExperimentConfig& config) { return config.output_dir; }

void write_json(const std::filesystem::path& path, const json& j) { io::write_atomic(path, j.dump(2) + "\n"); }

std::string rem_table(const std::vector<CalibrationRun>& runs) {
  std::ostringstream out;
  out << "iter,repeat,rem_mean,rem_median\n";
  for (std::size_t r = 0; r < runs.size(); ++r) {
    for (std::size_t n = 0; n < runs[r].rem_mean.size(); ++n) {
      out << n << ',' << r << ',' << csv_number(runs[r].rem_mean[n]) << ',' << csv_number(runs[r].rem_median[n])
          << '\n';
    }
  }
  return out.str();
}

double median_of(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// Linear interpolation between order statistics.
double quantile(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults(std::string_view system) {
  ExperimentConfig c;
  c.system = std::string(system);
  if (system == "lorenz63") {
    c.truth = Vector{{10.0, 8.0 / 3.0, 28.0}};
  } else if (system == "rossler") {
    c.truth = Vector{{0.2, 0.2, 5.7}};
    c.observation.t0 = 1000.0;
    c.observation.T = 100.0;
  } else if (system == "chen") {
    c.truth = Vector{{35.0, 3.0, 28.0}};
  } else {
    throw ConfigError(fmt::format("unknown system '{}' (expected lorenz63, rossler or chen)", system));
  }
  const auto prior = prior::LogNormalPrior::for_system(system);
  c.mu0 = prior.mu0();
  c.sigma0 = prior.sigma0();
  return c;
}

void ExperimentConfig::validate() const {
  const auto sys = dynamics::OdeSystem::from_name(system);
  const auto p = static_cast<Eigen::Index>(sys.parameter_count());
  if (truth.size() != p) throw ConfigError(fmt::format("truth must have {} entries", p));
  if ((truth.array() <= 0.0).any()) throw ConfigError("truth parameters must be positive");
  if (mu0.size() != p || sigma0.size() != p) throw ConfigError(fmt::format("prior.mu0 and prior.sigma0 need {} entries", p));
  if ((sigma0.array() <= 0.0).any()) throw ConfigError("prior.sigma0 must be positive");
  if (observation.x0.size() != static_cast<Eigen::Index>(sys.dimension())) {
    throw ConfigError(fmt::format("observation.x0 must have {} entries", sys.dimension()));
  }
  try {
    observation.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(fmt::format("observation: {}", e.what()));
  }
  if (!(likelihood.ell_x > 0.0) || !(likelihood.ell_t > 0.0)) throw ConfigError("likelihood lengthscales must be positive");
  if (!(likelihood.jitter >= 0.0) || !(likelihood.gamma_jitter >= 0.0)) throw ConfigError("likelihood jitter must be >= 0");
  if (likelihood.variance && !(*likelihood.variance > 0.0)) throw ConfigError("likelihood.variance must be positive");
  if (likelihood.sigma2_eps && !(*likelihood.sigma2_eps > 0.0)) throw ConfigError("likelihood.sigma2_eps must be positive");
  if (calibration.J_ensemble < 2) throw ConfigError("calibration.J_ensemble must be >= 2");
  if (!(calibration.dt > 0.0)) throw ConfigError("calibration.dt must be positive");
  if (emulation.max_points < 2) throw ConfigError("emulation.max_points must be >= 2");
  if (!(emulation.nugget > 0.0)) throw ConfigError("emulation.nugget must be positive");
  if (sampling.n_samples < 1) throw ConfigError("sampling.n_samples must be >= 1");
  if (!(sampling.beta > 0.0 && sampling.beta <= 1.0)) throw ConfigError("sampling.beta must lie in (0, 1]");
  if (!(sampling.step > 0.0)) throw ConfigError("sampling.step must be positive");
  if (prediction.n_samples < 1) throw ConfigError("prediction.n_samples must be >= 1");
  if (!(prediction.horizon_factor >= 1.0)) throw ConfigError("prediction.horizon_factor must be >= 1");
}

json ExperimentConfig::to_json() const {
  json j;
  j["system"] = system;
  j["truth"] = to_std(truth);
  j["observation"] = {{"t0", observation.t0},
                      {"T", observation.T},
                      {"J", observation.J},
                      {"h", observation.h},
                      {"x0", to_std(observation.x0)}};
  j["likelihood"] = {{"kind", std::string(likelihood::to_string(likelihood.kind))},
                     {"ell_x", likelihood.ell_x},
                     {"ell_t", likelihood.ell_t},
                     {"jitter", likelihood.jitter},
                     {"variance", optional_json(likelihood.variance)},
                     {"sigma2_eps", optional_json(likelihood.sigma2_eps)},
                     {"gamma_jitter", likelihood.gamma_jitter}};
  j["prior"] = {{"mu0", to_std(mu0)}, {"sigma0", to_std(sigma0)}};
  j["calibration"] = {{"method", std::string(calibrate::to_string(calibration.method))},
                      {"J_ensemble", calibration.J_ensemble},
                      {"N", calibration.N},
                      {"dt", calibration.dt},
                      {"eki_noisy", calibration.eki_noisy},
                      {"eki_adaptive", calibration.eki_adaptive}};
  j["emulation"] = {{"max_points", emulation.max_points}, {"nugget", emulation.nugget}};
  j["sampling"] = {{"sampler", std::string(sample::to_string(sampling.sampler))},
                   {"n_samples", sampling.n_samples},
                   {"n_burnin", sampling.n_burnin},
                   {"beta", sampling.beta},
                   {"step", sampling.step},
                   {"adapt", sampling.adapt},
                   {"zero_potential", sampling.zero_potential}};
  j["prediction"] = {{"n_samples", prediction.n_samples}, {"horizon_factor", prediction.horizon_factor}};
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  return j;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(fmt::format("override '{}' is not key=value", assignment));
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(fmt::format("override '{}' has an empty key segment", assignment));
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

ExperimentConfig config_from_json(json user, const std::vector<std::string>& overrides) {
  if (user.is_null()) user = json::object();
  if (!user.is_object()) throw ConfigError("configuration must be a JSON object");
  for (const auto& o : overrides) apply_override(user, o);
  const std::string system = user.value("system", std::string("lorenz63"));
  const ExperimentConfig base = ExperimentConfig::defaults(system);
  json merged = base.to_json();
  check_keys(user, merged, "");
  // optional numbers may legitimately be null; merge_patch would drop them
  for (const char* k : {"variance", "sigma2_eps"}) {
    if (user.contains("likelihood") && user["likelihood"].contains(k) && user["likelihood"][k].is_null()) {
      user["likelihood"].erase(k);
    }
  }
  merged.merge_patch(user);

  ExperimentConfig c = base;
  try {
    c.system = merged.at("system").get<std::string>();
    c.truth = to_eigen(merged.at("truth"), "truth");
    const auto& o = merged.at("observation");
    c.observation.t0 = get_as<double>(o, "observation", "t0");
    c.observation.T = get_as<double>(o, "observation", "T");
    c.observation.J = get_as<std::size_t>(o, "observation", "J");
    c.observation.h = get_as<double>(o, "observation", "h");
    c.observation.x0 = to_eigen(o.at("x0"), "observation.x0");
    const auto& l = merged.at("likelihood");
    c.likelihood.kind = likelihood::model_kind_from_string(get_as<std::string>(l, "likelihood", "kind"));
    c.likelihood.ell_x = get_as<double>(l, "likelihood", "ell_x");
    c.likelihood.ell_t = get_as<double>(l, "likelihood", "ell_t");
    c.likelihood.jitter = get_as<double>(l, "likelihood", "jitter");
    c.likelihood.variance = optional_number(l.at("variance"), "likelihood.variance");
    c.likelihood.sigma2_eps = optional_number(l.at("sigma2_eps"), "likelihood.sigma2_eps");
    c.likelihood.gamma_jitter = get_as<double>(l, "likelihood", "gamma_jitter");
    c.mu0 = to_eigen(merged.at("prior").at("mu0"), "prior.mu0");
    c.sigma0 = to_eigen(merged.at("prior").at("sigma0"), "prior.sigma0");
    const auto& cal = merged.at("calibration");
    c.calibration.method = calibrate::method_from_string(get_as<std::string>(cal, "calibration", "method"));
    c.calibration.J_ensemble = get_as<std::size_t>(cal, "calibration", "J_ensemble");
    c.calibration.N = get_as<std::size_t>(cal, "calibration", "N");
    c.calibration.dt = get_as<double>(cal, "calibration", "dt");
    c.calibration.eki_noisy = get_as<bool>(cal, "calibration", "eki_noisy");
    c.calibration.eki_adaptive = get_as<bool>(cal, "calibration", "eki_adaptive");
    const auto& em = merged.at("emulation");
    c.emulation.max_points = get_as<std::size_t>(em, "emulation", "max_points");
    c.emulation.nugget = get_as<double>(em, "emulation", "nugget");
    const auto& s = merged.at("sampling");
    c.sampling.sampler = sample::sampler_from_string(get_as<std::string>(s, "sampling", "sampler"));
    c.sampling.n_samples = get_as<std::size_t>(s, "sampling", "n_samples");
    c.sampling.n_burnin = get_as<std::size_t>(s, "sampling", "n_burnin");
    c.sampling.beta = get_as<double>(s, "sampling", "beta");
    c.sampling.step = get_as<double>(s, "sampling", "step");
    c.sampling.adapt = get_as<bool>(s, "sampling", "adapt");
    c.sampling.zero_potential = get_as<bool>(s, "sampling", "zero_potential");
    const auto& pr = merged.at("prediction");
    c.prediction.n_samples = get_as<std::size_t>(pr, "prediction", "n_samples");
    c.prediction.horizon_factor = get_as<double>(pr, "prediction", "horizon_factor");
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.output_dir = merged.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("configuration: {}", e.what()));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides) {
  json user = json::object();
  if (path) {
    const std::string text = io::read_file(*path);
    try {
      user = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(fmt::format("{}: {}", path->string(), e.what()));
    }
  }
  return config_from_json(std::move(user), overrides);
}

calibrate::ForwardMap Problem::forward() const {
  return [system = system, cfg = observation, prior = prior, model = model, augmented = augmented](const Vector& v) {
    const Vector u = prior.unwhiten(v);
    auto x = dynamics::integrate(system, u, cfg);
    if (augmented) x = dynamics::augment_second_order(x);
    return model->summarize(x.values);
  };
}

Problem build_problem(const ExperimentConfig& config) {
  config.validate();
  auto system = dynamics::OdeSystem::from_name(config.system);
  prior::LogNormalPrior prior(config.mu0, config.sigma0);
  auto truth_traj = dynamics::integrate(system, config.truth, config.observation);
  const std::size_t I = truth_traj.rows();
  const std::size_t J = truth_traj.cols();

  std::shared_ptr<const likelihood::MatrixNormalModel> model;
  dynamics::TrajectoryMatrix data = truth_traj;
  double scale = 0.0;
  Matrix gamma;
  bool augmented = false;
  switch (config.likelihood.kind) {
    case likelihood::ModelKind::static_model: {
      scale = config.likelihood.sigma2_eps.value_or(likelihood::grand_centered_variance(truth_traj.values));
      model = std::make_shared<likelihood::MatrixNormalModel>(likelihood::MatrixNormalModel::static_model(I, J, scale));
      break;
    }
    case likelihood::ModelKind::time_averaged: {
      augmented = true;
      data = dynamics::augment_second_order(truth_traj);
      gamma = dynamics::estimate_gamma_obs(data, config.likelihood.gamma_jitter);
      model = std::make_shared<likelihood::MatrixNormalModel>(likelihood::MatrixNormalModel::time_averaged(gamma, J));
      break;
    }
    case likelihood::ModelKind::stgp: {
      likelihood::KernelSpec kx{likelihood::KernelFamily::squared_exponential, config.likelihood.ell_x, 1.0,
                                config.likelihood.jitter};
      likelihood::KernelSpec kt{likelihood::KernelFamily::squared_exponential, config.likelihood.ell_t, 1.0,
                                config.likelihood.jitter};
      const Matrix rx = likelihood::build_kernel_matrix(likelihood::unit_grid(I), kx);
      const Matrix rt = likelihood::build_kernel_matrix(likelihood::unit_grid(J), kt);
      double var = 0.0;
      if (config.likelihood.variance) {
        var = *config.likelihood.variance;
      } else {
        const Matrix centered_mean = truth_traj.values.rowwise().mean().replicate(1, static_cast<Eigen::Index>(J));
        var = likelihood::estimate_stgp_variance(truth_traj.values, centered_mean, rx, rt);
      }
      scale = std::sqrt(var);
      model = std::make_shared<likelihood::MatrixNormalModel>(likelihood::MatrixNormalModel::stgp(scale * rx, scale * rt));
      break;
    }
  }
  Vector y = model->summarize(data.values);
  return Problem{std::move(system), config.observation, std::move(prior), config.truth, std::move(truth_traj),
                 std::move(data), std::move(model), std::move(y), scale, std::move(gamma), augmented};
}

CalibrationRun run_calibration(const Problem& problem, const ExperimentConfig& config, std::uint64_t seed,
                               std::size_t jobs) {
  calibrate::EnkOptions opts;
  opts.method = config.calibration.method;
  opts.ensemble_size = config.calibration.J_ensemble;
  opts.iterations = config.calibration.N;
  opts.dt = config.calibration.dt;
  opts.eki_noisy = config.calibration.eki_noisy;
  opts.eki_adaptive = config.calibration.eki_adaptive;
  opts.evaluation.jobs = jobs;

  CalibrationRun run;
  run.history = calibrate::run_enk(problem.forward(), *problem.model, problem.y, problem.prior.dimension(), opts, seed);
  if (!run.history.completed) spdlog::warn("calibration (seed {}) stopped early: {}", seed, run.history.error);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < run.history.ensembles.size(); ++n) {
    const Matrix u = problem.prior.unwhiten_rows(run.history.ensembles[n].particles);
    const Vector mean = u.colwise().mean().transpose();
    run.rem_mean.push_back(analyze::rem(mean, problem.truth));
    run.rem_median.push_back(analyze::rem(analyze::componentwise_median(u), problem.truth));
    if (run.rem_mean.back() < best) {
      best = run.rem_mean.back();
      run.best_iteration = n;
    }
  }
  run.best_mean_whitened = run.history.ensembles.at(run.best_iteration).mean();
  spdlog::debug("calibration seed {}: best REM {:.4g} at iteration {}", seed, run.best_rem(), run.best_iteration);
  return run;
}

void cmd_simulate(const ExperimentConfig& config) {
  const auto problem = build_problem(config);
  const auto dir = out_dir(config);
  std::ostringstream traj, aug;
  dynamics::write_trajectory_csv(traj, problem.truth_trajectory);
  dynamics::write_trajectory_csv(aug, dynamics::augment_second_order(problem.truth_trajectory));
  io::write_atomic(dir / "truth.csv", traj.str());
  io::write_atomic(dir / "truth_augmented.csv", aug.str());
  const Matrix gamma = dynamics::estimate_gamma_obs(dynamics::augment_second_order(problem.truth_trajectory),
                                                    config.likelihood.gamma_jitter);
  io::write_atomic(dir / "gamma_obs.csv", matrix_csv(gamma, "c"));
  write_json(dir / "config.json", config.to_json());
  spdlog::info("simulate: wrote {} observation times to {}", problem.truth_trajectory.cols(), dir.string());
}

namespace {

void write_calibration_files(const std::filesystem::path& dir, const Problem& problem, const CalibrationRun& run,
                             const ExperimentConfig& config, std::uint64_t seed) {
  std::ostringstream hist, fwd;
  calibrate::write_history_csv(hist, run.history, problem.prior);
  calibrate::write_forward_csv(fwd, run.history);
  io::write_atomic(dir / "history.csv", hist.str());
  io::write_atomic(dir / "forward.csv", fwd.str());
  json side;
  side["config"] = config.to_json();
  side["seed"] = seed;
  side["model"] = std::string(likelihood::to_string(config.likelihood.kind));
  side["noise_scale"] = problem.noise_scale;
  side["completed"] = run.history.completed;
  side["error"] = run.history.error;
  side["divergences"] = run.history.divergences();
  std::vector<std::size_t> per_iter;
  for (const auto& e : run.history.ensembles) per_iter.push_back(e.resampled);
  side["divergences_per_iteration"] = per_iter;
  side["best_iteration"] = run.best_iteration;
  side["best_rem_mean"] = run.best_rem();
  side["best_rem_median"] = run.best_rem_median();
  write_json(dir / "history.json", side);
}

}  // namespace

CalibrateSummary cmd_calibrate(const ExperimentConfig& config, const RunOptions& options) {
  const auto problem = build_problem(config);
  const auto dir = out_dir(config);
  CalibrateSummary summary;
  summary.runs.resize(options.repeats);
  const std::size_t inner_jobs = options.repeats > 1 ? 1 : options.jobs;
  parallel_for(options.repeats, options.jobs, [&](std::size_t r) {
    const std::uint64_t seed = config.seed + r;
    summary.runs[r] = run_calibration(problem, config, seed, inner_jobs);
    write_calibration_files(dir / fmt::format("repeat_{:03d}", r), problem, summary.runs[r], config, seed);
    spdlog::info("calibrate repeat {} (seed {}): best REM {:.4g} at iteration {}", r, seed, summary.runs[r].best_rem(),
                 summary.runs[r].best_iteration);
  });
  io::write_atomic(dir / "rem.csv", rem_table(summary.runs));

  // per-iteration aggregation over repeats
  std::ostringstream agg;
  agg << "iter,rem_mean_avg,rem_mean_median,rem_median_avg,rem_median_median\n";
  const std::size_t iters = summary.runs.empty() ? 0 : summary.runs.front().rem_mean.size();
  for (std::size_t n = 0; n < iters; ++n) {
    std::vector<double> a, b;
    for (const auto& run : summary.runs) {
      if (n < run.rem_mean.size()) {
        a.push_back(run.rem_mean[n]);
        b.push_back(run.rem_median[n]);
      }
    }
    const auto avg = [](const std::vector<double>& xs) {
      double s = 0.0;
      for (double x : xs) s += x;
      return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
    };
    agg << n << ',' << csv_number(avg(a)) << ',' << csv_number(median_of(a)) << ',' << csv_number(avg(b)) << ','
        << csv_number(median_of(b)) << '\n';
  }
  io::write_atomic(dir / "rem_summary.csv", agg.str());

  json best = json::array();
  for (std::size_t r = 0; r < summary.runs.size(); ++r) {
    best.push_back({{"repeat", r},
                    {"seed", config.seed + r},
                    {"best_iteration", summary.runs[r].best_iteration},
                    {"best_rem_mean", summary.runs[r].best_rem()},
                    {"best_rem_median", summary.runs[r].best_rem_median()}});
  }
  write_json(dir / "calibrate.json", {{"config", config.to_json()}, {"repeats", best}});
  return summary;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config, const std::string& axis,
                                const std::vector<double>& values, const std::vector<likelihood::ModelKind>& models,
                                const RunOptions& options) {
  if (axis != "t0" && axis != "T" && axis != "J_ensemble") {
    throw ConfigError(fmt::format("sweep axis '{}' must be t0, T or J_ensemble", axis));
  }
  if (values.empty() || models.empty()) throw ConfigError("sweep needs at least one value and one model");

  struct Cell {
    std::size_t value_index;
    std::size_t model_index;
  };
  std::vector<Cell> cells;
  std::vector<std::shared_ptr<const Problem>> problems;
  std::vector<ExperimentConfig> configs;
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
      ExperimentConfig c = config;
      c.likelihood.kind = models[mi];
      if (axis == "t0") c.observation.t0 = values[vi];
      if (axis == "T") c.observation.T = values[vi];
      if (axis == "J_ensemble") {
        if (!(values[vi] >= 2.0) || values[vi] != std::floor(values[vi])) throw ConfigError("J_ensemble values must be integers >= 2");
        c.calibration.J_ensemble = static_cast<std::size_t>(values[vi]);
      }
      c.validate();
      configs.push_back(c);
      problems.push_back(std::make_shared<const Problem>(build_problem(c)));
      cells.push_back({vi, mi});
    }
  }

  std::vector<SweepRow> rows(cells.size() * options.repeats);
  parallel_for(rows.size(), options.jobs, [&](std::size_t k) {
    const std::size_t cell = k / options.repeats;
    const std::size_t r = k % options.repeats;
    const auto run = run_calibration(*problems[cell], configs[cell], config.seed + r, 1);
    rows[k] = SweepRow{values[cells[cell].value_index], models[cells[cell].model_index], r, run.best_rem(),
                       run.best_rem_median()};
    spdlog::info("sweep {}={} model={} repeat={}: REM {:.4g}", axis, values[cells[cell].value_index],
                 likelihood::to_string(models[cells[cell].model_index]), r, run.best_rem());
  });

  std::ostringstream out;
  out << "axis_value,model,repeat,rem,rem_median\n";
  for (const auto& row : rows) {
    out << csv_number(row.axis_value) << ',' << likelihood::to_string(row.model) << ',' << row.repeat << ','
        << csv_number(row.rem) << ',' << csv_number(row.rem_median) << '\n';
  }
  const auto dir = out_dir(config);
  io::write_atomic(dir / fmt::format("sweep_{}.csv", axis), out.str());
  json meta{{"config", config.to_json()}, {"axis", axis}, {"values", values}, {"repeats", options.repeats}};
  json model_names = json::array();
  for (auto m : models) model_names.push_back(std::string(likelihood::to_string(m)));
  meta["models"] = model_names;
  write_json(dir / fmt::format("sweep_{}.json", axis), meta);
  return rows;
}

std::vector<ParameterSummary> summarize_samples(const std::vector<Vector>& physical,
                                                const std::vector<std::string>& names) {
  std::vector<ParameterSummary> out;
  if (physical.empty()) return out;
  const auto p = static_cast<std::size_t>(physical.front().size());
  for (std::size_t i = 0; i < p; ++i) {
    std::vector<double> xs;
    xs.reserve(physical.size());
    double sum = 0.0;
    for (const auto& u : physical) {
      xs.push_back(u[static_cast<Eigen::Index>(i)]);
      sum += xs.back();
    }
    ParameterSummary s;
    s.name = i < names.size() ? names[i] : fmt::format("u{}", i + 1);
    s.mean = sum / static_cast<double>(xs.size());
    s.median = median_of(xs);
    s.lo95 = quantile(xs, 0.025);
    s.hi95 = quantile(xs, 0.975);
    out.push_back(s);
  }
  return out;
}

UqSummary cmd_uq(const ExperimentConfig& config, std::size_t jobs) {
  const auto problem = build_problem(config);
  const auto dir = out_dir(config);
  UqSummary s;
  s.calibration = run_calibration(problem, config, config.seed, jobs);
  write_calibration_files(dir / "calibration", problem, s.calibration, config, config.seed);

  const auto train = emulate::training_set(s.calibration.history, config.emulation.max_points);
  const auto keep = emulate::unique_rows(train.inputs);
  Matrix unique_inputs(static_cast<Eigen::Index>(keep.size()), train.inputs.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) unique_inputs.row(static_cast<Eigen::Index>(i)) = train.inputs.row(static_cast<Eigen::Index>(keep[i]));
  emulate::GpHyperparameters hyper;
  hyper.lengthscales = emulate::median_lengthscales(unique_inputs);
  hyper.nugget = config.emulation.nugget;
  const auto emulator = emulate::fit(train.inputs, train.outputs, hyper);
  emulator.save(dir / "emulator", "emulator");
  spdlog::info("uq: emulator trained on {} points (nugget {:.3g})", emulator.training_size(),
               emulator.hyperparameters().nugget);

  const emulate::EmulatedPotential potential(emulator, *problem.model, problem.y);
  sample::ChainOptions chain_opts;
  chain_opts.sampler = config.sampling.sampler;
  chain_opts.n_samples = config.sampling.n_samples;
  chain_opts.n_burnin = config.sampling.n_burnin;
  chain_opts.adapt = config.sampling.adapt;
  chain_opts.beta = config.sampling.beta;
  chain_opts.step = config.sampling.step;
  sample::Potential phi;
  sample::PotentialWithGradient phi_grad;
  if (config.sampling.zero_potential) {
    phi = [](const Vector&) { return 0.0; };
    phi_grad = [](const Vector& v) { return emulate::PotentialValue{0.0, Vector::Zero(v.size())}; };
  } else {
    phi = [&potential](const Vector& v) { return potential.value(v); };
    phi_grad = [&potential](const Vector& v) { return potential(v); };
  }
  // the chain uses its own stream, decorrelated from the calibration seed
  const std::uint64_t chain_seed = config.seed ^ 0x5eed5eed5eed5eedULL;
  const Vector start = config.sampling.zero_potential ? Vector::Zero(static_cast<Eigen::Index>(problem.prior.dimension()))
                                                      : s.calibration.best_mean_whitened;
  s.chain = sample::run_chain(chain_opts, start, phi, phi_grad, chain_seed);
  std::ostringstream chain_csv;
  sample::write_chain_csv(chain_csv, s.chain, problem.prior);
  io::write_atomic(dir / "chain.csv", chain_csv.str());

  std::vector<Vector> physical;
  physical.reserve(s.chain.size());
  for (const auto& v : s.chain.samples) physical.push_back(problem.prior.unwhiten(v));
  s.parameters = summarize_samples(physical, problem.system.parameter_names());
  Vector med(static_cast<Eigen::Index>(s.parameters.size()));
  for (std::size_t i = 0; i < s.parameters.size(); ++i) med[static_cast<Eigen::Index>(i)] = s.parameters[i].median;
  s.rem_median = analyze::rem(med, problem.truth);

  // forward prediction from evenly spaced chain samples
  const std::size_t n_pred = std::min(config.prediction.n_samples, physical.size());
  std::vector<Vector> pred_samples;
  for (std::size_t k = 0; k < n_pred; ++k) pred_samples.push_back(physical[k * physical.size() / n_pred]);
  const auto J = config.observation.J;
  const auto extra = static_cast<std::size_t>(
      std::llround((config.prediction.horizon_factor - 1.0) * static_cast<double>(J - 1)));
  s.forward = analyze::predict_forward(pred_samples, problem.system, config.observation, extra);
  s.truth_extended = dynamics::integrate(problem.system, problem.truth, config.observation, extra);
  std::ostringstream pred;
  analyze::write_prediction_csv(pred, s.forward.times, s.forward.mean, s.forward.std, s.truth_extended.values,
                                s.truth_extended.component_labels);
  io::write_atomic(dir / "prediction_forward.csv", pred.str());

  json pred_meta{{"used", s.forward.used}, {"dropped", s.forward.dropped}, {"extra_columns", extra}};
  if (config.likelihood.kind == likelihood::ModelKind::stgp) {
    analyze::SpatiotemporalNoise noise;
    noise.c_x = problem.model->row_covariance();
    noise.temporal = likelihood::KernelSpec{likelihood::KernelFamily::squared_exponential, config.likelihood.ell_t,
                                            problem.noise_scale, config.likelihood.jitter};
    const auto post = analyze::predict_posterior_stgp(pred_samples, problem.system, config.observation,
                                                      problem.truth_trajectory.values, noise, extra);
    std::ostringstream pp;
    analyze::write_prediction_csv(pp, post.times, post.mean, post.variance.cwiseMax(0.0).cwiseSqrt(),
                                  s.truth_extended.values, s.truth_extended.component_labels);
    io::write_atomic(dir / "prediction_posterior.csv", pp.str());
    pred_meta["posterior_used"] = post.used;
    pred_meta["posterior_dropped"] = post.dropped;
  }

  json summary;
  summary["config"] = config.to_json();
  summary["calibration"] = {{"best_iteration", s.calibration.best_iteration},
                            {"best_rem_mean", s.calibration.best_rem()},
                            {"best_rem_median", s.calibration.best_rem_median()}};
  summary["emulator"] = {{"training_size", emulator.training_size()}, {"nugget", emulator.hyperparameters().nugget}};
  summary["chain"] = {{"sampler", std::string(sample::to_string(s.chain.sampler))},
                      {"seed", chain_seed},
                      {"samples", s.chain.size()},
                      {"acceptance_rate", s.chain.acceptance_rate()},
                      {"burnin_acceptance", s.chain.burnin_acceptance},
                      {"parameter", s.chain.parameter},
                      {"zero_potential", config.sampling.zero_potential}};
  json params = json::array();
  for (const auto& p : s.parameters) {
    params.push_back({{"name", p.name}, {"median", p.median}, {"mean", p.mean}, {"lo95", p.lo95}, {"hi95", p.hi95}});
  }
  summary["posterior"] = params;
  summary["rem_of_median"] = s.rem_median;
  summary["prediction"] = pred_meta;
  write_json(dir / "uq_summary.json", summary);
  spdlog::info("uq: acceptance {:.3f}, REM of posterior median {:.4g}", s.chain.acceptance_rate(), s.rem_median);
  return s;
}

int cmd_fisher(const FisherOptions& options, analyze::TheoremReport* report_out) {
  std::mt19937_64 rng(options.seed);
  analyze::TheoremOptions topts;
  topts.violate_condition = options.violate_condition;
  auto r1 = analyze::verify_theorem_1(options.trials, rng, topts);
  auto r2 = analyze::verify_theorem_2(options.trials, rng, topts);
  analyze::TheoremReport report;
  report.violate_condition = options.violate_condition;
  for (auto& c : r1.checks) report.checks.push_back(std::move(c));
  for (auto& c : r2.checks) report.checks.push_back(std::move(c));
  json j = report.to_json();
  j["seed"] = options.seed;
  write_json(options.output_dir / "fisher_report.json", j);
  for (const auto& c : report.checks) {
    spdlog::info("fisher {}: {} trials, {} violations, {} condition-not-met, worst min eig {:.3g}", c.name, c.trials,
                 c.violations, c.condition_not_met, c.worst_min_eig);
  }
  const bool failed = !options.violate_condition && report.total_violations() > 0;
  if (report_out) *report_out = std::move(report);
  return failed ? 1 : 0;
}

void init_logging() {
  auto logger = spdlog::stderr_color_mt("stip");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("STIP_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only accept "off" when asked for
    if (level != spdlog::level::off || std::string_view(env) == "off") spdlog::set_level(level);
  }
}

}  // namespace stip::experiment
