#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stip/analyze.hpp"
#include "stip/calibrate.hpp"
#include "stip/dynamics.hpp"
#include "stip/likelihood.hpp"
#include "stip/prior.hpp"
#include "stip/sample.hpp"
#include "stip/types.hpp"

namespace stip::experiment {

struct LikelihoodBlock {
  likelihood::ModelKind kind = likelihood::ModelKind::stgp;
  double ell_x = 0.4;
  double ell_t = 0.1;
  double jitter = 1e-6;
  std::optional<double> variance;    ///< STGP joint variance; estimated from the data when absent
  std::optional<double> sigma2_eps;  ///< static noise; grand centered variance when absent
  double gamma_jitter = 1e-6;        ///< relative loading of Gamma_obs
};

struct CalibrationBlock {
  calibrate::Method method = calibrate::Method::eks;
  std::size_t J_ensemble = 500;
  std::size_t N = 50;
  double dt = 1.0;
  bool eki_noisy = false;
  bool eki_adaptive = false;
};

struct EmulationBlock {
  std::size_t max_points = 2000;
  double nugget = 1e-6;
};

struct SamplingBlock {
  sample::Sampler sampler = sample::Sampler::pcn;
  std::size_t n_samples = 10000;
  std::size_t n_burnin = 1000;
  double beta = 0.2;
  double step = 0.1;
  bool adapt = true;
  bool zero_potential = false;  ///< debug: sample the prior through the full pipeline
};

struct PredictionBlock {
  std::size_t n_samples = 100;
  double horizon_factor = 1.5;  ///< predict on [t0, t0 + factor T]
};

struct ExperimentConfig {
  std::string system = "lorenz63";
  Vector truth;
  dynamics::ObservationConfig observation;
  LikelihoodBlock likelihood;
  Vector mu0;
  Vector sigma0;
  CalibrationBlock calibration;
  EmulationBlock emulation;
  SamplingBlock sampling;
  PredictionBlock prediction;
  std::uint64_t seed = 2024;
  std::string output_dir = "out";

  /// Defaults of the chaotic benchmarks.
  static ExperimentConfig defaults(std::string_view system);

  /// Throws ConfigError on inconsistent fields.
  void validate() const;
  nlohmann::json to_json() const;
};

/// Sets `a.b.c` in a JSON object. The value is parsed as JSON when possible
/// and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Merges `user` over the defaults of its system (after overrides), rejects
/// unknown keys and validates.
ExperimentConfig config_from_json(nlohmann::json user, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::string>& overrides = {});

/// Truth, data and likelihood for one configuration.
struct Problem {
  dynamics::OdeSystem system;
  dynamics::ObservationConfig observation;
  prior::LogNormalPrior prior;
  Vector truth;
  dynamics::TrajectoryMatrix truth_trajectory;
  dynamics::TrajectoryMatrix data;  ///< trajectory or its augmentation, per model
  std::shared_ptr<const likelihood::MatrixNormalModel> model;
  Vector y;          ///< summarized data
  double noise_scale = 0.0;  ///< STGP sigma-hat or static sigma2_eps, 0 for time-averaged
  Matrix gamma_obs;  ///< time-averaged only
  bool augmented = false;

  /// Whitened parameter -> summarized forward output.
  calibrate::ForwardMap forward() const;
};

Problem build_problem(const ExperimentConfig& config);

struct CalibrationRun {
  calibrate::EnkHistory history;
  std::vector<double> rem_mean;    ///< REM of the ensemble mean (physical) per iteration
  std::vector<double> rem_median;  ///< REM of the componentwise median per iteration
  std::size_t best_iteration = 0;  ///< argmin of rem_mean
  double best_rem() const { return rem_mean.empty() ? 0.0 : rem_mean[best_iteration]; }
  double best_rem_median() const { return rem_median.empty() ? 0.0 : rem_median[best_iteration]; }
  Vector best_mean_whitened;
};

CalibrationRun run_calibration(const Problem& problem, const ExperimentConfig& config, std::uint64_t seed,
                               std::size_t jobs = 1);

struct RunOptions {
  std::size_t repeats = 1;
  std::size_t jobs = 1;
};

void cmd_simulate(const ExperimentConfig& config);

struct CalibrateSummary {
  std::vector<CalibrationRun> runs;  ///< one per repeat, seed = base + r
};
CalibrateSummary cmd_calibrate(const ExperimentConfig& config, const RunOptions& options);

struct SweepRow {
  double axis_value = 0.0;
  likelihood::ModelKind model = likelihood::ModelKind::stgp;
  std::size_t repeat = 0;
  double rem = 0.0;
  double rem_median = 0.0;
};
/// axis in {t0, T, J_ensemble}; one calibration per value, model and repeat.
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& config, const std::string& axis,
                                const std::vector<double>& values, const std::vector<likelihood::ModelKind>& models,
                                const RunOptions& options);

struct ParameterSummary {
  std::string name;
  double median = 0.0;
  double mean = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
};

struct UqSummary {
  CalibrationRun calibration;
  sample::PosteriorChain chain;
  std::vector<ParameterSummary> parameters;
  double rem_median = 0.0;
  analyze::ForwardPrediction forward;
  dynamics::TrajectoryMatrix truth_extended;
};
UqSummary cmd_uq(const ExperimentConfig& config, std::size_t jobs = 1);

struct FisherOptions {
  std::size_t trials = 1000;
  std::uint64_t seed = 2024;
  bool violate_condition = false;
  std::filesystem::path output_dir = "out";
};
/// Returns the process exit code: 1 on a violation with the conditions satisfied.
int cmd_fisher(const FisherOptions& options, analyze::TheoremReport* report = nullptr);

/// Marginal summaries of unwhitened samples.
std::vector<ParameterSummary> summarize_samples(const std::vector<Vector>& physical,
                                                const std::vector<std::string>& names);

/// Reads STIP_LOG and configures the default logger.
void init_logging();

}  // namespace stip::experiment
