#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "stip/calibrate.hpp"
#include "stip/likelihood.hpp"
#include "stip/types.hpp"

namespace stip::emulate {

struct GpHyperparameters {
  Vector lengthscales;  ///< one per input dimension
  double signal_variance = 1.0;
  double nugget = 1e-6;  ///< relative to the signal variance
};

/// Gaussian-process regression of every output dimension on a shared
/// squared-exponential kernel with per-dimension lengthscales. The prior mean
/// of each output is its training mean.
class GpEmulator {
 public:
  std::size_t input_dim() const { return static_cast<std::size_t>(inputs_.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(weights_.cols()); }
  std::size_t training_size() const { return static_cast<std::size_t>(inputs_.rows()); }
  const GpHyperparameters& hyperparameters() const { return hyper_; }
  const Matrix& inputs() const { return inputs_; }
  const Matrix& weights() const { return weights_; }
  const Vector& output_mean() const { return output_mean_; }

  Vector predict_mean(const Vector& v) const;
  /// d mean / d v, q x p.
  Matrix predict_gradient(const Vector& v) const;

  /// Writes `<stem>.json` plus `<stem>_inputs.csv` and `<stem>_weights.csv` in `dir`.
  void save(const std::filesystem::path& dir, const std::string& stem) const;
  static GpEmulator load(const std::filesystem::path& manifest);

 private:
  friend GpEmulator fit(const Matrix&, const Matrix&, const std::optional<GpHyperparameters>&);
  Vector kernel_row(const Vector& v) const;

  Matrix inputs_;   ///< n x p
  Matrix weights_;  ///< n x q, K^{-1} (outputs - mean)
  Vector output_mean_;
  Vector inv_sq_lengthscales_;
  GpHyperparameters hyper_;
};

/// Row indices of `inputs` with no earlier row within `tol` (Euclidean).
std::vector<std::size_t> unique_rows(const Matrix& inputs, double tol = 1e-10);

/// Greedy farthest-point selection of at most `max_points` rows, starting from row 0.
std::vector<std::size_t> farthest_point_subset(const Matrix& inputs, std::size_t max_points);

/// Per-dimension median of pairwise absolute differences (at most `max_rows` rows used).
Vector median_lengthscales(const Matrix& inputs, std::size_t max_rows = 2000);

/// Deduplicates, then fits. Without explicit hyperparameters the median
/// heuristic sets lengthscales, the output variance sets the signal
/// variance and the nugget is 1e-6. A failed factorization retries with the
/// nugget multiplied by 10 up to 1e-2.
GpEmulator fit(const Matrix& inputs, const Matrix& outputs,
               const std::optional<GpHyperparameters>& hyper = std::nullopt);

struct TrainingSet {
  Matrix inputs;
  Matrix outputs;
};

/// All unique particles of an EnK history, thinned by farthest-point selection to `max_points`.
TrainingSet training_set(const calibrate::EnkHistory& history, std::size_t max_points = 2000);

struct PotentialValue {
  double value = 0.0;
  Vector gradient;
};

/// v -> (Phi^e(v), grad Phi^e(v)) with Phi^e(v) = 1/2 |W (G^e(v) - y)|^2.
class EmulatedPotential {
 public:
  EmulatedPotential(const GpEmulator& emulator, const likelihood::DataMetric& metric, Vector y);

  PotentialValue operator()(const Vector& v) const;
  double value(const Vector& v) const;

 private:
  const GpEmulator* emulator_;
  const likelihood::DataMetric* metric_;
  Vector y_;
};

}  // namespace stip::emulate
