#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "stip/dynamics.hpp"
#include "stip/likelihood.hpp"
#include "stip/types.hpp"

namespace stip::analyze {

/// |u_hat - u_true| / |u_true|. Throws DomainError for a zero truth.
double rem(const Vector& u_hat, const Vector& u_true);

/// Componentwise median of a set of vectors.
Vector componentwise_median(const std::vector<Vector>& xs);
Vector componentwise_median(const Matrix& rows);

/// Jacobians dY0/du_i, each I x J.
struct FisherSpec {
  std::vector<Matrix> jacobians;

  void validate() const;
};

/// Entry (i, j) = vec(A_i)^T (V^{-1} kron U^{-1}) vec(A_j) for the model's
/// covariances; the time-averaged model uses V^- = 1 1^T / J^2, giving
/// mean(A_i)^T Gamma_obs^{-1} mean(A_j).
Matrix fisher_matrix(const FisherSpec& spec, const likelihood::MatrixNormalModel& model);

struct LoewnerResult {
  bool holds = false;
  double min_eig = 0.0;
};

/// A >= B in the Loewner order iff min eig(A - B) >= -tol.
LoewnerResult check_loewner(const Matrix& a, const Matrix& b, double tol);

struct TheoremCheck {
  std::string name;  ///< e.g. "theorem1_static"
  std::size_t trials = 0;
  std::size_t violations = 0;          ///< failures with the eigenvalue condition satisfied
  std::size_t condition_not_met = 0;   ///< failures in diagnostic (condition violated) mode
  double worst_min_eig = 0.0;
  std::vector<nlohmann::json> violation_dumps;
};

struct TheoremReport {
  std::vector<TheoremCheck> checks;
  bool violate_condition = false;

  std::size_t total_violations() const;
  nlohmann::json to_json() const;
};

struct TheoremOptions {
  double margin = 0.99;           ///< fraction of the eigenvalue bound used when rescaling
  double violate_factor = 4.0;    ///< rescale factor applied in diagnostic mode
  bool violate_condition = false;
  double tol = 1e-8;
  std::size_t max_rows = 5;
  std::size_t max_cols = 6;
  std::size_t max_params = 3;
};

/// Random SPD matrix with eigenvalues in [0.1, 1].
Matrix random_spd(std::size_t n, std::mt19937_64& rng);

/// Random instances of I_ST >= I_S under
/// lmax(C_x) lmax(C_t) <= sigma2, and I_ST >= I_T under
/// lmax(C_x) lmax(C_t) <= J lmin(Gamma_obs).
TheoremReport verify_theorem_1(std::size_t trials, std::mt19937_64& rng, const TheoremOptions& options = {});
/// Random instances of C_x = Gamma_obs and lmax(C_t) <= J giving I_ST >= I_T.
TheoremReport verify_theorem_2(std::size_t trials, std::mt19937_64& rng, const TheoremOptions& options = {});

struct ForwardPrediction {
  Vector times;
  Matrix mean;  ///< I x K
  Matrix std;   ///< I x K, 1/S normalization
  Matrix lo95;
  Matrix hi95;
  std::size_t used = 0;
  std::size_t dropped = 0;  ///< samples whose trajectories diverged
};

inline constexpr double kBandZ = 1.96;

/// Re-integrates every (physical) parameter sample on the observation grid
/// continued by `extra_columns` steps of the same spacing.
ForwardPrediction predict_forward(const std::vector<Vector>& samples, const dynamics::OdeSystem& system,
                                  const dynamics::ObservationConfig& cfg, std::size_t extra_columns);

struct PosteriorPrediction {
  Vector times;     ///< t* grid
  Matrix mean;      ///< I x K
  Matrix variance;  ///< I x K, conditional (Schur) part plus sample variance of the corrected predictions
  Matrix conditional_variance;  ///< Gamma_{t*t*} - Gamma_{t*t} Gamma_tt^{-1} Gamma_{tt*}, scaled by diag(C_x)
  Matrix sample_variance;       ///< s^2 of G*(u^(s))
  std::size_t used = 0;
  std::size_t dropped = 0;
};

/// Separable spatiotemporal noise model used for posterior prediction: C_x
/// over components and a temporal kernel on times normalized by (t - t0) / T.
struct SpatiotemporalNoise {
  Matrix c_x;
  likelihood::KernelSpec temporal;
  bool independent_in_time = false;  ///< static model: no cross-covariance between times
};

/// G*(u)(t*) = G(u)(t*) + (Y - G(u)(t)) Gamma_tt^{-1} Gamma_{t t*}; mean over
/// samples and total-variance decomposition.
PosteriorPrediction predict_posterior_stgp(const std::vector<Vector>& samples, const dynamics::OdeSystem& system,
                                           const dynamics::ObservationConfig& cfg, const Matrix& y,
                                           const SpatiotemporalNoise& noise, std::size_t extra_columns);

/// `t,component,mean,std,lo95,hi95,truth` (truth may be empty).
void write_prediction_csv(std::ostream& out, const Vector& times, const Matrix& mean, const Matrix& std_dev,
                          const Matrix& truth, const std::vector<std::string>& labels);

}  // namespace stip::analyze
