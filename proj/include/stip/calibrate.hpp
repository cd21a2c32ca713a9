#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "stip/likelihood.hpp"
#include "stip/prior.hpp"
#include "stip/types.hpp"

namespace stip::calibrate {

enum class Method { eki, eks };

std::string_view to_string(Method method);
Method method_from_string(std::string_view name);

/// Whitened parameter -> flattened data vector. May throw DivergenceError.
using ForwardMap = std::function<Vector(const Vector& v)>;

/// Independent random streams keyed by counters, so results do not depend on
/// the order in which particles are processed.
class StreamSeeder {
 public:
  enum Purpose : std::uint64_t { kInitial = 1, kNoise = 2, kResample = 3 };

  explicit StreamSeeder(std::uint64_t seed) : seed_(seed) {}
  std::uint64_t seed() const { return seed_; }
  std::mt19937_64 stream(std::uint64_t iteration, std::uint64_t particle, std::uint64_t purpose,
                         std::uint64_t attempt = 0) const;

 private:
  std::uint64_t seed_;
};

struct Ensemble {
  Matrix particles;       ///< J x p, whitened
  Matrix forward_values;  ///< J x q
  std::size_t iteration = 0;
  double step_size = 0.0;
  std::size_t resampled = 0;  ///< divergent particles replaced by prior draws in this iteration

  std::size_t size() const { return static_cast<std::size_t>(particles.rows()); }
  Vector mean() const { return particles.colwise().mean().transpose(); }
};

struct EvaluationOptions {
  std::size_t jobs = 1;
  std::size_t max_resample_attempts = 100;
};

/// Evaluates the forward map on every particle row. A particle whose forward
/// run diverges is replaced by a fresh whitened prior draw (its own stream)
/// and re-evaluated.
void evaluate_ensemble(Ensemble& ens, const ForwardMap& forward, const StreamSeeder& seeder,
                       const EvaluationOptions& options = {});

Ensemble initial_ensemble(std::size_t particles, std::size_t dimension, const ForwardMap& forward,
                          const StreamSeeder& seeder, const EvaluationOptions& options = {});

/// Explicit Euler(-Maruyama) step of the EKI flow. With `noisy`, the
/// innovation carries Gamma^{1/2} dW / dt.
Ensemble eki_step(const Ensemble& ens, const Vector& y, const likelihood::DataMetric& gamma, double dt, bool noisy,
                  const StreamSeeder& seeder, const ForwardMap& forward, const EvaluationOptions& options = {});

struct EksTerms {
  bool prior_drift = true;
  bool noise = true;
};

/// Euler-Maruyama step of the EKS flow with adaptive step dt0 / (|D|_F + 1e-8).
/// The prior drift -C(u) u is taken linearly implicit: (I + dt C) u' = u - dt D (u - u_bar).
Ensemble eks_step(const Ensemble& ens, const Vector& y, const likelihood::DataMetric& gamma, double dt0,
                  const StreamSeeder& seeder, const ForwardMap& forward, const EvaluationOptions& options = {},
                  EksTerms terms = {});

/// Adaptive step used by eks_step (and by EKI when requested).
double adaptive_step(const Ensemble& ens, const Vector& y, const likelihood::DataMetric& gamma, double dt0);

struct EnkOptions {
  Method method = Method::eks;
  std::size_t ensemble_size = 100;
  std::size_t iterations = 50;
  double dt = 1.0;            ///< EKI step, or EKS base step dt0
  bool eki_noisy = false;     ///< Sigma = Gamma instead of 0
  bool eki_adaptive = false;  ///< scale the EKI step like EKS
  EvaluationOptions evaluation;
};

struct EnkHistory {
  std::vector<Ensemble> ensembles;  ///< iterations 0..N
  std::uint64_t seed = 0;
  bool completed = true;
  std::string error;  ///< set when a step aborted; `ensembles` holds the partial run

  std::size_t divergences() const;
};

/// Draws the initial ensemble from the whitened prior N(0, I) and runs N steps.
EnkHistory run_enk(const ForwardMap& forward, const likelihood::DataMetric& gamma, const Vector& y,
                   std::size_t dimension, const EnkOptions& options, std::uint64_t seed);

/// `iter,particle,v1..vp,u1..up`, 17 significant digits.
void write_history_csv(std::ostream& out, const EnkHistory& history, const prior::LogNormalPrior& prior);
/// `iter,particle,g1..gq`.
void write_forward_csv(std::ostream& out, const EnkHistory& history);

}  // namespace stip::calibrate
