#pragma once

#include <cstddef>
#include <random>
#include <string_view>
#include <vector>

#include "stip/types.hpp"

namespace stip::prior {

/// log u ~ N(mu0, diag(sigma0^2)), handled in whitened coordinates
/// v = (log u - mu0) / sigma0 where the prior is exactly N(0, I).
class LogNormalPrior {
 public:
  LogNormalPrior(Vector mu0, Vector sigma0);

  /// Priors used for the chaotic benchmarks ("lorenz63", "rossler", "chen").
  static LogNormalPrior for_system(std::string_view system);

  std::size_t dimension() const { return static_cast<std::size_t>(mu0_.size()); }
  const Vector& mu0() const { return mu0_; }
  const Vector& sigma0() const { return sigma0_; }
  /// exp(mu0)
  Vector median() const;

  std::vector<Vector> sample(std::mt19937_64& rng, std::size_t n) const;
  /// Standard normal draw in whitened coordinates.
  Vector sample_whitened(std::mt19937_64& rng) const;

  /// Throws DomainError on a nonpositive component.
  Vector whiten(const Vector& u) const;
  Vector unwhiten(const Vector& v) const;
  /// Row-wise unwhitening of an n x p matrix.
  Matrix unwhiten_rows(const Matrix& v) const;

 private:
  Vector mu0_;
  Vector sigma0_;
};

/// -|v|^2 / 2; the Gaussian normalizing constant is dropped.
double log_density_whitened(const Vector& v);
Vector log_density_whitened_gradient(const Vector& v);

}  // namespace stip::prior
