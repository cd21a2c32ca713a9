#include "stip/prior.hpp"

#include <fmt/format.h>

namespace stip::prior {

LogNormalPrior::LogNormalPrior(Vector mu0, Vector sigma0) : mu0_(std::move(mu0)), sigma0_(std::move(sigma0)) {
  if (mu0_.size() == 0 || mu0_.size() != sigma0_.size()) {
    throw InvalidArgument(fmt::format("prior: mu0 has length {}, sigma0 has length {}", mu0_.size(), sigma0_.size()));
  }
  if (!mu0_.allFinite() || !sigma0_.allFinite() || (sigma0_.array() <= 0.0).any()) {
    throw InvalidArgument("prior: sigma0 must be strictly positive and all entries finite");
  }
}

LogNormalPrior LogNormalPrior::for_system(std::string_view system) {
  if (system == "lorenz63" || system == "lorenz") {
    return LogNormalPrior(Vector{{2.0, 1.2, 3.3}}, Vector{{0.2, 0.5, 0.15}});
  }
  if (system == "rossler") return LogNormalPrior(Vector{{-1.5, -1.5, 2.0}}, Vector{{0.15, 0.15, 0.2}});
  if (system == "chen") return LogNormalPrior(Vector{{3.5, 1.2, 3.3}}, Vector{{0.35, 0.5, 0.15}});
  throw InvalidArgument(fmt::format("no default prior for system '{}'", system));
}

Vector LogNormalPrior::median() const { return mu0_.array().exp(); }

Vector LogNormalPrior::sample_whitened(std::mt19937_64& rng) const {
  std::normal_distribution<double> normal;
  Vector v(mu0_.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return v;
}

std::vector<Vector> LogNormalPrior::sample(std::mt19937_64& rng, std::size_t n) const {
  std::vector<Vector> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(unwhiten(sample_whitened(rng)));
  return out;
}

Vector LogNormalPrior::whiten(const Vector& u) const {
  if (u.size() != mu0_.size()) throw InvalidArgument("whiten: dimension mismatch");
  if ((u.array() <= 0.0).any() || !u.allFinite()) {
    throw DomainError("whiten: log-normal parameters must be strictly positive and finite");
  }
  return ((u.array().log() - mu0_.array()) / sigma0_.array()).matrix();
}

Vector LogNormalPrior::unwhiten(const Vector& v) const {
  if (v.size() != mu0_.size()) throw InvalidArgument("unwhiten: dimension mismatch");
  return (mu0_.array() + sigma0_.array() * v.array()).exp().matrix();
}

Matrix LogNormalPrior::unwhiten_rows(const Matrix& v) const {
  Matrix out(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) out.row(r) = unwhiten(v.row(r).transpose()).transpose();
  return out;
}

double log_density_whitened(const Vector& v) { return -0.5 * v.squaredNorm(); }

Vector log_density_whitened_gradient(const Vector& v) { return -v; }

}  // namespace stip::prior
