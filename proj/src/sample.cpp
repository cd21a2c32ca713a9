#include "stip/sample.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>

namespace stip::sample {
namespace {

Vector standard_normal(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

}  // namespace

std::string_view to_string(Sampler sampler) { return sampler == Sampler::pcn ? "pcn" : "inf_mala"; }

Sampler sampler_from_string(std::string_view name) {
  if (name == "pcn") return Sampler::pcn;
  if (name == "inf_mala" || name == "infmala" || name == "mala") return Sampler::inf_mala;
  throw ConfigError(fmt::format("unknown sampler '{}'", name));
}

Vector pcn_proposal(const Vector& v, double beta, std::mt19937_64& rng) {
  return std::sqrt(1.0 - beta * beta) * v + beta * standard_normal(rng, v.size());
}

StepResult pcn_step(const Vector& v, double current_potential, const Potential& phi, double beta,
                    std::mt19937_64& rng) {
  if (!(beta > 0.0 && beta <= 1.0)) throw InvalidArgument(fmt::format("pcn_step: beta must lie in (0, 1], got {}", beta));
  const Vector proposal = pcn_proposal(v, beta, rng);
  const double proposed = phi(proposal);
  // Always consume the uniform so the stream does not depend on the outcome.
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double log_u = std::log(uniform(rng));
  const double log_ratio = current_potential - proposed;
  if (std::isfinite(proposed) && (log_ratio >= 0.0 || log_u < log_ratio)) return {proposal, proposed, true};
  return {v, current_potential, false};
}

double equivalent_pcn_beta(double step) { return std::sqrt(step) / (1.0 + step / 4.0); }

Vector inf_mala_proposal(const Vector& v, const Vector& gradient, double step, const Vector& momentum) {
  const double rh = std::sqrt(step);
  const Vector kicked = momentum - 0.5 * rh * gradient;
  return ((1.0 - step / 4.0) * v + rh * kicked) / (1.0 + step / 4.0);
}

StepResult inf_mala_step(const Vector& v, const emulate::PotentialValue& current, const PotentialWithGradient& phi,
                         double step, std::mt19937_64& rng, emulate::PotentialValue* proposal_value) {
  if (!(step > 0.0)) throw InvalidArgument("inf_mala_step: step must be > 0");
  const double rh = std::sqrt(step);
  const double a = (1.0 - step / 4.0) / (1.0 + step / 4.0);
  const double b = rh / (1.0 + step / 4.0);

  const Vector momentum = standard_normal(rng, v.size());
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double log_u = std::log(uniform(rng));
  if (!current.gradient.allFinite()) return {v, current.value, false};

  const Vector kicked = momentum - 0.5 * rh * current.gradient;
  const Vector moved = a * v + b * kicked;
  const Vector rotated = a * kicked - b * v;
  const emulate::PotentialValue next = phi(moved);
  if (proposal_value) *proposal_value = next;
  if (!std::isfinite(next.value) || !next.gradient.allFinite()) return {v, current.value, false};
  const Vector final_momentum = rotated - 0.5 * rh * next.gradient;

  const double log_ratio = current.value - next.value + 0.5 * momentum.squaredNorm() - 0.5 * kicked.squaredNorm() +
                           0.5 * rotated.squaredNorm() - 0.5 * final_momentum.squaredNorm();
  if (std::isfinite(log_ratio) && (log_ratio >= 0.0 || log_u < log_ratio)) return {moved, next.value, true};
  return {v, current.value, false};
}

double PosteriorChain::acceptance_rate() const {
  if (accepted.empty()) return 0.0;
  return static_cast<double>(std::count(accepted.begin(), accepted.end(), true)) / static_cast<double>(accepted.size());
}

PosteriorChain run_chain(const ChainOptions& options, const Vector& start, const Potential& phi,
                         const PotentialWithGradient& phi_grad, std::uint64_t seed) {
  if (options.n_samples < 1) throw InvalidArgument("run_chain: n_samples must be >= 1");
  const bool mala = options.sampler == Sampler::inf_mala;
  if (mala && !phi_grad) throw InvalidArgument("run_chain: infinity-MALA needs a potential with gradient");
  if (!mala && !phi && !phi_grad) throw InvalidArgument("run_chain: no potential supplied");
  const Potential value_only = phi ? phi : Potential([&phi_grad](const Vector& v) { return phi_grad(v).value; });

  std::mt19937_64 rng(seed);
  PosteriorChain chain;
  chain.sampler = options.sampler;
  chain.seed = seed;
  double parameter = mala ? options.step : options.beta;
  chain.burnin_parameter = parameter;

  Vector v = start;
  emulate::PotentialValue current;
  if (mala) {
    current = phi_grad(v);
  } else {
    current.value = value_only(v);
  }

  auto step_once = [&](double param) {
    if (mala) {
      emulate::PotentialValue proposed;
      StepResult r = inf_mala_step(v, current, phi_grad, param, rng, &proposed);
      if (r.accepted) {
        v = std::move(r.state);
        current = std::move(proposed);
      }
      return r.accepted;
    }
    StepResult r = pcn_step(v, current.value, value_only, param, rng);
    if (r.accepted) {
      v = std::move(r.state);
      current.value = r.potential;
    }
    return r.accepted;
  };

  // Robbins-Monro on log(parameter) toward the middle of the target band.
  const double target = 0.5 * (options.target_low + options.target_high);
  double log_param = std::log(parameter);
  std::size_t burn_accepted = 0;
  for (std::size_t i = 0; i < options.n_burnin; ++i) {
    const bool ok = step_once(parameter);
    burn_accepted += ok ? 1 : 0;
    if (options.adapt) {
      const double gain = 1.0 / std::pow(static_cast<double>(i) + 1.0, 0.6);
      log_param += gain * ((ok ? 1.0 : 0.0) - target);
      // beta <= 1; for h > 4 the rotation turns back toward -v, so h = 4 (an independent draw) is the largest useful step
      log_param = std::min(log_param, mala ? std::log(4.0) : 0.0);
      log_param = std::max(log_param, std::log(1e-6));
      parameter = std::exp(log_param);
    }
  }
  chain.burnin_acceptance =
      options.n_burnin ? static_cast<double>(burn_accepted) / static_cast<double>(options.n_burnin) : 0.0;
  chain.parameter = parameter;

  chain.samples.reserve(options.n_samples);
  chain.potentials.reserve(options.n_samples);
  chain.accepted.reserve(options.n_samples);
  for (std::size_t i = 0; i < options.n_samples; ++i) {
    const bool ok = step_once(parameter);
    chain.samples.push_back(v);
    chain.potentials.push_back(current.value);
    chain.accepted.push_back(ok);
  }
  return chain;
}

void write_chain_csv(std::ostream& out, const PosteriorChain& chain, const prior::LogNormalPrior& prior) {
  const std::size_t p = prior.dimension();
  out << "idx";
  for (std::size_t i = 1; i <= p; ++i) out << ",v" << i;
  for (std::size_t i = 1; i <= p; ++i) out << ",u" << i;
  out << ",phi,accepted\n";
  for (std::size_t s = 0; s < chain.samples.size(); ++s) {
    const Vector& v = chain.samples[s];
    const Vector u = prior.unwhiten(v);
    out << s;
    for (Eigen::Index i = 0; i < v.size(); ++i) out << fmt::format(",{:.17g}", v[i]);
    for (Eigen::Index i = 0; i < u.size(); ++i) out << fmt::format(",{:.17g}", u[i]);
    out << fmt::format(",{:.17g},{}\n", chain.potentials[s], chain.accepted[s] ? 1 : 0);
  }
}

}  // namespace stip::sample
