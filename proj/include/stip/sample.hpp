#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string_view>
#include <vector>

#include "stip/emulate.hpp"
#include "stip/prior.hpp"
#include "stip/types.hpp"

namespace stip::sample {

/// Negative log-likelihood in whitened coordinates (the prior N(0, I) is handled by the proposals).
using Potential = std::function<double(const Vector&)>;
using PotentialWithGradient = std::function<emulate::PotentialValue(const Vector&)>;

enum class Sampler { pcn, inf_mala };

std::string_view to_string(Sampler sampler);
Sampler sampler_from_string(std::string_view name);

struct StepResult {
  Vector state;
  double potential = 0.0;
  bool accepted = false;
};

/// pCN: v' = sqrt(1 - beta^2) v + beta xi, accepted with min(1, exp(Phi(v) - Phi(v'))).
/// `current_potential` is Phi(v).
StepResult pcn_step(const Vector& v, double current_potential, const Potential& phi, double beta,
                    std::mt19937_64& rng);

/// pCN proposal only (no accept/reject).
Vector pcn_proposal(const Vector& v, double beta, std::mt19937_64& rng);

/// One-step Hamiltonian (infinity-MALA) move for N(0, I) prior times exp(-Phi):
/// half gradient kick p+ = p - sqrt(h)/2 grad Phi(v), exact prior rotation
///   v' = ((1 - h/4) v + sqrt(h) p+) / (1 + h/4),
/// second half kick, and Metropolis correction on the total energy.
/// With a zero gradient the move is pCN with beta = sqrt(h) / (1 + h/4).
StepResult inf_mala_step(const Vector& v, const emulate::PotentialValue& current, const PotentialWithGradient& phi,
                         double step, std::mt19937_64& rng, emulate::PotentialValue* proposal_value = nullptr);

/// Proposal of inf_mala_step (before accept/reject) for a given momentum draw.
Vector inf_mala_proposal(const Vector& v, const Vector& gradient, double step, const Vector& momentum);

/// beta of the pCN proposal equivalent to an infinity-MALA step size h.
double equivalent_pcn_beta(double step);

struct ChainOptions {
  Sampler sampler = Sampler::pcn;
  std::size_t n_samples = 10000;
  std::size_t n_burnin = 1000;
  bool adapt = true;
  double beta = 0.2;   ///< pCN step
  double step = 0.1;   ///< infinity-MALA step h
  double target_low = 0.20;
  double target_high = 0.30;
};

struct PosteriorChain {
  std::vector<Vector> samples;
  std::vector<double> potentials;
  std::vector<bool> accepted;
  Sampler sampler = Sampler::pcn;
  double burnin_parameter = 0.0;  ///< beta or h at the start of burn-in
  double parameter = 0.0;         ///< frozen beta or h used after burn-in
  double burnin_acceptance = 0.0;
  std::uint64_t seed = 0;

  double acceptance_rate() const;
  std::size_t size() const { return samples.size(); }
};

/// Runs burn-in (optionally adapting beta / h by Robbins-Monro toward the
/// middle of [target_low, target_high]) and returns the post-burn-in chain.
/// Either `phi` (pcn) or `phi_grad` (either sampler) must be provided.
PosteriorChain run_chain(const ChainOptions& options, const Vector& start, const Potential& phi,
                         const PotentialWithGradient& phi_grad, std::uint64_t seed);

/// `idx,v1..vp,u1..up,phi,accepted`, 17 significant digits.
void write_chain_csv(std::ostream& out, const PosteriorChain& chain, const prior::LogNormalPrior& prior);

}  // namespace stip::sample
