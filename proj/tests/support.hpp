#pragma once

#include <random>

#include <Eigen/Dense>

#include "stip/types.hpp"

namespace testing {

inline stip::Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  stip::Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

inline stip::Vector random_vector(Eigen::Index n, std::mt19937_64& rng) { return random_matrix(n, 1, rng).col(0); }

/// A A^T + n I, comfortably SPD.
inline stip::Matrix random_spd(Eigen::Index n, std::mt19937_64& rng) {
  const stip::Matrix a = random_matrix(n, n, rng);
  return a * a.transpose() + static_cast<double>(n) * stip::Matrix::Identity(n, n);
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({1e-300, std::abs(a), std::abs(b)}); }

}  // namespace testing
