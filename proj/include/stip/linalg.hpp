#pragma once

#include <cstddef>

#include "stip/types.hpp"

namespace stip::linalg {

/// Diagonal loading schedule for Cholesky factorization. All magnitudes are
/// relative to the mean diagonal of the matrix being factored.
struct JitterPolicy {
  bool enabled = true;
  double initial = 1e-10;
  double growth = 10.0;
  double cap = 1e-2;

  static JitterPolicy none() { return JitterPolicy{false, 0.0, 1.0, 0.0}; }
};

class CholeskyFactor {
 public:
  CholeskyFactor() = default;
  CholeskyFactor(Matrix lower, double jitter);

  std::size_t dimension() const { return static_cast<std::size_t>(lower_.rows()); }
  const Matrix& lower() const { return lower_; }
  /// Absolute diagonal loading that was added before the factorization succeeded.
  double jitter() const { return jitter_; }

  /// A^{-1} b
  Matrix solve(const Matrix& b) const;
  Vector solve(const Vector& b) const;
  /// L^{-1} b
  Matrix solve_lower(const Matrix& b) const;
  /// L b
  Matrix apply_lower(const Matrix& b) const;
  double log_determinant() const;

 private:
  Matrix lower_;
  double jitter_ = 0.0;
};

/// Factor a symmetric matrix, escalating the diagonal loading per `policy`.
/// Throws SingularMatrix when even the capped loading fails and
/// InvalidArgument when `a` is not symmetric to 1e-10 (relative).
CholeskyFactor cholesky(const Matrix& a, const JitterPolicy& policy = JitterPolicy{});

/// Eigenvalues of a symmetric matrix, ascending.
Vector sym_eig(const Matrix& a);

/// Symmetric square root via eigendecomposition. Eigenvalues down to
/// -1e-10 (scaled by the spectral radius when that exceeds one) are clamped to zero.
Matrix sym_sqrt(const Matrix& a);

Matrix kron(const Matrix& a, const Matrix& b);

/// Column-major vectorization.
Vector vec(const Matrix& a);

bool is_symmetric(const Matrix& a, double rel_tol = 1e-10);

}  // namespace stip::linalg
