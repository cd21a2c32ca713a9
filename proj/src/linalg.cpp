#include "stip/linalg.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace stip::linalg {

CholeskyFactor::CholeskyFactor(Matrix lower, double jitter)
    : lower_(std::move(lower)), jitter_(jitter) {}

Matrix CholeskyFactor::solve(const Matrix& b) const {
  const auto l = lower_.triangularView<Eigen::Lower>();
  Matrix x = l.solve(b);
  l.transpose().solveInPlace(x);
  return x;
}

Vector CholeskyFactor::solve(const Vector& b) const {
  const auto l = lower_.triangularView<Eigen::Lower>();
  Vector x = l.solve(b);
  l.transpose().solveInPlace(x);
  return x;
}

Matrix CholeskyFactor::solve_lower(const Matrix& b) const {
  return lower_.triangularView<Eigen::Lower>().solve(b);
}

Matrix CholeskyFactor::apply_lower(const Matrix& b) const {
  return lower_.triangularView<Eigen::Lower>() * b;
}

double CholeskyFactor::log_determinant() const {
  return 2.0 * lower_.diagonal().array().log().sum();
}

bool is_symmetric(const Matrix& a, double rel_tol) {
  if (a.rows() != a.cols()) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

CholeskyFactor cholesky(const Matrix& a, const JitterPolicy& policy) {
  if (a.rows() != a.cols()) {
    throw InvalidArgument(fmt::format("cholesky: matrix is {}x{}, not square", a.rows(), a.cols()));
  }
  if (a.size() == 0) throw InvalidArgument("cholesky: empty matrix");
  if (!a.allFinite()) throw InvalidArgument("cholesky: non-finite entries");
  if (!is_symmetric(a)) throw InvalidArgument("cholesky: matrix is not symmetric");

  const double mean_diag = a.diagonal().mean();
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return CholeskyFactor(llt.matrixL(), 0.0);

  if (policy.enabled && mean_diag > 0.0) {
    for (double rel = policy.initial; rel <= policy.cap * (1.0 + 1e-12); rel *= policy.growth) {
      const double jitter = rel * mean_diag;
      Matrix loaded = a;
      loaded.diagonal().array() += jitter;
      llt.compute(loaded);
      if (llt.info() == Eigen::Success) return CholeskyFactor(llt.matrixL(), jitter);
    }
  }
  throw SingularMatrix(fmt::format("cholesky: {}x{} matrix is not positive definite", a.rows(), a.cols()));
}

Vector sym_eig(const Matrix& a) {
  if (a.rows() != a.cols()) throw InvalidArgument("sym_eig: matrix is not square");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a, Eigen::EigenvaluesOnly);
  return solver.eigenvalues();
}

Matrix sym_sqrt(const Matrix& a) {
  if (a.rows() != a.cols()) throw InvalidArgument("sym_sqrt: matrix is not square");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
  Vector lambda = solver.eigenvalues();
  const double tol = 1e-10 * std::max(1.0, lambda.cwiseAbs().maxCoeff());
  if (lambda.size() > 0 && lambda.minCoeff() < -tol) {
    throw DomainError(fmt::format("sym_sqrt: eigenvalue {} is negative", lambda.minCoeff()));
  }
  lambda = lambda.cwiseMax(0.0).cwiseSqrt();
  const Matrix& q = solver.eigenvectors();
  Matrix s = q * lambda.asDiagonal() * q.transpose();
  return 0.5 * (s + s.transpose());
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Vector vec(const Matrix& a) {
  return Eigen::Map<const Vector>(a.data(), a.size());
}

}  // namespace stip::linalg
