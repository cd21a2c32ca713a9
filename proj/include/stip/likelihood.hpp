#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "stip/linalg.hpp"
#include "stip/types.hpp"

namespace stip::likelihood {

enum class KernelFamily { squared_exponential, identity_scaled };

struct KernelSpec {
  KernelFamily family = KernelFamily::squared_exponential;
  double lengthscale = 1.0;  ///< in normalized coordinates
  double variance = 1.0;
  double jitter = 1e-6;  ///< relative diagonal loading (times variance)

  void validate() const;
};

/// K[i,j] = variance * exp(-(p_i - p_j)^2 / (2 l^2)), plus jitter * variance on the diagonal.
/// `identity_scaled` gives variance * (1 + jitter) * I.
Matrix build_kernel_matrix(const Vector& points, const KernelSpec& spec);
/// Cross-covariance between two point sets (no jitter).
Matrix build_cross_kernel(const Vector& rows, const Vector& cols, const KernelSpec& spec);

/// n equispaced points on [0, 1]; {0} when n == 1.
Vector unit_grid(std::size_t n);

double potential_static(const Matrix& y, const Matrix& m, double sigma2_eps);
/// 1/2 r^T Gamma^{-1} r with r the difference of row means.
double potential_time_averaged(const Matrix& y, const Matrix& m, const Matrix& gamma_obs);
/// 1/2 tr[C_t^{-1} (Y-M)^T C_x^{-1} (Y-M)] via Cholesky solves.
double potential_stgp(const Matrix& y, const Matrix& m, const Matrix& c_x, const Matrix& c_t);

/// Maximum-likelihood scale tr[R_t^{-1} R0^T R_x^{-1} R0] / (I J) for
/// correlation matrices R_x, R_t, floored at 1e-12.
double estimate_stgp_variance(const Matrix& y, const Matrix& m, const Matrix& r_x, const Matrix& r_t);

inline constexpr double kVarianceFloor = 1e-12;

/// Gaussian inner product <a, b>_Gamma = (W a)^T (W b) on flattened data
/// vectors, exposed through a whitening map W and its inverse-transpose
/// "coloring" map (so that color(xi) with xi ~ N(0, I) has covariance Gamma).
class DataMetric {
 public:
  virtual ~DataMetric() = default;
  virtual std::size_t data_size() const = 0;
  /// Applies W to every column.
  virtual Matrix whiten(const Matrix& columns) const = 0;
  /// Applies Gamma^{1/2} (a square-root factor) to every column.
  virtual Matrix color(const Matrix& columns) const = 0;

  Vector whiten(const Vector& d) const { return whiten(Matrix(d)).col(0); }
  double inner(const Vector& a, const Vector& b) const { return whiten(a).dot(whiten(b)); }
};

/// Dense SPD covariance.
class DenseMetric final : public DataMetric {
 public:
  explicit DenseMetric(const Matrix& gamma);
  std::size_t data_size() const override { return factor_.dimension(); }
  Matrix whiten(const Matrix& columns) const override;
  Matrix color(const Matrix& columns) const override;
  using DataMetric::whiten;

 private:
  linalg::CholeskyFactor factor_;
};

enum class ModelKind { static_model, time_averaged, stgp };

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view name);

/// Matrix-normal residual model MN(M, U, V) for I x J data.
///   static:        U = sigma2 * I,   V = I
///   time-averaged: U = Gamma_obs,    V = J^2 (1 1^T)^-  (acts on row means)
///   stgp:          U = C_x,          V = C_t
///
/// Data enter the metric through summarize(): vec(X) (column-major) for
/// static and STGP, row means for time-averaged. Factors are computed once
/// at construction; instances are immutable.
class MatrixNormalModel final : public DataMetric {
 public:
  static MatrixNormalModel static_model(std::size_t rows, std::size_t cols, double sigma2_eps);
  static MatrixNormalModel time_averaged(const Matrix& gamma_obs, std::size_t cols);
  static MatrixNormalModel stgp(const Matrix& c_x, const Matrix& c_t);

  ModelKind kind() const { return kind_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t data_size() const override;

  double sigma2() const { return sigma2_; }
  /// Row covariance U (sigma2 I for static, Gamma_obs, or C_x).
  const Matrix& row_covariance() const { return u_; }
  /// Column covariance V; empty for the time-averaged model.
  const Matrix& column_covariance() const { return v_; }

  Vector summarize(const Matrix& x) const;
  Matrix whiten(const Matrix& columns) const override;
  Matrix color(const Matrix& columns) const override;
  using DataMetric::whiten;

  double potential(const Matrix& y, const Matrix& m) const;
  /// Potential between already-summarized data vectors.
  double potential_data(const Vector& y, const Vector& m) const;

 private:
  MatrixNormalModel() = default;
  void check_shape(const Matrix& x) const;

  ModelKind kind_ = ModelKind::static_model;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  double sigma2_ = 1.0;
  Matrix u_;
  Matrix v_;
  linalg::CholeskyFactor u_factor_;
  linalg::CholeskyFactor v_factor_;
};

/// Mean of squared deviations from the row means over all entries.
double grand_centered_variance(const Matrix& x);

}  // namespace stip::likelihood
