#include "stip/likelihood.hpp"

#include <cmath>

#include <fmt/format.h>

namespace stip::likelihood {
namespace {

void require_same_shape(const Matrix& y, const Matrix& m, const char* who) {
  if (y.rows() != m.rows() || y.cols() != m.cols()) {
    throw InvalidArgument(fmt::format("{}: shape mismatch {}x{} vs {}x{}", who, y.rows(), y.cols(), m.rows(), m.cols()));
  }
}

linalg::CholeskyFactor factor_named(const Matrix& a, const char* name) {
  try {
    return linalg::cholesky(a, linalg::JitterPolicy::none());
  } catch (const SingularMatrix&) {
    throw SingularMatrix(fmt::format("{} is not positive definite", name));
  }
}

}  // namespace

void KernelSpec::validate() const {
  if (!(lengthscale > 0.0)) throw InvalidArgument(fmt::format("kernel lengthscale must be > 0 (got {})", lengthscale));
  if (!(variance > 0.0)) throw InvalidArgument(fmt::format("kernel variance must be > 0 (got {})", variance));
  if (!(jitter >= 0.0)) throw InvalidArgument(fmt::format("kernel jitter must be >= 0 (got {})", jitter));
}

Matrix build_cross_kernel(const Vector& rows, const Vector& cols, const KernelSpec& spec) {
  spec.validate();
  if (!rows.allFinite() || !cols.allFinite()) throw InvalidArgument("kernel points must be finite");
  Matrix k(rows.size(), cols.size());
  if (spec.family == KernelFamily::identity_scaled) {
    for (Eigen::Index i = 0; i < rows.size(); ++i) {
      for (Eigen::Index j = 0; j < cols.size(); ++j) k(i, j) = rows[i] == cols[j] ? spec.variance : 0.0;
    }
    return k;
  }
  const double inv = 1.0 / (2.0 * spec.lengthscale * spec.lengthscale);
  for (Eigen::Index i = 0; i < rows.size(); ++i) {
    for (Eigen::Index j = 0; j < cols.size(); ++j) {
      const double d = rows[i] - cols[j];
      k(i, j) = spec.variance * std::exp(-d * d * inv);
    }
  }
  return k;
}

Matrix build_kernel_matrix(const Vector& points, const KernelSpec& spec) {
  Matrix k;
  if (spec.family == KernelFamily::identity_scaled) {
    spec.validate();
    k = spec.variance * Matrix::Identity(points.size(), points.size());
  } else {
    k = build_cross_kernel(points, points, spec);
  }
  k.diagonal().array() += spec.jitter * spec.variance;
  return k;
}

Vector unit_grid(std::size_t n) {
  if (n == 0) return Vector();
  if (n == 1) return Vector::Zero(1);
  return Vector::LinSpaced(static_cast<Eigen::Index>(n), 0.0, 1.0);
}

double potential_static(const Matrix& y, const Matrix& m, double sigma2_eps) {
  require_same_shape(y, m, "potential_static");
  if (!(sigma2_eps > 0.0)) throw InvalidArgument("potential_static: variance must be > 0");
  return 0.5 * (y - m).squaredNorm() / sigma2_eps;
}

double potential_time_averaged(const Matrix& y, const Matrix& m, const Matrix& gamma_obs) {
  require_same_shape(y, m, "potential_time_averaged");
  if (gamma_obs.rows() != y.rows() || gamma_obs.cols() != y.rows()) {
    throw InvalidArgument("potential_time_averaged: Gamma_obs must be I x I");
  }
  const auto factor = factor_named(gamma_obs, "Gamma_obs");
  const Vector r = y.rowwise().mean() - m.rowwise().mean();
  return 0.5 * factor.solve_lower(r).squaredNorm();
}

double potential_stgp(const Matrix& y, const Matrix& m, const Matrix& c_x, const Matrix& c_t) {
  require_same_shape(y, m, "potential_stgp");
  if (c_x.rows() != y.rows() || c_x.cols() != y.rows()) throw InvalidArgument("potential_stgp: C_x must be I x I");
  if (c_t.rows() != y.cols() || c_t.cols() != y.cols()) throw InvalidArgument("potential_stgp: C_t must be J x J");
  const auto lx = factor_named(c_x, "spatial kernel C_x");
  const auto lt = factor_named(c_t, "temporal kernel C_t");
  // || L_x^{-1} R L_t^{-T} ||_F^2
  const Matrix a = lx.solve_lower(y - m);
  const Matrix b = lt.solve_lower(a.transpose());
  return 0.5 * b.squaredNorm();
}

double estimate_stgp_variance(const Matrix& y, const Matrix& m, const Matrix& r_x, const Matrix& r_t) {
  const double phi = potential_stgp(y, m, r_x, r_t);
  const double s2 = 2.0 * phi / static_cast<double>(y.size());
  return std::max(s2, kVarianceFloor);
}

double grand_centered_variance(const Matrix& x) {
  if (x.size() == 0) throw InvalidArgument("grand_centered_variance: empty matrix");
  const Matrix centered = x.colwise() - x.rowwise().mean();
  return centered.squaredNorm() / static_cast<double>(x.size());
}

DenseMetric::DenseMetric(const Matrix& gamma) : factor_(factor_named(gamma, "data covariance")) {}

Matrix DenseMetric::whiten(const Matrix& columns) const { return factor_.solve_lower(columns); }
Matrix DenseMetric::color(const Matrix& columns) const { return factor_.apply_lower(columns); }

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::static_model: return "static";
    case ModelKind::time_averaged: return "time_averaged";
    case ModelKind::stgp: return "stgp";
  }
  return "?";
}

ModelKind model_kind_from_string(std::string_view name) {
  if (name == "static") return ModelKind::static_model;
  if (name == "time_averaged" || name == "time-averaged" || name == "tavg") return ModelKind::time_averaged;
  if (name == "stgp") return ModelKind::stgp;
  throw ConfigError(fmt::format("unknown likelihood kind '{}'", name));
}

MatrixNormalModel MatrixNormalModel::static_model(std::size_t rows, std::size_t cols, double sigma2_eps) {
  if (!(sigma2_eps > 0.0)) throw InvalidArgument("static model: variance must be > 0");
  if (rows == 0 || cols == 0) throw InvalidArgument("static model: empty shape");
  MatrixNormalModel m;
  m.kind_ = ModelKind::static_model;
  m.rows_ = rows;
  m.cols_ = cols;
  m.sigma2_ = sigma2_eps;
  m.u_ = sigma2_eps * Matrix::Identity(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(rows));
  m.v_ = Matrix::Identity(static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(cols));
  return m;
}

MatrixNormalModel MatrixNormalModel::time_averaged(const Matrix& gamma_obs, std::size_t cols) {
  if (gamma_obs.rows() != gamma_obs.cols() || gamma_obs.rows() == 0) {
    throw InvalidArgument("time-averaged model: Gamma_obs must be square and nonempty");
  }
  if (cols == 0) throw InvalidArgument("time-averaged model: J must be >= 1");
  MatrixNormalModel m;
  m.kind_ = ModelKind::time_averaged;
  m.rows_ = static_cast<std::size_t>(gamma_obs.rows());
  m.cols_ = cols;
  m.u_ = gamma_obs;
  m.u_factor_ = factor_named(gamma_obs, "Gamma_obs");
  return m;
}

MatrixNormalModel MatrixNormalModel::stgp(const Matrix& c_x, const Matrix& c_t) {
  MatrixNormalModel m;
  m.kind_ = ModelKind::stgp;
  m.rows_ = static_cast<std::size_t>(c_x.rows());
  m.cols_ = static_cast<std::size_t>(c_t.rows());
  m.u_ = c_x;
  m.v_ = c_t;
  m.u_factor_ = factor_named(c_x, "spatial kernel C_x");
  m.v_factor_ = factor_named(c_t, "temporal kernel C_t");
  return m;
}

std::size_t MatrixNormalModel::data_size() const {
  return kind_ == ModelKind::time_averaged ? rows_ : rows_ * cols_;
}

void MatrixNormalModel::check_shape(const Matrix& x) const {
  if (static_cast<std::size_t>(x.rows()) != rows_ || static_cast<std::size_t>(x.cols()) != cols_) {
    throw InvalidArgument(fmt::format("{} model expects {}x{} data, got {}x{}", to_string(kind_), rows_, cols_,
                                      x.rows(), x.cols()));
  }
}

Vector MatrixNormalModel::summarize(const Matrix& x) const {
  check_shape(x);
  if (kind_ == ModelKind::time_averaged) return x.rowwise().mean();
  return linalg::vec(x);
}

Matrix MatrixNormalModel::whiten(const Matrix& columns) const {
  if (static_cast<std::size_t>(columns.rows()) != data_size()) {
    throw InvalidArgument(fmt::format("{} model: data vectors have length {}, expected {}", to_string(kind_),
                                      columns.rows(), data_size()));
  }
  switch (kind_) {
    case ModelKind::static_model: return columns / std::sqrt(sigma2_);
    case ModelKind::time_averaged: return u_factor_.solve_lower(columns);
    case ModelKind::stgp: {
      const auto i = static_cast<Eigen::Index>(rows_);
      const auto j = static_cast<Eigen::Index>(cols_);
      Matrix out(columns.rows(), columns.cols());
      for (Eigen::Index c = 0; c < columns.cols(); ++c) {
        const Eigen::Map<const Matrix> r(columns.col(c).data(), i, j);
        const Matrix a = u_factor_.solve_lower(r);
        const Matrix b = v_factor_.solve_lower(a.transpose()).transpose();  // L_x^{-1} R L_t^{-T}
        out.col(c) = Eigen::Map<const Vector>(b.data(), b.size());
      }
      return out;
    }
  }
  return columns;
}

Matrix MatrixNormalModel::color(const Matrix& columns) const {
  if (static_cast<std::size_t>(columns.rows()) != data_size()) {
    throw InvalidArgument("color: data vector length mismatch");
  }
  switch (kind_) {
    case ModelKind::static_model: return columns * std::sqrt(sigma2_);
    case ModelKind::time_averaged: return u_factor_.apply_lower(columns);
    case ModelKind::stgp: {
      const auto i = static_cast<Eigen::Index>(rows_);
      const auto j = static_cast<Eigen::Index>(cols_);
      Matrix out(columns.rows(), columns.cols());
      for (Eigen::Index c = 0; c < columns.cols(); ++c) {
        const Eigen::Map<const Matrix> r(columns.col(c).data(), i, j);
        const Matrix b = u_factor_.apply_lower(r) * v_factor_.lower().triangularView<Eigen::Lower>().transpose();
        out.col(c) = Eigen::Map<const Vector>(b.data(), b.size());
      }
      return out;
    }
  }
  return columns;
}

double MatrixNormalModel::potential(const Matrix& y, const Matrix& m) const {
  check_shape(y);
  check_shape(m);
  return potential_data(summarize(y), summarize(m));
}

double MatrixNormalModel::potential_data(const Vector& y, const Vector& m) const {
  return 0.5 * whiten(Vector(y - m)).squaredNorm();
}

}  // namespace stip::likelihood
