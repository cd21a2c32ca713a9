#include "stip/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "stip/linalg.hpp"

namespace stip::analyze {
namespace {

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

std::size_t uniform_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Matrix random_gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal(rng);
  }
  return m;
}

double lambda_max(const Matrix& a) { return linalg::sym_eig(a).maxCoeff(); }
double lambda_min(const Matrix& a) { return linalg::sym_eig(a).minCoeff(); }

void record(TheoremCheck& check, const LoewnerResult& r, bool condition_met, nlohmann::json instance) {
  ++check.trials;
  if (check.trials == 1 || r.min_eig < check.worst_min_eig) check.worst_min_eig = r.min_eig;
  if (r.holds) return;
  if (condition_met) {
    ++check.violations;
    instance["min_eig"] = r.min_eig;
    check.violation_dumps.push_back(std::move(instance));
  } else {
    ++check.condition_not_met;
  }
}

struct Instance {
  std::size_t rows, cols, params;
  FisherSpec spec;
};

Instance random_instance(std::mt19937_64& rng, const TheoremOptions& o) {
  Instance in;
  in.rows = uniform_size(rng, 1, o.max_rows);
  in.cols = uniform_size(rng, 1, o.max_cols);
  in.params = uniform_size(rng, 1, o.max_params);
  for (std::size_t i = 0; i < in.params; ++i) {
    in.spec.jacobians.push_back(
        random_gaussian(static_cast<Eigen::Index>(in.rows), static_cast<Eigen::Index>(in.cols), rng));
  }
  return in;
}

nlohmann::json dump(const Instance& in, const Matrix& c_x, const Matrix& c_t) {
  nlohmann::json j;
  j["I"] = in.rows;
  j["J"] = in.cols;
  j["p"] = in.params;
  j["C_x"] = matrix_json(c_x);
  j["C_t"] = matrix_json(c_t);
  nlohmann::json jac = nlohmann::json::array();
  for (const auto& a : in.spec.jacobians) jac.push_back(matrix_json(a));
  j["jacobians"] = jac;
  return j;
}

}  // namespace

double rem(const Vector& u_hat, const Vector& u_true) {
  if (u_hat.size() != u_true.size()) throw InvalidArgument("rem: length mismatch");
  const double denom = u_true.norm();
  if (!(denom > 0.0)) throw DomainError("rem: true parameter has zero norm");
  return (u_hat - u_true).norm() / denom;
}

Vector componentwise_median(const Matrix& rows) {
  if (rows.rows() == 0) throw InvalidArgument("median of an empty set");
  Vector out(rows.cols());
  std::vector<double> col(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    for (Eigen::Index r = 0; r < rows.rows(); ++r) col[static_cast<std::size_t>(r)] = rows(r, c);
    std::sort(col.begin(), col.end());
    const std::size_t n = col.size();
    out[c] = n % 2 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
  }
  return out;
}

Vector componentwise_median(const std::vector<Vector>& xs) {
  if (xs.empty()) throw InvalidArgument("median of an empty set");
  Matrix m(static_cast<Eigen::Index>(xs.size()), xs.front().size());
  for (std::size_t i = 0; i < xs.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = xs[i].transpose();
  return componentwise_median(m);
}

void FisherSpec::validate() const {
  if (jacobians.empty()) throw InvalidArgument("FisherSpec: need at least one jacobian");
  for (const auto& a : jacobians) {
    if (a.rows() != jacobians.front().rows() || a.cols() != jacobians.front().cols()) {
      throw InvalidArgument("FisherSpec: jacobians must share one shape");
    }
  }
}

Matrix fisher_matrix(const FisherSpec& spec, const likelihood::MatrixNormalModel& model) {
  spec.validate();
  const auto p = static_cast<Eigen::Index>(spec.jacobians.size());
  Matrix columns(static_cast<Eigen::Index>(model.data_size()), p);
  for (Eigen::Index i = 0; i < p; ++i) columns.col(i) = model.summarize(spec.jacobians[static_cast<std::size_t>(i)]);
  const Matrix w = model.whiten(columns);
  Matrix f = w.transpose() * w;
  return 0.5 * (f + f.transpose());
}

LoewnerResult check_loewner(const Matrix& a, const Matrix& b, double tol) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidArgument("check_loewner: shape mismatch");
  if (!linalg::is_symmetric(a) || !linalg::is_symmetric(b)) {
    throw InvalidArgument("check_loewner: matrices must be symmetric to 1e-10");
  }
  const Matrix diff = a - b;
  const double min_eig = linalg::sym_eig(0.5 * (diff + diff.transpose())).minCoeff();
  return LoewnerResult{min_eig >= -tol, min_eig};
}

Matrix random_spd(std::size_t n, std::mt19937_64& rng) {
  const auto dim = static_cast<Eigen::Index>(n);
  Eigen::HouseholderQR<Matrix> qr(random_gaussian(dim, dim, rng));
  const Matrix q = qr.householderQ();
  std::uniform_real_distribution<double> eig(0.1, 1.0);
  Vector lambda(dim);
  for (Eigen::Index i = 0; i < dim; ++i) lambda[i] = eig(rng);
  Matrix s = q * lambda.asDiagonal() * q.transpose();
  return 0.5 * (s + s.transpose());
}

std::size_t TheoremReport::total_violations() const {
  std::size_t n = 0;
  for (const auto& c : checks) n += c.violations;
  return n;
}

nlohmann::json TheoremReport::to_json() const {
  nlohmann::json j;
  j["violate_condition"] = violate_condition;
  j["total_violations"] = total_violations();
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : checks) {
    nlohmann::json cj;
    cj["name"] = c.name;
    cj["trials"] = c.trials;
    cj["violations"] = c.violations;
    cj["condition_not_met"] = c.condition_not_met;
    cj["worst_min_eig"] = c.worst_min_eig;
    cj["violation_instances"] = c.violation_dumps;
    arr.push_back(cj);
  }
  j["checks"] = arr;
  return j;
}

TheoremReport verify_theorem_1(std::size_t trials, std::mt19937_64& rng, const TheoremOptions& o) {
  TheoremReport report;
  report.violate_condition = o.violate_condition;
  TheoremCheck vs_static{"theorem1_static", 0, 0, 0, 0.0, {}};
  TheoremCheck vs_tavg{"theorem1_time_averaged", 0, 0, 0, 0.0, {}};
  const double scale = o.violate_condition ? o.violate_factor : 1.0;
  std::uniform_real_distribution<double> unif(0.5, 2.0);

  for (std::size_t t = 0; t < trials; ++t) {
    Instance in = random_instance(rng, o);
    const Matrix c_x0 = random_spd(in.rows, rng);
    const Matrix c_t = random_spd(in.cols, rng);
    const double sigma2 = unif(rng);
    const Matrix gamma = random_spd(in.rows, rng);
    const double lx = lambda_max(c_x0), lt = lambda_max(c_t);

    // lmax(C_x) lmax(C_t) = margin * sigma2 (times the violation factor in diagnostic mode).
    {
      const Matrix c_x = c_x0 * (o.margin * sigma2 * scale / (lx * lt));
      const bool met = lambda_max(c_x) * lt <= sigma2 * (1.0 + 1e-12);
      const auto st = likelihood::MatrixNormalModel::stgp(c_x, c_t);
      const auto st_static = likelihood::MatrixNormalModel::static_model(in.rows, in.cols, sigma2);
      const auto r = check_loewner(fisher_matrix(in.spec, st), fisher_matrix(in.spec, st_static), o.tol);
      auto d = dump(in, c_x, c_t);
      d["sigma2"] = sigma2;
      record(vs_static, r, met, std::move(d));
    }
    // lmax(C_x) lmax(C_t) = margin * J lmin(Gamma_obs).
    {
      const double bound = static_cast<double>(in.cols) * lambda_min(gamma);
      const Matrix c_x = c_x0 * (o.margin * bound * scale / (lx * lt));
      const bool met = lambda_max(c_x) * lt <= bound * (1.0 + 1e-12);
      const auto st = likelihood::MatrixNormalModel::stgp(c_x, c_t);
      const auto tavg = likelihood::MatrixNormalModel::time_averaged(gamma, in.cols);
      const auto r = check_loewner(fisher_matrix(in.spec, st), fisher_matrix(in.spec, tavg), o.tol);
      auto d = dump(in, c_x, c_t);
      d["gamma_obs"] = matrix_json(gamma);
      record(vs_tavg, r, met, std::move(d));
    }
  }
  report.checks = {vs_static, vs_tavg};
  return report;
}

TheoremReport verify_theorem_2(std::size_t trials, std::mt19937_64& rng, const TheoremOptions& o) {
  TheoremReport report;
  report.violate_condition = o.violate_condition;
  TheoremCheck check{"theorem2_time_averaged", 0, 0, 0, 0.0, {}};
  const double scale = o.violate_condition ? o.violate_factor : 1.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Instance in = random_instance(rng, o);
    const Matrix gamma = random_spd(in.rows, rng);
    const Matrix c_t0 = random_spd(in.cols, rng);
    const double bound = static_cast<double>(in.cols);
    const Matrix c_t = c_t0 * (o.margin * bound * scale / lambda_max(c_t0));
    const bool met = lambda_max(c_t) <= bound * (1.0 + 1e-12);
    const auto st = likelihood::MatrixNormalModel::stgp(gamma, c_t);
    const auto tavg = likelihood::MatrixNormalModel::time_averaged(gamma, in.cols);
    const auto r = check_loewner(fisher_matrix(in.spec, st), fisher_matrix(in.spec, tavg), o.tol);
    record(check, r, met, dump(in, gamma, c_t));
  }
  report.checks = {check};
  return report;
}

ForwardPrediction predict_forward(const std::vector<Vector>& samples, const dynamics::OdeSystem& system,
                                  const dynamics::ObservationConfig& cfg, std::size_t extra_columns) {
  if (samples.empty()) throw InvalidArgument("predict_forward: no samples");
  const auto rows = static_cast<Eigen::Index>(system.dimension());
  const auto cols = static_cast<Eigen::Index>(cfg.J + extra_columns);
  ForwardPrediction out;
  Matrix sum = Matrix::Zero(rows, cols), sum_sq = Matrix::Zero(rows, cols);
  std::vector<Matrix> trajectories;
  for (const auto& u : samples) {
    try {
      auto traj = dynamics::integrate(system, u, cfg, extra_columns);
      if (out.times.size() == 0) out.times = traj.times;
      trajectories.push_back(std::move(traj.values));
    } catch (const DivergenceError&) {
      ++out.dropped;
    }
  }
  if (trajectories.empty()) throw DivergenceError("predict_forward: every sample trajectory diverged", 0.0);
  out.used = trajectories.size();
  for (const auto& t : trajectories) sum += t;
  out.mean = sum / static_cast<double>(out.used);
  for (const auto& t : trajectories) sum_sq += (t - out.mean).array().square().matrix();
  out.std = (sum_sq / static_cast<double>(out.used)).cwiseSqrt();
  out.lo95 = out.mean - kBandZ * out.std;
  out.hi95 = out.mean + kBandZ * out.std;
  return out;
}

PosteriorPrediction predict_posterior_stgp(const std::vector<Vector>& samples, const dynamics::OdeSystem& system,
                                           const dynamics::ObservationConfig& cfg, const Matrix& y,
                                           const SpatiotemporalNoise& noise, std::size_t extra_columns) {
  if (samples.empty()) throw InvalidArgument("predict_posterior_stgp: no samples");
  const auto rows = static_cast<Eigen::Index>(system.dimension());
  const auto j_obs = static_cast<Eigen::Index>(cfg.J);
  const auto k_all = static_cast<Eigen::Index>(cfg.J + extra_columns);
  if (y.rows() != rows || y.cols() != j_obs) throw InvalidArgument("predict_posterior_stgp: data shape mismatch");
  if (noise.c_x.rows() != rows || noise.c_x.cols() != rows) throw InvalidArgument("predict_posterior_stgp: C_x shape");

  // Normalized times: observation window maps to [0, 1]; the horizon continues past 1.
  Vector s_all(k_all);
  for (Eigen::Index k = 0; k < k_all; ++k) s_all[k] = static_cast<double>(k) / static_cast<double>(j_obs - 1);
  const Vector s_obs = s_all.head(j_obs);

  Matrix gain;  // J x K: Gamma_tt^{-1} Gamma_{t t*}
  Vector schur(k_all);
  if (noise.independent_in_time) {
    gain = Matrix::Zero(j_obs, k_all);
    schur.setConstant(noise.temporal.variance * (1.0 + noise.temporal.jitter));
  } else {
    const Matrix k_tt = likelihood::build_kernel_matrix(s_obs, noise.temporal);
    const Matrix k_ts = likelihood::build_cross_kernel(s_obs, s_all, noise.temporal);
    const auto factor = linalg::cholesky(k_tt, linalg::JitterPolicy::none());
    gain = factor.solve(k_ts);
    for (Eigen::Index k = 0; k < k_all; ++k) {
      const double prior_var = noise.temporal.variance * (1.0 + noise.temporal.jitter);
      schur[k] = prior_var - k_ts.col(k).dot(gain.col(k));
    }
  }

  PosteriorPrediction out;
  std::vector<Matrix> corrected;
  for (const auto& u : samples) {
    try {
      auto traj = dynamics::integrate(system, u, cfg, extra_columns);
      if (out.times.size() == 0) out.times = traj.times;
      const Matrix resid = y - traj.values.leftCols(j_obs);
      corrected.push_back(traj.values + resid * gain);
    } catch (const DivergenceError&) {
      ++out.dropped;
    }
  }
  if (corrected.empty()) throw DivergenceError("predict_posterior_stgp: every sample trajectory diverged", 0.0);
  out.used = corrected.size();
  out.mean = Matrix::Zero(rows, k_all);
  for (const auto& c : corrected) out.mean += c;
  out.mean /= static_cast<double>(out.used);
  out.sample_variance = Matrix::Zero(rows, k_all);
  for (const auto& c : corrected) out.sample_variance += (c - out.mean).array().square().matrix();
  out.sample_variance /= static_cast<double>(out.used);
  out.conditional_variance = noise.c_x.diagonal() * schur.transpose();
  out.variance = out.conditional_variance + out.sample_variance;
  return out;
}

void write_prediction_csv(std::ostream& out, const Vector& times, const Matrix& mean, const Matrix& std_dev,
                          const Matrix& truth, const std::vector<std::string>& labels) {
  out << "t,component,mean,std,lo95,hi95,truth\n";
  for (Eigen::Index k = 0; k < mean.cols(); ++k) {
    for (Eigen::Index i = 0; i < mean.rows(); ++i) {
      const std::string label =
          static_cast<std::size_t>(i) < labels.size() ? labels[static_cast<std::size_t>(i)] : fmt::format("{}", i);
      const double m = mean(i, k), s = std_dev(i, k);
      out << fmt::format("{:.17g},{},{:.17g},{:.17g},{:.17g},{:.17g},", times[k], label, m, s, m - kBandZ * s,
                         m + kBandZ * s);
      if (truth.size() > 0 && k < truth.cols()) {
        out << fmt::format("{:.17g}", truth(i, k));
      }
      out << '\n';
    }
  }
}

}  // namespace stip::analyze
