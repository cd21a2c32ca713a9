#include <cmath>
#include <sstream>

#include <doctest.h>

#include "stip/analyze.hpp"
#include "stip/linalg.hpp"
#include "support.hpp"

using namespace stip;
using namespace stip::analyze;
using likelihood::MatrixNormalModel;

namespace {

Vector vec(const Matrix& a) { return Eigen::Map<const Vector>(a.data(), a.size()); }

// brute-force vec(A_i)^T (V^{-1} kron U^{-1}) vec(A_j)
Matrix kron_fisher(const std::vector<Matrix>& jac, const Matrix& u, const Matrix& v) {
  const Matrix big = linalg::kron(v.inverse(), u.inverse());
  const auto p = static_cast<Eigen::Index>(jac.size());
  Matrix f(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j) f(i, j) = vec(jac[i]).dot(big * vec(jac[j]));
  return f;
}

std::vector<Matrix> random_jacobians(std::size_t p, Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < p; ++k) out.push_back(testing::random_matrix(rows, cols, rng));
  return out;
}

// dx = -u x, one parameter
dynamics::OdeSystem decay() {
  return dynamics::OdeSystem::custom("decay", 2, 1, [](const double* x, const Vector& u, double* dx) {
    dx[0] = -u[0] * x[0];
    dx[1] = -0.5 * u[0] * x[1];
  });
}

dynamics::ObservationConfig small_window() {
  dynamics::ObservationConfig cfg;
  cfg.t0 = 0.0;
  cfg.T = 1.0;
  cfg.J = 6;
  cfg.h = 0.01;
  cfg.x0 = Vector::Ones(2);
  return cfg;
}

}  // namespace

TEST_CASE("relative error") {
  const Vector truth{{10.0, 28.0, 8.0 / 3.0}};
  CHECK(rem(truth, truth) == 0.0);
  CHECK(rem(2.0 * truth, truth) == doctest::Approx(1.0));
  CHECK(rem(truth + Vector{{0.1, 0.0, 0.0}}, truth) == doctest::Approx(0.1 / truth.norm()));
  CHECK(rem(truth + Vector{{0.1, 0.0, 0.0}}, truth) == doctest::Approx(0.003350).epsilon(1e-3));
  CHECK_THROWS_AS(rem(truth, Vector::Zero(3)), DomainError);
  CHECK_THROWS(rem(truth, Vector::Ones(2)));
}

TEST_CASE("componentwise median") {
  Matrix rows(4, 2);
  rows << 1, 10, 3, 40, 2, 20, 100, 30;
  const Vector m = componentwise_median(rows);
  CHECK(m[0] == doctest::Approx(2.5));
  CHECK(m[1] == doctest::Approx(25.0));
  const Vector odd = componentwise_median(std::vector<Vector>{Vector{{3.0}}, Vector{{-1.0}}, Vector{{7.0}}});
  CHECK(odd[0] == 3.0);
}

TEST_CASE("Fisher matrices against the Kronecker form") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index rows = 1 + trial % 4, cols = 2 + trial % 5;
    const std::size_t p = 1 + static_cast<std::size_t>(trial % 3);
    const auto jac = random_jacobians(p, rows, cols, rng);
    const Matrix c_x = random_spd(static_cast<std::size_t>(rows), rng);
    const Matrix c_t = random_spd(static_cast<std::size_t>(cols), rng);
    const Matrix f = fisher_matrix({jac}, MatrixNormalModel::stgp(c_x, c_t));
    const Matrix oracle = kron_fisher(jac, c_x, c_t);
    CHECK((f - oracle).norm() < 1e-9 * (1.0 + oracle.norm()));
    CHECK(linalg::is_symmetric(f));
    CHECK(linalg::sym_eig(f).minCoeff() >= -1e-10);

    // time-averaged: means of the jacobian rows against Gamma_obs
    const Matrix gamma = random_spd(static_cast<std::size_t>(rows), rng);
    const Matrix ft = fisher_matrix({jac}, MatrixNormalModel::time_averaged(gamma, static_cast<std::size_t>(cols)));
    Matrix oracle_t(p, p);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j)
        oracle_t(i, j) = jac[i].rowwise().mean().dot(gamma.inverse() * jac[j].rowwise().mean());
    CHECK((ft - oracle_t).norm() < 1e-9 * (1.0 + oracle_t.norm()));

    // static equals stgp with C_x = sigma2 I, C_t = I
    const double sigma2 = 0.3 + trial * 0.1;
    const Matrix fs = fisher_matrix({jac}, MatrixNormalModel::static_model(rows, cols, sigma2));
    const Matrix fr = fisher_matrix(
        {jac}, MatrixNormalModel::stgp(sigma2 * Matrix::Identity(rows, rows), Matrix::Identity(cols, cols)));
    CHECK((fs - fr).norm() < 1e-10 * (1.0 + fs.norm()));

    // c^2 scaling
    std::vector<Matrix> scaled;
    for (const auto& a : jac) scaled.push_back(3.0 * a);
    CHECK((fisher_matrix({scaled}, MatrixNormalModel::stgp(c_x, c_t)) - 9.0 * f).norm() < 1e-9 * (1.0 + f.norm()));
  }
}

TEST_CASE("Fisher special cases") {
  const auto zero = fisher_matrix({{Matrix::Zero(2, 3), Matrix::Zero(2, 3)}}, MatrixNormalModel::static_model(2, 3, 1.0));
  CHECK(zero.norm() == 0.0);
  const auto one = fisher_matrix({{Matrix::Constant(1, 1, 2.0)}}, MatrixNormalModel::static_model(1, 1, 4.0));
  CHECK(one(0, 0) == doctest::Approx(1.0));
  CHECK_THROWS(fisher_matrix({{Matrix::Zero(2, 3), Matrix::Zero(3, 2)}}, MatrixNormalModel::static_model(2, 3, 1.0)));
  CHECK_THROWS(fisher_matrix({{}}, MatrixNormalModel::static_model(2, 3, 1.0)));
}

TEST_CASE("Loewner order") {
  const Matrix i2 = Matrix::Identity(2, 2);
  const auto same = check_loewner(i2, i2, 1e-8);
  CHECK(same.holds);
  CHECK(std::abs(same.min_eig) < 1e-14);
  const auto up = check_loewner(2.0 * i2, i2, 1e-8);
  CHECK(up.holds);
  CHECK(up.min_eig == doctest::Approx(1.0));
  const auto down = check_loewner(i2, 2.0 * i2, 1e-8);
  CHECK_FALSE(down.holds);
  CHECK(down.min_eig == doctest::Approx(-1.0));
  Matrix asym = i2;
  asym(0, 1) = 1e-3;
  CHECK_THROWS_AS(check_loewner(asym, i2, 1e-8), InvalidArgument);
}

TEST_CASE("theorem checks on random instances") {
  std::mt19937_64 rng(2);
  const auto t1 = verify_theorem_1(1000, rng);
  REQUIRE(t1.checks.size() == 2);
  CHECK(t1.total_violations() == 0);
  for (const auto& c : t1.checks) CHECK(c.trials == 1000);
  const auto t2 = verify_theorem_2(1000, rng);
  CHECK(t2.total_violations() == 0);
  CHECK(t2.checks.at(0).trials == 1000);
  const auto j = t2.to_json();
  CHECK(j["total_violations"] == 0);

  TheoremOptions diag;
  diag.violate_condition = true;
  const auto v1 = verify_theorem_1(300, rng, diag);
  const auto v2 = verify_theorem_2(300, rng, diag);
  CHECK(v1.total_violations() == 0);
  CHECK(v2.total_violations() == 0);
  std::size_t not_met = 0;
  for (const auto& c : v1.checks) not_met += c.condition_not_met;
  for (const auto& c : v2.checks) not_met += c.condition_not_met;
  CHECK(not_met > 0);
}

TEST_CASE("theorem boundary cases") {
  std::mt19937_64 rng(3);
  // C_x = sigma2 I, C_t = I: the STGP and static informations coincide
  const auto jac = random_jacobians(3, 4, 5, rng);
  const double sigma2 = 0.7;
  const Matrix fs = fisher_matrix({jac}, MatrixNormalModel::static_model(4, 5, sigma2));
  const Matrix fst =
      fisher_matrix({jac}, MatrixNormalModel::stgp(sigma2 * Matrix::Identity(4, 4), Matrix::Identity(5, 5)));
  CHECK(check_loewner(fst, fs, 1e-10).min_eig >= -1e-10);

  // J = 2, rank-one jacobian a 1^T and C_t with lmax = J along 1: equality
  const Matrix gamma = random_spd(3, rng);
  const Vector a = testing::random_vector(3, rng);
  const Matrix ones = Matrix::Ones(2, 2);
  const Matrix c_t = ones + 0.5 * (Matrix::Identity(2, 2) - 0.5 * ones);
  CHECK(linalg::sym_eig(c_t).maxCoeff() == doctest::Approx(2.0));
  const std::vector<Matrix> rank1{a * Vector::Ones(2).transpose()};
  const Matrix f_st = fisher_matrix({rank1}, MatrixNormalModel::stgp(gamma, c_t));
  const Matrix f_t = fisher_matrix({rank1}, MatrixNormalModel::time_averaged(gamma, 2));
  CHECK(f_st(0, 0) == doctest::Approx(f_t(0, 0)).epsilon(1e-10));
  CHECK(f_t(0, 0) == doctest::Approx(a.dot(gamma.inverse() * a)).epsilon(1e-10));
  // a non-constant row direction is strictly more informative for STGP
  Matrix b(3, 2);
  b << a, -a;
  const Matrix f_st2 = fisher_matrix({{b}}, MatrixNormalModel::stgp(gamma, c_t));
  const Matrix f_t2 = fisher_matrix({{b}}, MatrixNormalModel::time_averaged(gamma, 2));
  CHECK(f_t2(0, 0) == doctest::Approx(0.0).scale(1.0));
  CHECK(f_st2(0, 0) > 0.0);

  // J = 1, C_t = [1]
  const std::vector<Matrix> col{testing::random_matrix(3, 1, rng), testing::random_matrix(3, 1, rng)};
  const Matrix g1 = fisher_matrix({col}, MatrixNormalModel::stgp(gamma, Matrix::Identity(1, 1)));
  const Matrix g2 = fisher_matrix({col}, MatrixNormalModel::time_averaged(gamma, 1));
  CHECK((g1 - g2).norm() < 1e-10 * (1.0 + g1.norm()));
}

TEST_CASE("forward prediction") {
  const auto sys = decay();
  const auto cfg = small_window();
  const Vector u{{0.8}};
  const auto truth = dynamics::integrate(sys, u, cfg, 3);
  const auto single = predict_forward({u}, sys, cfg, 3);
  CHECK(single.std.norm() == 0.0);
  CHECK((single.mean - truth.values).norm() == 0.0);
  CHECK(single.times.size() == 9);
  CHECK(single.times[8] == doctest::Approx(1.6));
  const auto repeated = predict_forward({u, u, u}, sys, cfg, 3);
  CHECK((repeated.mean - truth.values).norm() < 1e-15);
  CHECK(repeated.used == 3);
  const auto spread = predict_forward({Vector{{0.5}}, Vector{{1.5}}}, sys, cfg, 0);
  CHECK((spread.hi95 - spread.lo95 - 2.0 * kBandZ * spread.std).norm() < 1e-14);
  CHECK(spread.std(0, 0) == 0.0);  // shared initial condition
  CHECK(spread.std(0, 5) > 0.0);
}

TEST_CASE("forward prediction drops divergent samples") {
  const auto blow = dynamics::OdeSystem::custom("blow", 1, 1, [](const double* x, const Vector& u, double* dx) {
    dx[0] = u[0] * x[0] * x[0];
  });
  auto cfg = small_window();
  cfg.x0 = Vector::Ones(1);
  const auto out = predict_forward({Vector{{-1.0}}, Vector{{5.0}}}, blow, cfg, 0);
  CHECK(out.used == 1);
  CHECK(out.dropped == 1);
  CHECK_THROWS_AS(predict_forward({Vector{{5.0}}}, blow, cfg, 0), DivergenceError);
}

TEST_CASE("posterior prediction with a temporal kernel") {
  const auto sys = decay();
  const auto cfg = small_window();
  const Matrix y = dynamics::integrate(sys, Vector{{0.8}}, cfg).values;
  SpatiotemporalNoise noise;
  noise.c_x = Matrix::Identity(2, 2) * 0.01;
  noise.temporal.lengthscale = 0.4;
  noise.temporal.jitter = 1e-10;
  const std::vector<Vector> samples{Vector{{0.6}}, Vector{{1.1}}, Vector{{0.9}}};
  const auto out = predict_posterior_stgp(samples, sys, cfg, y, noise, 4);
  REQUIRE(out.mean.cols() == 10);
  // corrected predictions pass through the data at observed times
  CHECK((out.mean.leftCols(6) - y).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(out.sample_variance.leftCols(6).maxCoeff() < 1e-10);
  // Schur complement nonnegative and growing away from the data
  CHECK(out.conditional_variance.minCoeff() >= -1e-10);
  CHECK(out.conditional_variance(0, 9) > out.conditional_variance(0, 6));
  CHECK(out.sample_variance.minCoeff() >= 0.0);
  CHECK((out.variance - out.conditional_variance - out.sample_variance).norm() < 1e-15);
  CHECK_THROWS_AS(predict_posterior_stgp(samples, sys, cfg, Matrix::Zero(2, 5), noise, 0), InvalidArgument);
}

TEST_CASE("posterior prediction without temporal correlation") {
  const auto sys = decay();
  const auto cfg = small_window();
  const Matrix y = Matrix::Zero(2, 6);
  SpatiotemporalNoise noise;
  noise.c_x = Matrix::Identity(2, 2) * 0.25;
  noise.temporal.family = likelihood::KernelFamily::identity_scaled;
  noise.temporal.jitter = 0.0;
  noise.independent_in_time = true;
  const std::vector<Vector> samples{Vector{{0.6}}, Vector{{1.1}}};
  const auto post = predict_posterior_stgp(samples, sys, cfg, y, noise, 2);
  const auto fwd = predict_forward(samples, sys, cfg, 2);
  CHECK((post.mean - fwd.mean).norm() < 1e-14);
  const Matrix expected = fwd.std.array().square().matrix() + Matrix::Constant(2, 8, 0.25);
  CHECK((post.variance - expected).norm() < 1e-14);
}

TEST_CASE("prediction csv") {
  Vector t{{0.0, 0.5}};
  Matrix mean(2, 2), sd(2, 2), truth(2, 2);
  mean << 1, 2, 3, 4;
  sd << 0, 1, 0, 1;
  truth << 1, 2, 3, 5;
  std::ostringstream out;
  write_prediction_csv(out, t, mean, sd, truth, {"x", "y"});
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,component,mean,std,lo95,hi95,truth");
  std::getline(in, line);
  CHECK(line == "0,x,1,0,1,1,1");
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4);
}
