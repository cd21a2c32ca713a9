#include <atomic>
#include <cmath>
#include <sstream>

#include <doctest.h>

#include "stip/calibrate.hpp"
#include "stip/linalg.hpp"
#include "support.hpp"

using namespace stip;
using namespace stip::calibrate;

namespace {

const ForwardMap identity = [](const Vector& v) { return v; };

Ensemble make_ensemble(const Matrix& particles, const ForwardMap& forward) {
  Ensemble e;
  e.particles = particles;
  evaluate_ensemble(e, forward, StreamSeeder(0));
  return e;
}

likelihood::DenseMetric unit_metric(Eigen::Index q) { return likelihood::DenseMetric(Matrix::Identity(q, q)); }

}  // namespace

TEST_CASE("EKI hand example") {
  const Ensemble e = make_ensemble(Matrix(Vector{{0.0, 2.0}}), identity);
  const auto m = unit_metric(1);
  const Ensemble next = eki_step(e, Vector{{1.0}}, m, 1.0, false, StreamSeeder(1), identity);
  CHECK(next.particles(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(next.particles(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(next.iteration == 1);
  CHECK(next.forward_values(0, 0) == next.particles(0, 0));
}

TEST_CASE("EKI fixed points") {
  const auto m = unit_metric(2);
  // identical particles: empirical covariance vanishes
  const Ensemble same = make_ensemble(Matrix::Constant(4, 2, 0.7), identity);
  const Ensemble a = eki_step(same, Vector{{3.0, -1.0}}, m, 1.0, false, StreamSeeder(2), identity);
  CHECK((a.particles - same.particles).norm() == 0.0);
  // all forward values equal the data: innovation vanishes
  const ForwardMap constant = [](const Vector&) { return Vector{{3.0, -1.0}}; };
  std::mt19937_64 rng(3);
  const Ensemble spread = make_ensemble(testing::random_matrix(5, 2, rng), constant);
  const Ensemble b = eki_step(spread, Vector{{3.0, -1.0}}, m, 1.0, false, StreamSeeder(2), constant);
  CHECK((b.particles - spread.particles).norm() == 0.0);
}

TEST_CASE("EKI stays in the span of the initial ensemble") {
  std::mt19937_64 rng(4);
  const Matrix a = testing::random_matrix(3, 5, rng);
  const ForwardMap nonlinear = [a](const Vector& v) {
    Vector g = a * v;
    for (Eigen::Index i = 0; i < g.size(); ++i) g[i] += 0.1 * std::sin(g[i]);
    return g;
  };
  // 3 particles in 5 dimensions span a 2-dim affine subspace
  Ensemble e = make_ensemble(testing::random_matrix(3, 5, rng), nonlinear);
  const Matrix x0 = e.particles;
  const Vector mean0 = x0.colwise().mean().transpose();
  const Matrix basis = (x0.rowwise() - mean0.transpose()).transpose();  // 5 x 3
  const Eigen::JacobiSVD<Matrix> svd(basis, Eigen::ComputeThinU);
  const Matrix u = svd.matrixU().leftCols(2);
  const auto m = unit_metric(3);
  const Vector y = testing::random_vector(3, rng);
  for (int it = 0; it < 10; ++it) {
    e = eki_step(e, y, m, 0.1, false, StreamSeeder(5), nonlinear);
    for (Eigen::Index j = 0; j < 3; ++j) {
      const Vector d = e.particles.row(j).transpose() - mean0;
      CHECK((d - u * (u.transpose() * d)).norm() < 1e-8);
    }
  }
}

TEST_CASE("EKI is invariant to consistent rescaling of data and noise") {
  std::mt19937_64 rng(6);
  const Ensemble e = make_ensemble(testing::random_matrix(6, 1, rng), identity);
  const double c = 7.5;
  const ForwardMap scaled = [c](const Vector& v) { return Vector(c * v); };
  const Ensemble es = make_ensemble(e.particles, scaled);
  const likelihood::DenseMetric m1(Matrix::Constant(1, 1, 0.3));
  const likelihood::DenseMetric mc(Matrix::Constant(1, 1, 0.3 * c * c));
  const Vector y{{0.4}};
  const Ensemble a = eki_step(e, y, m1, 0.5, false, StreamSeeder(1), identity);
  const Ensemble b = eki_step(es, c * y, mc, 0.5, false, StreamSeeder(1), scaled);
  CHECK((a.particles - b.particles).norm() < 1e-10);
}

TEST_CASE("EKS without prior drift and noise is the deterministic EKI step") {
  std::mt19937_64 rng(7);
  const Matrix a = testing::random_matrix(4, 3, rng);
  const ForwardMap lin = [a](const Vector& v) { return Vector(a * v); };
  const auto m = likelihood::DenseMetric(testing::random_spd(4, rng));
  const Vector y = testing::random_vector(4, rng);
  for (int trial = 0; trial < 5; ++trial) {
    const Ensemble e = make_ensemble(testing::random_matrix(8, 3, rng), lin);
    const Ensemble s = eks_step(e, y, m, 0.3, StreamSeeder(1), lin, {}, EksTerms{false, false});
    const Ensemble k = eki_step(e, y, m, s.step_size, false, StreamSeeder(1), lin);
    CHECK((s.particles - k.particles).norm() < 1e-10 * (1.0 + k.particles.norm()));
    CHECK(s.step_size == doctest::Approx(adaptive_step(e, y, m, 0.3)));
  }
}

TEST_CASE("EKS freezes a collapsed ensemble at the prior mean") {
  // C(u) = 0 removes the data term, the prior drift and the noise
  const Ensemble e = make_ensemble(Matrix::Constant(5, 2, 0.0), identity);
  const Ensemble next = eks_step(e, Vector{{1.0, 2.0}}, unit_metric(2), 1.0, StreamSeeder(9), identity);
  CHECK((next.particles - e.particles).norm() == 0.0);
  const Ensemble off = make_ensemble(Matrix::Constant(5, 2, 0.8), identity);
  const Ensemble next2 = eks_step(off, Vector{{1.0, 2.0}}, unit_metric(2), 1.0, StreamSeeder(9), identity);
  CHECK((next2.particles - off.particles).norm() == 0.0);
}

TEST_CASE("EKS samples the conjugate Gaussian posterior") {
  // G(u) = u, y = 0, Gamma = 1, prior N(0, 1): posterior N(0, 1/2)
  EnkOptions opts;
  opts.method = Method::eks;
  opts.ensemble_size = 200;
  // the explicit scheme is biased at O(dt0); at dt0 = 0.5 the stationary variance is 9/8
  opts.iterations = 1500;
  opts.dt = 0.01;
  const auto h = run_enk(identity, unit_metric(1), Vector::Zero(1), 1, opts, 42);
  REQUIRE(h.completed);
  double var = 0.0, mean = 0.0;
  int count = 0;
  for (std::size_t n = 300; n < h.ensembles.size(); ++n) {
    const Vector p = h.ensembles[n].particles.col(0);
    const double m = p.mean();
    var += (p.array() - m).square().sum() / static_cast<double>(p.size());
    mean += m;
    ++count;
  }
  var /= count;
  mean /= count;
  CHECK(std::abs(var - 0.5) < 0.2 * 0.5);
  CHECK(std::abs(mean) < 0.1);
}

TEST_CASE("run_enk bookkeeping and determinism") {
  std::mt19937_64 rng(10);
  const Matrix a = testing::random_matrix(3, 2, rng);
  const ForwardMap lin = [a](const Vector& v) { return Vector(a * v); };
  const auto m = unit_metric(3);
  const Vector y = testing::random_vector(3, rng);

  EnkOptions opts;
  opts.ensemble_size = 10;
  opts.iterations = 0;
  const auto prior_only = run_enk(lin, m, y, 2, opts, 1);
  CHECK(prior_only.ensembles.size() == 1);
  CHECK(prior_only.ensembles[0].iteration == 0);

  opts.iterations = 6;
  for (Method method : {Method::eki, Method::eks}) {
    opts.method = method;
    const auto h1 = run_enk(lin, m, y, 2, opts, 5);
    const auto h2 = run_enk(lin, m, y, 2, opts, 5);
    auto threaded = opts;
    threaded.evaluation.jobs = 4;
    const auto h3 = run_enk(lin, m, y, 2, threaded, 5);
    REQUIRE(h1.ensembles.size() == 7);
    for (std::size_t n = 0; n < h1.ensembles.size(); ++n) {
      CHECK(h1.ensembles[n].iteration == n);
      CHECK((h1.ensembles[n].particles.array() == h2.ensembles[n].particles.array()).all());
      CHECK((h1.ensembles[n].particles.array() == h3.ensembles[n].particles.array()).all());
    }
    const auto other = run_enk(lin, m, y, 2, opts, 6);
    CHECK((other.ensembles[0].particles - h1.ensembles[0].particles).norm() > 0.0);
  }
  opts.ensemble_size = 1;
  CHECK_THROWS_AS(run_enk(lin, m, y, 2, opts, 1), InvalidArgument);
}

TEST_CASE("divergent particles are replaced by prior draws") {
  const ForwardMap fragile = [](const Vector& v) {
    if (v[0] > 1.0) throw DivergenceError("blow-up", 0.0);
    return v;
  };
  EnkOptions opts;
  opts.ensemble_size = 50;
  opts.iterations = 3;
  opts.method = Method::eki;
  const auto h = run_enk(fragile, unit_metric(2), Vector{{0.0, 0.0}}, 2, opts, 3);
  REQUIRE(h.completed);
  CHECK(h.divergences() > 0);
  for (const auto& e : h.ensembles) {
    CHECK((e.particles.col(0).array() <= 1.0).all());
    CHECK(e.forward_values.allFinite());
  }
}

TEST_CASE("a failing step keeps the partial history") {
  std::atomic<int> calls{0};
  const ForwardMap flaky = [&calls](const Vector& v) {
    if (++calls > 25) throw std::runtime_error("solver failure");
    return v;
  };
  EnkOptions opts;
  opts.ensemble_size = 10;
  opts.iterations = 5;
  const auto h = run_enk(flaky, unit_metric(1), Vector::Zero(1), 1, opts, 1);
  CHECK_FALSE(h.completed);
  CHECK(h.ensembles.size() == 2);
  CHECK(h.error.find("solver failure") != std::string::npos);
}

TEST_CASE("noisy EKI perturbs the innovation") {
  std::mt19937_64 rng(11);
  const Ensemble e = make_ensemble(testing::random_matrix(6, 1, rng), identity);
  const auto m = unit_metric(1);
  const Ensemble a = eki_step(e, Vector{{0.2}}, m, 0.5, false, StreamSeeder(1), identity);
  const Ensemble b = eki_step(e, Vector{{0.2}}, m, 0.5, true, StreamSeeder(1), identity);
  const Ensemble c = eki_step(e, Vector{{0.2}}, m, 0.5, true, StreamSeeder(1), identity);
  CHECK((a.particles - b.particles).norm() > 0.0);
  CHECK((b.particles.array() == c.particles.array()).all());
}

TEST_CASE("history csv layout") {
  EnkOptions opts;
  opts.ensemble_size = 3;
  opts.iterations = 1;
  const auto h = run_enk(identity, unit_metric(2), Vector::Zero(2), 2, opts, 1);
  const prior::LogNormalPrior pr(Vector::Zero(2), Vector::Ones(2));
  std::ostringstream out;
  write_history_csv(out, h, pr);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "iter,particle,v1,v2,u1,u2");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 6);
  std::ostringstream fwd;
  write_forward_csv(fwd, h);
  CHECK(fwd.str().rfind("iter,particle,g1,g2\n", 0) == 0);
}

TEST_CASE("method names") {
  CHECK(method_from_string("eki") == Method::eki);
  CHECK(method_from_string("eks") == Method::eks);
  CHECK_THROWS(method_from_string("enkf"));
}
