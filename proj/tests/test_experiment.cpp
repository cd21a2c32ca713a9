#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <doctest.h>

#include "stip/experiment.hpp"
#include "stip/io.hpp"

using namespace stip;
using namespace stip::experiment;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("stip_test_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = io::read_file(e.path());
  }
  return files;
}

std::vector<std::string> csv_lines(const fs::path& p) {
  std::istringstream in(io::read_file(p));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

// short smooth window so the runs stay cheap
ExperimentConfig tiny(const fs::path& out, const std::string& kind = "stgp") {
  return config_from_json(json{{"system", "lorenz63"},
                               {"observation", {{"t0", 0.0}, {"T", 1.0}, {"J", 20}}},
                               {"likelihood", {{"kind", kind}}},
                               {"calibration", {{"J_ensemble", 12}, {"N", 3}}},
                               {"sampling", {{"n_samples", 300}, {"n_burnin", 50}}},
                               {"prediction", {{"n_samples", 5}}},
                               {"output_dir", out.string()}});
}

}  // namespace

TEST_CASE("defaults per system") {
  const auto lz = ExperimentConfig::defaults("lorenz63");
  CHECK(lz.observation.t0 == 100.0);
  CHECK(lz.observation.T == 10.0);
  CHECK(lz.observation.J == 100);
  CHECK((lz.truth - Vector{{10.0, 8.0 / 3.0, 28.0}}).norm() < 1e-15);
  CHECK(lz.calibration.J_ensemble == 500);
  CHECK(lz.calibration.N == 50);
  const auto rs = ExperimentConfig::defaults("rossler");
  CHECK(rs.observation.t0 == 1000.0);
  CHECK(rs.observation.T == 100.0);
  const auto ch = ExperimentConfig::defaults("chen");
  CHECK((ch.truth - Vector{{35.0, 3.0, 28.0}}).norm() == 0.0);
  CHECK_THROWS(ExperimentConfig::defaults("duffing"));
}

TEST_CASE("config round trip, overrides and key checks") {
  const auto c = config_from_json(json{{"system", "chen"}});
  const json once = c.to_json();
  const json twice = config_from_json(once).to_json();
  CHECK(once == twice);

  const auto o = config_from_json(json::object(), {"calibration.J_ensemble=64", "likelihood.kind=time_averaged",
                                                   "seed=7", "observation.T=2.5", "likelihood.variance=0.3"});
  CHECK(o.calibration.J_ensemble == 64);
  CHECK(o.likelihood.kind == likelihood::ModelKind::time_averaged);
  CHECK(o.seed == 7);
  CHECK(o.observation.T == 2.5);
  REQUIRE(o.likelihood.variance.has_value());
  CHECK(*o.likelihood.variance == 0.3);
  CHECK(config_from_json(o.to_json()).to_json() == o.to_json());

  CHECK_THROWS_AS(config_from_json(json{{"calibraton", {{"N", 3}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"calibration", {{"steps", 3}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::object(), {"observation.J=1"}), std::exception);
  CHECK_THROWS_AS(config_from_json(json::object(), {"calibration.N"}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"truth", {1.0, 2.0}}}), ConfigError);

  TempDir tmp("config");
  fs::create_directories(tmp.path);
  io::write_atomic(tmp.path / "c.json", R"({"system": "rossler", "calibration": {"method": "eki"}})");
  const auto loaded = load_config(tmp.path / "c.json", {"calibration.N=4"});
  CHECK(loaded.system == "rossler");
  CHECK(loaded.calibration.method == calibrate::Method::eki);
  CHECK(loaded.calibration.N == 4);
  CHECK_THROWS(load_config(tmp.path / "missing.json"));
}

TEST_CASE("simulate writes the observation grid") {
  TempDir tmp("simulate");
  auto c = ExperimentConfig::defaults("lorenz63");
  c.output_dir = tmp.path.string();
  cmd_simulate(c);
  const auto lines = csv_lines(tmp.path / "truth.csv");
  REQUIRE(lines.size() == 101);
  std::vector<double> times;
  for (std::size_t i = 1; i < lines.size(); ++i) times.push_back(std::stod(lines[i].substr(0, lines[i].find(','))));
  CHECK(times.front() == 100.0);
  CHECK(times.back() == doctest::Approx(110.0).epsilon(1e-14));
  for (std::size_t k = 1; k < times.size(); ++k) CHECK(times[k] - times[k - 1] == doctest::Approx(10.0 / 99.0));
  CHECK(fs::exists(tmp.path / "truth_augmented.csv"));
  CHECK(fs::exists(tmp.path / "gamma_obs.csv"));
  CHECK(fs::exists(tmp.path / "config.json"));

  const auto first = snapshot(tmp.path);
  cmd_simulate(c);
  CHECK(snapshot(tmp.path) == first);
  for (const auto& [name, body] : first) CHECK(name.find(".tmp") == std::string::npos);

  c.observation.J = 2;
  c.observation.T = 1.0;
  cmd_simulate(c);
  const auto two = csv_lines(tmp.path / "truth.csv");
  REQUIRE(two.size() == 3);
  CHECK(std::stod(two[1].substr(0, two[1].find(','))) == 100.0);
  CHECK(std::stod(two[2].substr(0, two[2].find(','))) == 101.0);
}

TEST_CASE("calibrate outputs and determinism") {
  TempDir tmp("calibrate");
  const auto c = tiny(tmp.path);
  const auto summary = cmd_calibrate(c, RunOptions{2, 1});
  REQUIRE(summary.runs.size() == 2);
  for (const auto& run : summary.runs) {
    CHECK(run.history.completed);
    CHECK(run.rem_mean.size() == 4);
    CHECK(run.best_rem() <= run.rem_mean.front());
  }
  CHECK(fs::exists(tmp.path / "repeat_000" / "history.csv"));
  CHECK(fs::exists(tmp.path / "repeat_001" / "forward.csv"));
  const auto rem = csv_lines(tmp.path / "rem.csv");
  CHECK(rem.front() == "iter,repeat,rem_mean,rem_median");
  CHECK(rem.size() == 1 + 2 * 4);

  const auto first = snapshot(tmp.path);
  cmd_calibrate(c, RunOptions{2, 2});
  CHECK(snapshot(tmp.path) == first);
  for (const auto& [name, body] : first) CHECK(name.find(".tmp") == std::string::npos);
}

TEST_CASE("N = 0 keeps the prior ensemble") {
  TempDir tmp("prior_only");
  auto c = tiny(tmp.path);
  c.calibration.N = 0;
  const auto p = build_problem(c);
  const auto run = run_calibration(p, c, 3);
  REQUIRE(run.history.ensembles.size() == 1);
  CHECK(run.best_iteration == 0);
  // an ensemble of prior draws sits roughly at the prior median
  const double median_rem = analyze::rem(p.prior.median(), p.truth);
  CHECK(std::abs(run.best_rem_median() - median_rem) < 0.1);
}

TEST_CASE("paired models share seeds") {
  TempDir tmp("paired");
  const auto a = tiny(tmp.path, "stgp");
  const auto b = tiny(tmp.path, "time_averaged");
  const auto ra = run_calibration(build_problem(a), a, 11);
  const auto rb = run_calibration(build_problem(b), b, 11);
  CHECK((ra.history.ensembles[0].particles - rb.history.ensembles[0].particles).norm() == 0.0);
}

TEST_CASE("single-value sweep matches calibrate") {
  TempDir tmp("sweep");
  auto c = tiny(tmp.path);
  const auto rows = cmd_sweep(c, "T", {1.0}, {likelihood::ModelKind::stgp}, RunOptions{2, 1});
  REQUIRE(rows.size() == 2);
  const auto summary = cmd_calibrate(c, RunOptions{2, 1});
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(rows[r].repeat == r);
    CHECK(rows[r].rem == summary.runs[r].best_rem());
    CHECK(rows[r].rem_median == summary.runs[r].best_rem_median());
  }
  CHECK(csv_lines(tmp.path / "sweep_T.csv").front() == "axis_value,model,repeat,rem,rem_median");
  CHECK_THROWS_AS(cmd_sweep(c, "h", {1.0}, {likelihood::ModelKind::stgp}, RunOptions{}), ConfigError);
}

TEST_CASE("uq with a zero potential samples the prior") {
  TempDir tmp("uq_prior");
  auto c = tiny(tmp.path);
  c.sampling.zero_potential = true;
  c.sampling.n_samples = 20000;
  c.sampling.n_burnin = 0;
  c.sampling.adapt = false;
  c.sampling.beta = 0.5;
  const auto s = cmd_uq(c);
  CHECK(s.chain.acceptance_rate() == 1.0);
  Vector mean = Vector::Zero(3), sq = Vector::Zero(3);
  for (const auto& v : s.chain.samples) {
    mean += v;
    sq += v.cwiseProduct(v);
  }
  mean /= static_cast<double>(s.chain.size());
  const Vector var = sq / static_cast<double>(s.chain.size()) - mean.cwiseProduct(mean);
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(std::abs(mean[i]) < 0.1);
    CHECK(std::abs(var[i] - 1.0) < 0.1);
  }
  // log-normal marginals: the median is exp(mu0)
  const auto prior = prior::LogNormalPrior(c.mu0, c.sigma0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(s.parameters[i].median / prior.median()[static_cast<Eigen::Index>(i)] - 1.0) < 0.05);
    CHECK(s.parameters[i].lo95 < s.parameters[i].median);
    CHECK(s.parameters[i].hi95 > s.parameters[i].median);
  }
  for (const char* f : {"chain.csv", "uq_summary.json", "prediction_forward.csv", "prediction_posterior.csv",
                        "emulator/emulator.json", "calibration/history.csv"}) {
    CHECK_MESSAGE(fs::exists(tmp.path / f), f);
  }
}

TEST_CASE("uq reruns are byte identical") {
  TempDir tmp("uq_repeat");
  const auto c = tiny(tmp.path);
  const auto s = cmd_uq(c);
  CHECK(s.chain.size() == 300);
  CHECK(s.forward.used + s.forward.dropped == 5);
  const auto first = snapshot(tmp.path);
  cmd_uq(c);
  CHECK(snapshot(tmp.path) == first);
}

TEST_CASE("fisher command") {
  TempDir tmp("fisher");
  analyze::TheoremReport report;
  FisherOptions opts;
  opts.trials = 0;
  opts.output_dir = tmp.path;
  CHECK(cmd_fisher(opts, &report) == 0);
  for (const auto& c : report.checks) CHECK(c.trials == 0);
  CHECK(fs::exists(tmp.path / "fisher_report.json"));

  opts.trials = 50;
  CHECK(cmd_fisher(opts, &report) == 0);
  CHECK(report.total_violations() == 0);
  opts.violate_condition = true;
  CHECK(cmd_fisher(opts, &report) == 0);
  const auto j = json::parse(io::read_file(tmp.path / "fisher_report.json"));
  CHECK(j["violate_condition"] == true);
}

TEST_CASE("atomic writes") {
  TempDir tmp("atomic");
  io::write_atomic(tmp.path / "a" / "b.txt", "one");
  io::write_atomic(tmp.path / "a" / "b.txt", "two");
  CHECK(io::read_file(tmp.path / "a" / "b.txt") == "two");
  CHECK_FALSE(fs::exists(tmp.path / "a" / "b.txt.tmp"));
}

TEST_CASE("sample summaries") {
  std::vector<Vector> xs;
  for (int i = 1; i <= 101; ++i) xs.push_back(Vector{{static_cast<double>(i)}});
  const auto s = summarize_samples(xs, {"a"});
  REQUIRE(s.size() == 1);
  CHECK(s[0].name == "a");
  CHECK(s[0].median == 51.0);
  CHECK(s[0].mean == doctest::Approx(51.0));
  CHECK(s[0].lo95 == doctest::Approx(3.5));
  CHECK(s[0].hi95 == doctest::Approx(98.5));
}
