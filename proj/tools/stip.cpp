// stip: simulate | calibrate | sweep | uq | fisher
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "stip/experiment.hpp"

namespace ex = stip::experiment;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t repeats = 1;
  std::size_t jobs = 1;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "experiment JSON")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "base seed (repeat r uses seed + r)");
  cmd->add_option("--repeats", c.repeats, "number of seeded repeats")->check(CLI::PositiveNumber);
  cmd->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--set", c.sets, "override a config key, e.g. calibration.J_ensemble=500")->take_all();
}

ex::ExperimentConfig resolve(const Common& c) {
  std::vector<std::string> sets = c.sets;
  if (c.seed) sets.push_back("seed=" + std::to_string(*c.seed));
  if (!c.out.empty()) sets.push_back("output_dir=\"" + c.out + "\"");
  std::optional<std::filesystem::path> path;
  if (!c.config_path.empty()) path = c.config_path;
  return ex::load_config(path, sets);
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  ex::init_logging();
  CLI::App app{"Parameter inference for chaotic dynamics with spatiotemporal likelihoods"};
  app.require_subcommand(1);

  Common sim, cal, swp, uq, fis;
  auto* c_sim = app.add_subcommand("simulate", "write the truth trajectory, its augmentation and Gamma_obs");
  add_common(c_sim, sim);
  auto* c_cal = app.add_subcommand("calibrate", "run EKI/EKS and record REM per iteration");
  add_common(c_cal, cal);
  auto* c_swp = app.add_subcommand("sweep", "calibrate over a range of t0, T or ensemble sizes");
  add_common(c_swp, swp);
  std::string axis = "T", values_arg = "1,2,4,8", models_arg = "stgp,time_averaged";
  c_swp->add_option("--axis", axis, "t0 | T | J_ensemble")->check(CLI::IsMember({"t0", "T", "J_ensemble"}));
  c_swp->add_option("--values", values_arg, "comma-separated axis values");
  c_swp->add_option("--models", models_arg, "comma-separated likelihood kinds");
  auto* c_uq = app.add_subcommand("uq", "calibrate, emulate, sample and predict");
  add_common(c_uq, uq);
  auto* c_fis = app.add_subcommand("fisher", "check the Fisher-information orderings on random instances");
  add_common(c_fis, fis);
  std::size_t trials = 1000;
  bool violate = false;
  c_fis->add_option("--trials", trials, "random instances per check");
  c_fis->add_flag("--violate-condition", violate, "rescale past the eigenvalue bounds (diagnostic)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_sim) {
      ex::cmd_simulate(resolve(sim));
    } else if (*c_cal) {
      const auto cfg = resolve(cal);
      const auto summary = ex::cmd_calibrate(cfg, {cal.repeats, cal.jobs});
      for (std::size_t r = 0; r < summary.runs.size(); ++r) {
        std::cout << "repeat " << r << " seed " << cfg.seed + r << " best_rem " << summary.runs[r].best_rem()
                  << " iteration " << summary.runs[r].best_iteration << '\n';
      }
    } else if (*c_swp) {
      const auto cfg = resolve(swp);
      std::vector<double> values;
      for (const auto& v : split(values_arg)) values.push_back(std::stod(v));
      std::vector<stip::likelihood::ModelKind> models;
      for (const auto& m : split(models_arg)) models.push_back(stip::likelihood::model_kind_from_string(m));
      ex::cmd_sweep(cfg, axis, values, models, {swp.repeats, swp.jobs});
    } else if (*c_uq) {
      const auto s = ex::cmd_uq(resolve(uq), uq.jobs);
      for (const auto& p : s.parameters) {
        std::cout << p.name << " median " << p.median << " 95% [" << p.lo95 << ", " << p.hi95 << "]\n";
      }
    } else if (*c_fis) {
      const auto cfg = resolve(fis);
      ex::FisherOptions opts;
      opts.trials = trials;
      opts.seed = cfg.seed;
      opts.violate_condition = violate;
      opts.output_dir = cfg.output_dir;
      return ex::cmd_fisher(opts);
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
