#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "nmrl/harness.hpp"

namespace {

int run_command(const std::string& config_path, const std::string& out_dir,
                const std::vector<std::uint64_t>& seed_override, int threads,
                bool oracle_only) {
  try {
    nmrl::ExperimentConfig cfg = nmrl::load_config(config_path);
    if (!seed_override.empty()) {
      cfg.seeds = seed_override;
      cfg.raw["seeds"] = seed_override;
      cfg.validate();
    }
    const nmrl::RunOutcome out =
        nmrl::run_experiment(cfg, out_dir, oracle_only, threads);
    std::printf("artifacts: %s\n", out.out_dir.c_str());
    if (out.diverged_seeds > 0)
      std::printf("diverged seeds: %d\n", out.diverged_seeds);
    if (out.bound_violations > 0)
      std::printf("bound violations: %d\n", out.bound_violations);
    return out.exit_code;
  } catch (const nmrl::DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 2;
  } catch (const nmrl::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"window-process RL experiment harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::uint64_t> seeds;
  int threads = 1;

  CLI::App* run = app.add_subcommand("run", "run a full experiment");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--out", out_dir, "artifact directory");
  run->add_option("--seeds", seeds, "override the config seed list");
  run->add_option("--threads", threads, "concurrent seeds");

  CLI::App* oracle = app.add_subcommand("oracle-only", "compute oracle outputs only");
  oracle->add_option("--config", config_path, "experiment config file")->required();
  oracle->add_option("--out", out_dir, "artifact directory");
  oracle->add_option("--threads", threads, "concurrent seeds");

  std::string dir_a, dir_b;
  double tol = 0.0;
  CLI::App* cmp = app.add_subcommand("compare", "diff two artifact directories");
  cmp->add_option("dir_a", dir_a, "first run directory")->required();
  cmp->add_option("dir_b", dir_b, "second run directory")->required();
  cmp->add_option("--tol", tol, "numeric tolerance");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed())
    return run_command(config_path, out_dir, seeds, threads, false);
  if (oracle->parsed())
    return run_command(config_path, out_dir, seeds, threads, true);
  if (cmp->parsed()) {
    try {
      const nmrl::DiffReport rep = nmrl::compare_dirs(dir_a, dir_b, tol);
      for (const std::string& m : rep.mismatches)
        std::printf("mismatch %s\n", m.c_str());
      return rep.ok() ? 0 : 1;
    } catch (const nmrl::Error& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return 1;
    }
  }
  return 1;
}
