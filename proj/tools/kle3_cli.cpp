#include "kle3/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Options {
  std::string config;
  std::string trace;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<int> jobs;
  std::optional<std::string> out;
  std::optional<std::string> mode;
};

kle3::ConfigOverrides overrides(const Options& o) {
  return {o.seed, o.trials, o.jobs, o.out, o.mode};
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "root seed of the first trial");
  cmd->add_option("--trials", o.trials, "number of paired trials")->check(CLI::PositiveNumber);
  cmd->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--mode", o.mode, "objective mode")->check(CLI::IsMember({"full-kl", "jensen"}));
}

int run(const Options& o) {
  const auto cfg = kle3::load_config(o.config, overrides(o));
  const auto res = kle3::run_experiment(cfg);
  for (const auto& t : res.trials) {
    std::cout << t.method << " seed " << t.seed;
    if (t.record.aborted) {
      std::cout << " ABORTED: " << t.record.abort_reason << "\n";
      continue;
    }
    for (const auto& [k, v] : t.record.metrics) std::cout << " " << k << "=" << kle3::format_number(v);
    std::cout << "\n";
  }
  std::cout << "wrote " << res.output_dir.string() << "\n";
  if (res.aborted > 0) {
    std::cerr << res.aborted << " trial(s) aborted\n";
    return 2;
  }
  return 0;
}

int reconstruct(const Options& o) {
  const auto cfg = kle3::load_config(o.config, overrides(o));
  const auto rec = kle3::run_reconstruct(cfg, o.trace);
  std::cout << "wrote " << kle3::resolve_output_dir(cfg).string() << " (" << rec.sigma.grid.counts[0] << "x"
            << rec.sigma.grid.counts[1] << " grids)\n";
  return 0;
}

int validate(const Options& o) {
  const auto cfg = kle3::load_config(o.config, overrides(o));
  std::cout << "ok: " << kle3::to_string(cfg.kind) << ", " << cfg.trials << " trial(s), methods";
  for (const auto& m : cfg.methods) std::cout << " " << m;
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KL-E3 experiment runner"};
  app.require_subcommand(1);
  Options o;
  auto* run_cmd = app.add_subcommand("run", "run an experiment");
  add_common(run_cmd, o);
  auto* rec_cmd = app.add_subcommand("reconstruct", "rebuild time-averaged densities from a stored trace");
  add_common(rec_cmd, o);
  rec_cmd->add_option("--trace", o.trace, "trace CSV (defaults to reconstruct.trajectory)");
  auto* val_cmd = app.add_subcommand("validate", "check a config without running it");
  add_common(val_cmd, o);
  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return run(o);
    if (rec_cmd->parsed()) return reconstruct(o);
    return validate(o);
  } catch (const kle3::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const kle3::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const kle3::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
