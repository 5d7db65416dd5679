#include <iostream>

#include <CLI11.hpp>

#include "wflow/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Flow-based generative modeling and transport experiments"};
  wflow::RunOptions opts;
  std::uint64_t seed = 0;
  std::string out;
  app.add_option("task", opts.task, "Task to run")->required()->check(CLI::IsMember(wflow::experiment_tasks()));
  app.add_option("--config", opts.config_path, "Config file (key = value with [section] headers)")->required();
  auto* seed_opt = app.add_option("--seed", seed, "Override the run seed");
  auto* out_opt = app.add_option("--out", out, "Output directory");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return wflow::exit_config;
  }
  if (*seed_opt) opts.seed = seed;
  if (*out_opt) opts.out = out;
  return wflow::run_experiment(opts, std::cerr);
}
