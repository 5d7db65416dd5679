#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "wflow/config.hpp"

namespace wflow {

const std::vector<std::string>& experiment_tasks();

struct RunOptions {
  std::string task;
  std::string config_path;
  std::optional<std::uint64_t> seed;  // overrides `seed` in the file
  std::optional<std::string> out;     // overrides `out` in the file
};

enum ExitCode : int { exit_ok = 0, exit_failure = 1, exit_config = 2, exit_numeric = 3 };

/// Runs one task end to end. Artifacts are staged and only moved into the
/// output directory on success. Diagnostics go to `log`.
int run_experiment(const RunOptions& opts, std::ostream& log);

/// Same, from an already parsed config (used by run_experiment and tests).
/// Throws ConfigError / NumericError instead of returning an exit code.
void run_experiment(const std::string& task, Config& cfg, const std::string& out_dir, std::ostream& log);

}  // namespace wflow
