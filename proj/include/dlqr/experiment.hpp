#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlqr/learner.hpp"
#include "dlqr/plant.hpp"

namespace dlqr {

// Experiment front end: configuration files, result files, subcommand
// dispatch. Everything here is deterministic given the seed; wall-clock
// timings go only into the JSON summary, never into the CSVs.

enum class Mode { solve, learn, simulate, check_stability, paper_example };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

struct SolveOptions {
  double tol = 1e-10;
  int max_iters = 500;
};

struct SimOptions {
  int horizon = 60;
};

struct ExperimentConfig {
  Mode mode = Mode::solve;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  SystemModel model;
  CostWeights weights;
  InitialData init;
  // Shared gain field: initial gain for solve/learn, the gain under test
  // for simulate and check-stability.
  Mat gain;
  SolveOptions solve;
  LearnConfig learn;  // K0 and seed are overwritten from `gain` and `seed`
  SimOptions sim;
};

// Reads and validates a configuration file. Parse problems raise
// input_error naming the offending field; unreadable files raise io_error.
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig config_from_json(const nlohmann::json& root);

// Canonical serialization; parse(serialize(c)) reproduces every matrix
// entry bit for bit.
nlohmann::json serialize(const ExperimentConfig& config);

// The bundled reference experiment (also shipped as a config file).
ExperimentConfig paper_example_config();

struct RunResult {
  std::vector<std::string> artifacts;  // paths written, in order
  nlohmann::json summary;              // same object as summary.json
};

// Executes the configured mode and writes the result files into
// config.output_dir (created if missing). Returns the artifact list and
// the summary document.
RunResult run(const ExperimentConfig& config);

// Formatting helpers shared by the report writers; exposed for tests.
// Floats are printed with 17 significant digits so a reload is lossless
// and identical runs produce identical bytes.
std::string format_float(double value);
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// Full command-line entry point (subcommands solve | learn | simulate |
// check-stability | paper-example). Returns the process exit status:
// 0 success, 2 bad input or flags, 3 numerical failure, 4 I/O failure.
int cli_main(int argc, const char* const* argv);

}  // namespace dlqr
