#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "advsec/config.hpp"

namespace advsec {

enum class Command { kAttack, kTrain, kEvaluate, kBenchmark, kGenData, kValidate };

const char* to_string(Command command);

struct RunOutput {
  std::string digest;
  std::filesystem::path report_path;  // empty for validate
  std::vector<std::string> artifacts;  // relative to experiment.output_dir
};

// Runs the pipeline implied by `command`: load or build the model, train it
// when a defense section is present, attack and evaluate, then write
// report.json and the other artifacts under experiment.output_dir. validate
// writes nothing.
RunOutput run_experiment(const ExperimentConfig& cfg, Command command);

// Command-line entry point. Exit codes: 0 success, 2 configuration error,
// 3 I/O or format error, 4 numeric failure, 1 anything else.
int cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace advsec
