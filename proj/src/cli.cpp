#include <CLI11.hpp>

#include <ostream>

#include "advsec/errors.hpp"
#include "advsec/experiment.hpp"
#include "advsec/version.hpp"

namespace advsec {

int cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial robustness toolkit", "advsec"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<size_t> workers;
  const std::vector<std::pair<Command, const char*>> commands = {
      {Command::kAttack, "Run the configured attack and evaluate it"},
      {Command::kTrain, "Train the model with the configured defense"},
      {Command::kEvaluate, "Report the metrics listed under evaluation"},
      {Command::kBenchmark, "Time the attack at several worker counts"},
      {Command::kGenData, "Write a synthetic dataset in IDX or CIFAR-10 format"},
      {Command::kValidate, "Parse and validate the configuration only"},
  };
  std::vector<std::pair<CLI::App*, Command>> subs;
  for (const auto& [command, help] : commands) {
    CLI::App* sub = app.add_subcommand(to_string(command), help);
    sub->add_option("-c,--config", config_path, "YAML configuration file")->required();
    sub->add_option("--workers", workers, "Worker count (overrides parallel.workers)");
    sub->add_option("--seed", seed, "Experiment seed (overrides experiment.seed)");
    subs.emplace_back(sub, command);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  Command command = Command::kValidate;
  for (const auto& [sub, c] : subs)
    if (sub->parsed()) command = c;

  try {
    const ExperimentConfig cfg = parse_config_file(config_path, {seed, workers});
    const RunOutput result = run_experiment(cfg, command);
    if (command == Command::kValidate) {
      out << "config ok, digest " << result.digest << "\n";
    } else {
      out << "digest " << result.digest << "\n";
      out << "report " << result.report_path.string() << "\n";
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "configuration error:\n" << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace advsec
