#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "advsec/attacks.hpp"
#include "advsec/dataset.hpp"
#include "advsec/defenses.hpp"
#include "advsec/model.hpp"

namespace advsec {

struct IndexRange {
  size_t start = 0;
  size_t end = 0;
};

enum class DatasetKind { kSynth, kIdx, kCifar10 };
enum class DefenseKind { kStandard, kAdversarial, kEnsemble };
enum class DataFormat { kIdx, kCifar10 };

struct ExperimentSection {
  std::string name;
  uint64_t seed = 0;
  std::filesystem::path output_dir;
};

struct ModelSection {
  ModelSpec spec;
  std::optional<std::filesystem::path> weights_path;
  uint64_t init_seed = 0;  // defaults to the experiment seed
};

struct DatasetSection {
  DatasetKind kind = DatasetKind::kSynth;
  // synth
  size_t samples = 0;
  size_t num_classes = 0;
  ImageShape image_shape;
  uint64_t seed = 0;
  // idx
  std::filesystem::path images_path;
  std::filesystem::path labels_path;
  // cifar10
  std::filesystem::path dir;
  std::optional<IndexRange> subset;        // attacked / evaluated samples
  std::optional<IndexRange> train_subset;  // training samples
};

struct AttackSection {
  AttackSpec spec;
  std::optional<std::vector<int>> targets;
};

struct DefenseSection {
  DefenseKind kind = DefenseKind::kStandard;
  TrainConfig train;
  std::vector<std::filesystem::path> ensemble_weights;
  std::string output_weights = "weights.advsec";  // relative to output_dir
};

struct EvaluationSection {
  std::vector<std::string> metrics;
  bool per_sample = false;
  std::optional<std::filesystem::path> transfer_weights;
};

struct BenchmarkSection {
  std::vector<size_t> worker_counts{1, 2, 4};
  int repetitions = 3;
};

struct GenDataSection {
  DataFormat format = DataFormat::kIdx;
  size_t samples = 0;
  size_t num_classes = 0;
  ImageShape image_shape;
  uint64_t seed = 0;
};

struct ExperimentConfig {
  ExperimentSection experiment;
  std::optional<ModelSection> model;
  std::optional<DatasetSection> dataset;
  std::optional<AttackSection> attack;
  std::optional<DefenseSection> defense;
  EvaluationSection evaluation;
  size_t workers = 1;
  std::optional<BenchmarkSection> benchmark;
  std::optional<GenDataSection> gen_data;
  std::filesystem::path base_dir;  // directory relative paths were resolved against
};

// Command-line values that take precedence over the file.
struct ConfigOverrides {
  std::optional<uint64_t> seed;
  std::optional<size_t> workers;
};

// Metric names accepted by evaluation.metrics.
const std::vector<std::string>& known_metrics();

// Parses and validates a YAML document against the closed schema. Relative
// paths are resolved against `base_dir`; referenced input files must exist.
// Every problem found is reported, one per line, each naming its key path,
// in a single ConfigError.
// A seed override also replaces every seed that defaults to the experiment seed.
ExperimentConfig parse_config(const std::string& yaml_text, const std::filesystem::path& base_dir = ".",
                              const ConfigOverrides& overrides = {});

// Reads the file (IoError when unreadable) and parses it relative to its directory.
ExperimentConfig parse_config_file(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

// Effective configuration as sorted-key JSON text. Paths are written relative
// to base_dir. The worker count is left out: it never changes results.
std::string canonical_config(const ExperimentConfig& cfg);

// FNV-1a 64 of canonical_config, as 16 lowercase hex digits.
std::string config_digest(const ExperimentConfig& cfg);

const char* to_string(DatasetKind kind);
const char* to_string(DefenseKind kind);
const char* to_string(DataFormat format);

}  // namespace advsec
