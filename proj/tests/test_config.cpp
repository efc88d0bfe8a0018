#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "advsec/config.hpp"
#include "advsec/errors.hpp"
#include "doctest.h"
#include "temp_dir.hpp"

using namespace advsec;

namespace {

const char* kMinimal = R"(experiment:
  name: minimal
  seed: 3
model:
  arch: mlp_small
  input_shape: [1, 8, 8]
  num_classes: 4
dataset:
  kind: synth
  samples: 40
attack:
  kind: fgsm
  epsilon: 0.3
)";

std::string config_error(const std::string& text, const std::filesystem::path& base = ".") {
  try {
    parse_config(text, base);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

ConfigOverrides seeded(uint64_t seed) {
  ConfigOverrides o;
  o.seed = seed;
  return o;
}

ConfigOverrides with_workers(size_t workers) {
  ConfigOverrides o;
  o.workers = workers;
  return o;
}

std::string replace(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  return text.replace(pos, from.size(), to);
}

}  // namespace

TEST_CASE("minimal attack config parses with defaults filled in") {
  const ExperimentConfig cfg = parse_config(kMinimal);
  CHECK(cfg.experiment.seed == 3);
  REQUIRE(cfg.model);
  CHECK(cfg.model->spec.arch == Arch::kMlpSmall);
  CHECK(cfg.model->spec.mean == std::vector<float>{0.0f});
  CHECK(cfg.model->spec.std == std::vector<float>{1.0f});
  CHECK(cfg.model->init_seed == 3);
  REQUIRE(cfg.dataset);
  CHECK(cfg.dataset->num_classes == 4);
  CHECK(cfg.dataset->image_shape == ImageShape{1, 8, 8});
  CHECK(cfg.dataset->seed == 3);
  REQUIRE(cfg.attack);
  CHECK(cfg.attack->spec.kind == AttackKind::kFgsm);
  CHECK(cfg.attack->spec.epsilon == 0.3f);
  CHECK(cfg.workers == 1);
  CHECK_FALSE(cfg.defense);
}

TEST_CASE("constraint violations name the key path") {
  CHECK(config_error(replace(kMinimal, "epsilon: 0.3", "epsilon: -0.1")).find("attack.epsilon") != std::string::npos);
  CHECK(config_error(replace(kMinimal, "samples: 40", "samples: 2")).find("dataset.samples") != std::string::npos);
  CHECK(config_error(std::string(kMinimal) + "parallel:\n  workers: 0\n").find("parallel.workers") !=
        std::string::npos);
}

TEST_CASE("unknown keys are rejected by name") {
  const std::string msg = config_error(replace(kMinimal, "epsilon:", "epsilonn:"));
  CHECK(msg.find("attack.epsilonn") != std::string::npos);
  CHECK(config_error(std::string(kMinimal) + "extra: 1\n").find("extra") != std::string::npos);
}

TEST_CASE("type mismatches name the key path") {
  CHECK(config_error(replace(kMinimal, "epsilon: 0.3", "epsilon: big")).find("attack.epsilon") != std::string::npos);
  CHECK(config_error(replace(kMinimal, "samples: 40", "samples: 4.5")).find("dataset.samples") != std::string::npos);
  CHECK(config_error(replace(kMinimal, "seed: 3", "seed: -3")).find("experiment.seed") != std::string::npos);
  CHECK(config_error(replace(kMinimal, "[1, 8, 8]", "[1, 8]")).find("model.input_shape") != std::string::npos);
  CHECK(config_error(replace(kMinimal, "kind: fgsm", "kind: [fgsm]")).find("attack.kind") != std::string::npos);
}

TEST_CASE("all problems are reported together") {
  std::string text = replace(kMinimal, "epsilon: 0.3", "epsilon: -1");
  text = replace(text, "samples: 40", "sampels: 40");
  const std::string msg = config_error(text);
  CHECK(msg.find("attack.epsilon") != std::string::npos);
  CHECK(msg.find("dataset.sampels") != std::string::npos);
  CHECK(msg.find("dataset.samples") != std::string::npos);
}

TEST_CASE("seed is mandatory unless overridden") {
  const std::string text = replace(kMinimal, "  seed: 3\n", "");
  CHECK(config_error(text).find("experiment.seed") != std::string::npos);
  const ExperimentConfig cfg = parse_config(text, ".", seeded(11));
  CHECK(cfg.experiment.seed == 11);
}

TEST_CASE("a seed override replaces defaulted seeds but not explicit ones") {
  ExperimentConfig cfg = parse_config(kMinimal, ".", seeded(9));
  CHECK(cfg.experiment.seed == 9);
  CHECK(cfg.dataset->seed == 9);
  CHECK(cfg.model->init_seed == 9);
  cfg = parse_config(replace(kMinimal, "samples: 40", "samples: 40\n  seed: 5"), ".", seeded(9));
  CHECK(cfg.dataset->seed == 5);
}

TEST_CASE("referenced files must exist") {
  TempDir dir;
  const std::string text = replace(kMinimal, "num_classes: 4\n", "num_classes: 4\n  weights_path: w.bin\n");
  CHECK(config_error(text, dir.path()).find("model.weights_path") != std::string::npos);
  std::ofstream(dir / "w.bin") << "x";
  CHECK(config_error(text, dir.path()).empty());

  const std::string idx = replace(kMinimal, "kind: synth\n  samples: 40",
                                  "kind: idx\n  images_path: img.idx\n  labels_path: lab.idx");
  const std::string msg = config_error(idx, dir.path());
  CHECK(msg.find("dataset.images_path") != std::string::npos);
  CHECK(msg.find("dataset.labels_path") != std::string::npos);
}

TEST_CASE("anchors, aliases, tags and extra documents are rejected") {
  CHECK_FALSE(config_error(replace(kMinimal, "name: minimal", "name: &a minimal")).empty());
  CHECK_FALSE(config_error(std::string(kMinimal) + "evaluation:\n  metrics: [*a]\n").empty());
  CHECK_FALSE(config_error(replace(kMinimal, "epsilon: 0.3", "epsilon: !!float 0.3")).empty());
  CHECK_FALSE(config_error(std::string(kMinimal) + "---\nexperiment: {name: b, seed: 1}\n").empty());
  CHECK_FALSE(config_error("experiment: [unclosed").empty());
}

TEST_CASE("defense defaults and consistency") {
  const std::string adv = std::string(kMinimal) + "defense:\n  kind: adversarial\n  epochs: 2\n  attack:\n    kind: fgsm\n";
  const ExperimentConfig cfg = parse_config(adv);
  CHECK(cfg.defense->train.mix_ratio == 0.5f);
  CHECK(cfg.defense->train.seed == 3);
  REQUIRE(cfg.defense->train.attack);

  CHECK(config_error(replace(adv, "  attack:\n    kind: fgsm\n", "")).find("defense.attack") != std::string::npos);
  CHECK(config_error(replace(adv, "kind: adversarial", "kind: standard")).find("defense.attack") !=
        std::string::npos);
  CHECK(config_error(replace(adv, "kind: adversarial", "kind: ensemble")).find("defense.ensemble_weights") !=
        std::string::npos);
  CHECK(config_error(replace(adv, "    kind: fgsm\n", "    kind: fgsm\n    epsilon: -2\n"))
            .find("defense.attack.epsilon") != std::string::npos);
}

TEST_CASE("manual targets must accompany the manual strategy") {
  const std::string base = replace(kMinimal, "epsilon: 0.3", "epsilon: 0.3\n  targeted: true\n  target_strategy: manual");
  CHECK(config_error(base).find("attack.targets") != std::string::npos);
  CHECK(config_error(base + "  targets: [1, 2]\n").empty());
  CHECK(config_error(base + "  targets: [1, 9]\n").find("attack.targets[1]") != std::string::npos);
  CHECK(config_error(std::string(kMinimal) + "  targets: [1]\n").find("attack.targets") != std::string::npos);
}

TEST_CASE("evaluation metrics are checked against the known names") {
  CHECK(config_error(std::string(kMinimal) + "evaluation:\n  metrics: [clean_accuracy, accuracyy]\n")
            .find("evaluation.metrics[1]") != std::string::npos);
  CHECK(config_error(std::string(kMinimal) + "evaluation:\n  metrics: [transferability]\n")
            .find("evaluation.transfer_weights") != std::string::npos);
  const ExperimentConfig cfg = parse_config(kMinimal);
  CHECK(std::find(cfg.evaluation.metrics.begin(), cfg.evaluation.metrics.end(), "transferability") ==
        cfg.evaluation.metrics.end());
}

TEST_CASE("digest follows effective values only") {
  const ExperimentConfig a = parse_config(kMinimal);
  const std::string digest = config_digest(a);
  CHECK(digest.size() == 16);
  CHECK(digest.find_first_not_of("0123456789abcdef") == std::string::npos);

  // Same effective values spelled differently.
  CHECK(config_digest(parse_config(replace(kMinimal, "epsilon: 0.3", "epsilon: 0.30"))) == digest);
  CHECK(config_digest(parse_config(std::string(kMinimal) + "  steps: 10\n")) == digest);
  CHECK(config_digest(parse_config(kMinimal, ".", with_workers(4))) == digest);
  CHECK(config_digest(parse_config(kMinimal, "/some/where/else")) == digest);

  CHECK(config_digest(parse_config(kMinimal, ".", seeded(4))) != digest);
  CHECK(config_digest(parse_config(replace(kMinimal, "epsilon: 0.3", "epsilon: 0.2"))) != digest);
  CHECK(canonical_config(a).find("workers") == std::string::npos);
}

TEST_CASE("the documented example config is valid") {
  const ExperimentConfig cfg = parse_config_file(std::filesystem::path(ADVSEC_SOURCE_DIR) / "docs" / "example_config.yml");
  CHECK(cfg.attack->spec.kind == AttackKind::kPgd);
  CHECK(cfg.defense->kind == DefenseKind::kAdversarial);
  CHECK(cfg.benchmark->worker_counts == std::vector<size_t>{1, 2, 4});
}
