#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "advsec/experiment.hpp"
#include "advsec/version.hpp"
#include "doctest.h"
#include "json.hpp"
#include "temp_dir.hpp"

using namespace advsec;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "advsec");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path write(const TempDir& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

std::string read(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// report.json with the timing block removed.
std::string without_timing(const fs::path& report) {
  json j = json::parse(read(report));
  j.erase("timing");
  return j.dump();
}

const char* kAttack = R"(experiment:
  name: cli
  seed: 21
  output_dir: out
model:
  arch: mlp_small
  input_shape: [1, 8, 8]
  num_classes: 4
  normalization:
    mean: [0.5]
    std: [0.25]
dataset:
  kind: synth
  samples: 120
  subset:
    start: 40
    end: 100
defense:
  kind: standard
  epochs: 1
  batch_size: 16
attack:
  kind: pgd
  epsilon: 0.2
  alpha: 0.05
  steps: 3
  random_start: true
evaluation:
  per_sample: true
)";

std::string replace(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  return text.replace(pos, from.size(), to);
}

}  // namespace

TEST_CASE("version flag") {
  const CliResult r = run({"--version"});
  CHECK(r.code == 0);
  CHECK(r.out.find(kVersion) != std::string::npos);
}

TEST_CASE("usage errors exit 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"attack"}).code == 2);
  CHECK(run({"frobnicate", "-c", "x.yml"}).code == 2);
}

TEST_CASE("validate writes no artifacts") {
  TempDir dir;
  const fs::path cfg = write(dir, "good.yml", kAttack);
  const CliResult r = run({"validate", "-c", cfg.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("digest") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("invalid configs exit 2 with the key path") {
  TempDir dir;
  const fs::path bad = write(dir, "bad.yml", replace(kAttack, "epsilon: 0.2", "epsilon: -0.1"));
  const CliResult r = run({"attack", "-c", bad.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("attack.epsilon") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out"));

  CHECK(run({"attack", "-c", (dir / "missing.yml").string()}).code == 3);
  CHECK(run({"validate", "-c", write(dir, "w.yml", kAttack).string(), "--workers", "0"}).code == 2);
}

TEST_CASE("renaming any single key gives exit 2") {
  TempDir dir;
  std::istringstream lines(kAttack);
  std::vector<std::string> all;
  for (std::string line; std::getline(lines, line);) all.push_back(line);
  size_t mutated = 0;
  for (size_t i = 0; i < all.size(); ++i) {
    const auto colon = all[i].find(':');
    if (colon == std::string::npos) continue;
    const auto start = all[i].find_first_not_of(' ');
    const std::string key = all[i].substr(start, colon - start);
    std::string text;
    for (size_t j = 0; j < all.size(); ++j)
      text += (j == i ? all[j].substr(0, start) + key + "_typo" + all[j].substr(colon) : all[j]) + "\n";
    INFO(key);
    const CliResult r = run({"validate", "-c", write(dir, "m.yml", text).string()});
    CHECK(r.code == 2);
    CHECK(r.err.find(key + "_typo") != std::string::npos);
    ++mutated;
  }
  CHECK(mutated > 20);
}

TEST_CASE("attack run writes a report and a per-sample table") {
  TempDir dir;
  const fs::path cfg = write(dir, "a.yml", kAttack);
  const CliResult r = run({"attack", "-c", cfg.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json report = json::parse(read(dir / "out" / "report.json"));
  CHECK(report.at("version") == kVersion);
  CHECK(report.at("command") == "attack");
  CHECK(report.at("config_digest").get<std::string>().size() == 16);
  for (const char* key : {"clean_accuracy", "adversarial_accuracy", "attack_success_rate", "mean_psnr", "samples"})
    CHECK(report.at("metrics").contains(key));
  CHECK(report.at("metrics").at("samples") == 60.0);
  CHECK(report.at("timing").at("workers") == 1);
  CHECK(fs::exists(dir / "out" / "weights.advsec"));

  std::istringstream csv(read(dir / "out" / "per_sample.csv"));
  std::string header;
  std::getline(csv, header);
  CHECK(header == "index,true_label,clean_pred,adv_pred,success,l2,linf,psnr,ssim");
  std::string first;
  std::getline(csv, first);
  CHECK(first.rfind("40,", 0) == 0);
  size_t rows = 1;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 60);
}

TEST_CASE("reports are identical across runs and worker counts apart from timing") {
  TempDir dir;
  const fs::path cfg = write(dir, "a.yml", kAttack);
  REQUIRE(run({"attack", "-c", cfg.string()}).code == 0);
  const std::string first = without_timing(dir / "out" / "report.json");
  const std::string first_csv = read(dir / "out" / "per_sample.csv");
  REQUIRE(run({"attack", "-c", cfg.string()}).code == 0);
  CHECK(without_timing(dir / "out" / "report.json") == first);
  REQUIRE(run({"attack", "-c", cfg.string(), "--workers", "4"}).code == 0);
  CHECK(without_timing(dir / "out" / "report.json") == first);
  CHECK(read(dir / "out" / "per_sample.csv") == first_csv);
  CHECK(json::parse(read(dir / "out" / "report.json")).at("timing").at("workers") == 4);
}

TEST_CASE("command-line seed takes precedence and is recorded") {
  TempDir dir;
  const fs::path cfg = write(dir, "a.yml", kAttack);
  REQUIRE(run({"attack", "-c", cfg.string()}).code == 0);
  const json base = json::parse(read(dir / "out" / "report.json"));
  REQUIRE(run({"attack", "-c", cfg.string(), "--seed", "99"}).code == 0);
  const json over = json::parse(read(dir / "out" / "report.json"));
  CHECK(over.at("config").at("experiment").at("seed") == 99);
  CHECK(over.at("config").at("dataset").at("seed") == 99);
  CHECK(over.at("config_digest") != base.at("config_digest"));
}

TEST_CASE("happy path through all six subcommands") {
  TempDir dir;
  const fs::path gen = write(dir, "gen.yml", R"(experiment:
  name: gen
  seed: 5
  output_dir: data
gen_data:
  format: idx
  samples: 160
  num_classes: 4
  image_shape: [1, 12, 12]
)");
  REQUIRE(run({"gen-data", "-c", gen.string()}).code == 0);
  CHECK(fs::exists(dir / "data" / "images.idx3"));
  CHECK(fs::exists(dir / "data" / "labels.idx1"));

  const std::string model = R"(model:
  arch: cnn_small
  input_shape: [1, 12, 12]
  num_classes: 4
  normalization: {mean: [0.5], std: [0.25]}
)";
  const std::string data = R"(dataset:
  kind: idx
  images_path: data/images.idx3
  labels_path: data/labels.idx1
  train_subset: {start: 0, end: 120}
  subset: {start: 120, end: 160}
)";
  const fs::path train = write(dir, "train.yml", "experiment: {name: train, seed: 6, output_dir: trained}\n" + model +
                                                    data + R"(defense:
  kind: adversarial
  epochs: 2
  batch_size: 20
  lr: 0.05
  attack: {kind: fgsm, epsilon: 0.2}
)");
  CliResult r = run({"train", "-c", train.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json trained = json::parse(read(dir / "trained" / "report.json"));
  CHECK_FALSE(trained.at("config").contains("attack"));
  CHECK(trained.at("training").size() == 2);
  CHECK(trained.at("training")[1].at("adversarial_accuracy").is_number());
  CHECK(trained.at("metrics").contains("clean_accuracy"));
  REQUIRE(fs::exists(dir / "trained" / "weights.advsec"));

  const std::string with_weights = replace(model, "num_classes: 4\n", "num_classes: 4\n  weights_path: trained/weights.advsec\n");
  const std::string attack = "attack: {kind: deepfool, max_iter: 5}\n";
  const fs::path att = write(dir, "attack.yml",
                             "experiment: {name: att, seed: 7, output_dir: attacked}\n" + with_weights + data + attack);
  r = run({"attack", "-c", att.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);

  const fs::path eval = write(dir, "eval.yml", "experiment: {name: ev, seed: 7, output_dir: evaluated}\n" +
                                                   with_weights + data + attack + R"(evaluation:
  metrics: [clean_accuracy, transferability]
  transfer_weights: trained/weights.advsec
)");
  r = run({"evaluate", "-c", eval.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json evaluated = json::parse(read(dir / "evaluated" / "report.json"));
  CHECK(evaluated.at("metrics").contains("clean_accuracy"));
  CHECK(evaluated.at("metrics").contains("transferability"));
  CHECK_FALSE(evaluated.at("metrics").contains("mean_psnr"));

  const fs::path bench = write(dir, "bench.yml", "experiment: {name: b, seed: 7, output_dir: bench}\n" + with_weights +
                                                     data + "attack: {kind: pgd, steps: 2}\n" +
                                                     "benchmark: {worker_counts: [1, 2], repetitions: 1}\n");
  r = run({"benchmark", "-c", bench.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json b = json::parse(read(dir / "bench" / "benchmark.json"));
  CHECK(b.at("task") == "pgd");
  CHECK(b.at("repetitions") == 1);
  CHECK(b.at("machine").is_string());
  REQUIRE(b.at("results").size() == 2);
  for (const auto& e : b.at("results")) {
    CHECK(e.at("workers").is_number_integer());
    CHECK(e.at("seconds").is_number());
    CHECK(e.at("speedup").is_number());
  }

  r = run({"validate", "-c", bench.string()});
  CHECK(r.code == 0);
}

TEST_CASE("I/O failures exit 3") {
  TempDir dir;
  std::ofstream(dir / "bad.advsec") << "not a weight file";
  const fs::path cfg = write(dir, "a.yml", replace(kAttack, "num_classes: 4\n", "num_classes: 4\n  weights_path: bad.advsec\n"));
  const CliResult r = run({"attack", "-c", cfg.string()});
  CHECK(r.code == 3);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("runtime configuration mismatches exit 2") {
  TempDir dir;
  const fs::path cfg = write(dir, "a.yml", replace(kAttack, "end: 100", "end: 100\n  train_subset: {start: 0, end: 500}"));
  const CliResult r = run({"train", "-c", cfg.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("dataset.train_subset") != std::string::npos);
}
