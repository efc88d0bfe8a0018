#include "advsec/experiment.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>

#include "advsec/dataset.hpp"
#include "advsec/defenses.hpp"
#include "advsec/errors.hpp"
#include "advsec/evaluation.hpp"
#include "advsec/parallel.hpp"
#include "advsec/version.hpp"
#include "json.hpp"

namespace advsec {

namespace fs = std::filesystem;

namespace {

using Json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Finite values as numbers, infinities as "inf"/"-inf", NaN as null.
Json metric_json(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
const T& require(const std::optional<T>& section, const char* name, Command command) {
  if (!section) throw ConfigError(std::string(name) + ": section required by command " + to_string(command));
  return *section;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw IoError("failed writing " + path.string());
}

Dataset load_dataset(const DatasetSection& d) {
  switch (d.kind) {
    case DatasetKind::kSynth: return synth_blobs(d.samples, d.num_classes, d.image_shape, d.seed);
    case DatasetKind::kIdx: return load_idx(d.images_path, d.labels_path);
    case DatasetKind::kCifar10: return load_cifar10(d.dir);
  }
  throw ConfigError("dataset.kind: unsupported");
}

Dataset select(const Dataset& ds, const std::optional<IndexRange>& range, const char* key) {
  if (!range) return ds;
  if (range->end > ds.size())
    throw ConfigError(std::string(key) + ".end: " + std::to_string(range->end) + " exceeds the " +
                      std::to_string(ds.size()) + " samples of the dataset");
  return ds.subset(range->start, range->end);
}

Model obtain_model(const ModelSection& m) {
  if (!m.weights_path) return build_model(m.spec, m.init_seed);
  Model model = load_weights(*m.weights_path);
  if (!(model.spec() == m.spec))
    throw ConfigError("model.weights_path: stored model does not match the model section (" +
                      std::string(to_string(model.spec().arch)) + ", " + to_string(model.spec().input.batched(1)) +
                      ", " + std::to_string(model.num_classes()) + " classes)");
  return model;
}

void check_compatible(const Model& model, const Dataset& ds) {
  if (!(ds.image_shape() == model.spec().input))
    throw ConfigError("dataset: image shape " + to_string(ds.image_shape()) + " does not match model.input_shape " +
                      to_string(model.spec().input));
  if (ds.num_classes() > model.num_classes())
    throw ConfigError("dataset: " + std::to_string(ds.num_classes()) + " classes exceed model.num_classes " +
                      std::to_string(model.num_classes()));
}

TrainResult train(const ExperimentConfig& cfg, Model model, const Dataset& train_set) {
  const DefenseSection& d = *cfg.defense;
  switch (d.kind) {
    case DefenseKind::kStandard: return train_standard(std::move(model), train_set, d.train);
    case DefenseKind::kAdversarial: return adversarial_train(std::move(model), train_set, d.train);
    case DefenseKind::kEnsemble: {
      std::vector<Model> statics;
      for (const fs::path& p : d.ensemble_weights) statics.push_back(load_weights(p));
      return ensemble_adversarial_train(std::move(model), statics, train_set, d.train);
    }
  }
  throw ConfigError("defense.kind: unsupported");
}

// Metric keys reported for each name in evaluation.metrics.
std::vector<std::string> metric_keys(const std::string& name) {
  if (name == "perturbation") return {"mean_l2", "max_l2", "mean_linf", "max_linf"};
  if (name == "transferability") return {"transferability", "transfer_source_successes"};
  return {name};
}

std::string per_sample_csv(const std::vector<SampleRecord>& rows) {
  std::string out = "index,true_label,clean_pred,adv_pred,success,l2,linf,psnr,ssim\n";
  for (const SampleRecord& r : rows) {
    out += std::to_string(r.index) + "," + std::to_string(r.true_label) + "," + std::to_string(r.clean_pred) + "," +
           std::to_string(r.adv_pred) + "," + (r.success ? "1" : "0") + "," + csv_number(r.l2) + "," +
           csv_number(r.linf) + "," + csv_number(r.psnr) + "," + csv_number(r.ssim) + "\n";
  }
  return out;
}

class Run {
 public:
  Run(const ExperimentConfig& cfg, Command command) : cfg_(cfg), command_(command), start_(Clock::now()) {
    timing_["workers"] = cfg.workers;
  }

  RunOutput execute() {
    switch (command_) {
      case Command::kGenData: gen_data(); break;
      case Command::kTrain: train_only(); break;
      case Command::kAttack: attack(false); break;
      case Command::kEvaluate: attack(true); break;
      case Command::kBenchmark: bench(); break;
      case Command::kValidate: break;
    }
    return finish();
  }

 private:
  fs::path output_dir() {
    const fs::path dir = cfg_.experiment.output_dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
  }

  void add_artifact(const std::string& name, const std::string& text) {
    write_text(output_dir() / name, text);
    artifacts_.push_back(name);
  }

  void gen_data() {
    const GenDataSection& g = require(cfg_.gen_data, "gen_data", command_);
    const Dataset ds = synth_blobs(g.samples, g.num_classes, g.image_shape, g.seed);
    const fs::path dir = output_dir();
    if (g.format == DataFormat::kIdx) {
      write_idx(ds, dir / "images.idx3", dir / "labels.idx1");
      artifacts_ = {"images.idx3", "labels.idx1"};
    } else {
      write_cifar10_batch(ds, dir / "data_batch_1.bin");
      artifacts_ = {"data_batch_1.bin"};
    }
    metrics_["samples"] = ds.size();
    metrics_["num_classes"] = ds.num_classes();
  }

  // Loads the dataset and model and trains when a defense section is present.
  Model prepare() {
    const ModelSection& m = require(cfg_.model, "model", command_);
    const DatasetSection& d = require(cfg_.dataset, "dataset", command_);
    Model model = obtain_model(m);
    dataset_ = load_dataset(d);
    check_compatible(model, *dataset_);
    if (!cfg_.defense) return model;

    const Dataset train_set = select(*dataset_, d.train_subset, "dataset.train_subset");
    const auto t = Clock::now();
    TrainResult result = train(cfg_, std::move(model), train_set);
    timing_["train_seconds"] = seconds_since(t);
    Json epochs = Json::array(), epoch_seconds = Json::array();
    for (const EpochRecord& e : result.history) {
      epochs.push_back({{"epoch", e.epoch},
                        {"mean_loss", metric_json(e.mean_loss)},
                        {"clean_accuracy", metric_json(e.clean_accuracy)},
                        {"adversarial_accuracy",
                         e.adversarial_accuracy ? metric_json(*e.adversarial_accuracy) : Json(nullptr)}});
      epoch_seconds.push_back(e.seconds);
    }
    training_ = epochs;
    timing_["epoch_seconds"] = epoch_seconds;
    if (!result.history.empty()) {
      metrics_["train_clean_accuracy"] = metric_json(result.history.back().clean_accuracy);
      metrics_["train_loss"] = metric_json(result.history.back().mean_loss);
    }
    save_weights(result.model, output_dir() / cfg_.defense->output_weights);
    artifacts_.push_back(cfg_.defense->output_weights);
    return std::move(result.model);
  }

  void train_only() {
    require(cfg_.defense, "defense", command_);
    const Model model = prepare();
    if (cfg_.dataset->subset) {
      const Dataset held_out = select(*dataset_, cfg_.dataset->subset, "dataset.subset");
      metrics_["clean_accuracy"] = metric_json(accuracy(model, held_out));
    }
  }

  void attack(bool filter) {
    if (!filter) require(cfg_.attack, "attack", command_);
    const Model model = prepare();
    const DatasetSection& d = *cfg_.dataset;
    const ImageBatch batch = select(*dataset_, d.subset, "dataset.subset").all();
    const size_t offset = d.subset ? d.subset->start : 0;

    if (!cfg_.attack) {
      metrics_["clean_accuracy"] = metric_json(accuracy(model, batch));
      metrics_["samples"] = batch.size();
      return;
    }
    std::optional<Model> transfer;
    if (cfg_.evaluation.transfer_weights) {
      transfer = load_weights(*cfg_.evaluation.transfer_weights);
      if (!(transfer->spec().input == model.spec().input) || transfer->num_classes() != model.num_classes())
        throw ConfigError("evaluation.transfer_weights: model does not share the input shape and classes");
    }
    const auto t = Clock::now();
    const EvaluationRun run =
        parallel_evaluate(model, batch, cfg_.attack->spec, cfg_.experiment.seed, cfg_.workers,
                          transfer ? &*transfer : nullptr, cfg_.attack->targets ? &*cfg_.attack->targets : nullptr,
                          offset);
    timing_["attack_seconds"] = seconds_since(t);

    std::vector<std::string> wanted;
    if (filter) {
      for (const std::string& name : cfg_.evaluation.metrics)
        for (const std::string& key : metric_keys(name)) wanted.push_back(key);
      wanted.push_back("samples");
    }
    for (const auto& [key, value] : run.report.metrics)
      if (!filter || std::find(wanted.begin(), wanted.end(), key) != wanted.end()) metrics_[key] = metric_json(value);
    if (cfg_.evaluation.per_sample) add_artifact("per_sample.csv", per_sample_csv(run.report.per_sample));
  }

  void bench() {
    require(cfg_.attack, "attack", command_);
    const BenchmarkSection& b = require(cfg_.benchmark, "benchmark", command_);
    const Model model = prepare();
    const ImageBatch batch = select(*dataset_, cfg_.dataset->subset, "dataset.subset").all();
    const BenchmarkRecord record = benchmark(model, batch, cfg_.attack->spec, cfg_.experiment.seed, b.worker_counts,
                                             b.repetitions, to_string(cfg_.attack->spec.kind), dataset_->name());
    add_artifact("benchmark.json", to_json(record));
    metrics_["samples"] = batch.size();
    Json results = Json::array();
    for (const BenchmarkEntry& e : record.results)
      results.push_back({{"workers", e.workers}, {"seconds", e.seconds}, {"speedup", e.speedup}});
    timing_["benchmark"] = results;
  }

  RunOutput finish() {
    RunOutput out;
    out.digest = config_digest(cfg_);
    if (command_ == Command::kValidate) return out;
    timing_["total_seconds"] = seconds_since(start_);

    Json report;
    report["config_digest"] = out.digest;
    report["version"] = kVersion;
    report["command"] = to_string(command_);
    report["config"] = Json::parse(canonical_config(cfg_));
    report["metrics"] = metrics_;
    if (!training_.is_null()) report["training"] = training_;
    report["timing"] = timing_;
    report["artifacts"] = artifacts_;
    out.report_path = output_dir() / "report.json";
    write_text(out.report_path, report.dump(2) + "\n");
    out.artifacts = artifacts_;
    out.artifacts.push_back("report.json");
    return out;
  }

  const ExperimentConfig& cfg_;
  Command command_;
  Clock::time_point start_;
  std::optional<Dataset> dataset_;
  Json metrics_ = Json::object();
  Json training_;
  Json timing_ = Json::object();
  std::vector<std::string> artifacts_;
};

}  // namespace

const char* to_string(Command command) {
  switch (command) {
    case Command::kAttack: return "attack";
    case Command::kTrain: return "train";
    case Command::kEvaluate: return "evaluate";
    case Command::kBenchmark: return "benchmark";
    case Command::kGenData: return "gen-data";
    case Command::kValidate: return "validate";
  }
  return "?";
}

RunOutput run_experiment(const ExperimentConfig& cfg, Command command) { return Run(cfg, command).execute(); }

}  // namespace advsec
