#include "advsec/config.hpp"

#include <yaml-cpp/anchor.h>
#include <yaml-cpp/eventhandler.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "advsec/errors.hpp"
#include "advsec/rng.hpp"
#include "json.hpp"

namespace advsec {

namespace fs = std::filesystem;

namespace {

using Json = nlohmann::json;

// Anchors, aliases, explicit tags and multiple documents are outside the
// accepted YAML subset.
class SubsetScanner : public YAML::EventHandler {
 public:
  std::vector<std::string> problems;

  void OnDocumentStart(const YAML::Mark&) override {
    if (++documents_ == 2) problems.push_back("only one YAML document is allowed");
  }
  void OnDocumentEnd() override {}
  void OnNull(const YAML::Mark& m, YAML::anchor_t a) override { check(m, "", a); }
  void OnAlias(const YAML::Mark& m, YAML::anchor_t) override {
    problems.push_back("line " + std::to_string(m.line + 1) + ": aliases are not allowed");
  }
  void OnScalar(const YAML::Mark& m, const std::string& tag, YAML::anchor_t a, const std::string&) override {
    check(m, tag, a);
  }
  void OnSequenceStart(const YAML::Mark& m, const std::string& tag, YAML::anchor_t a,
                       YAML::EmitterStyle::value) override {
    check(m, tag, a);
  }
  void OnSequenceEnd() override {}
  void OnMapStart(const YAML::Mark& m, const std::string& tag, YAML::anchor_t a, YAML::EmitterStyle::value) override {
    check(m, tag, a);
  }
  void OnMapEnd() override {}

 private:
  void check(const YAML::Mark& m, const std::string& tag, YAML::anchor_t anchor) {
    const std::string where = "line " + std::to_string(m.line + 1) + ": ";
    if (anchor != YAML::NullAnchor) problems.push_back(where + "anchors are not allowed");
    if (!tag.empty() && tag != "?" && tag != "!") problems.push_back(where + "tags are not allowed (" + tag + ")");
  }
  int documents_ = 0;
};

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

class Reader {
 public:
  explicit Reader(fs::path base) : base_(std::move(base)) {}

  std::vector<std::string> errors;

  void error(const std::string& path, const std::string& message) { errors.push_back(path + ": " + message); }

  // Reports keys outside `allowed`; false when `node` is not a mapping.
  bool mapping(const YAML::Node& node, const std::string& path, const std::set<std::string>& allowed) {
    if (!node.IsMap()) {
      error(path, "expected a mapping");
      return false;
    }
    for (const auto& kv : node) {
      const auto key = kv.first.Scalar();
      if (!allowed.count(key)) error(join(path, key), "unknown key");
    }
    return true;
  }

  template <class T>
  bool read(const YAML::Node& map, const std::string& path, const char* key, T& out, bool required = false) {
    const YAML::Node n = map[key];
    const std::string at = join(path, key);
    if (!n.IsDefined() || n.IsNull()) {
      if (required) error(at, "required key is missing");
      return false;
    }
    return convert(n, at, out);
  }

  bool convert(const YAML::Node& n, const std::string& at, std::string& out) {
    if (!n.IsScalar()) return mismatch(at, "a string");
    out = n.Scalar();
    return true;
  }

  bool convert(const YAML::Node& n, const std::string& at, bool& out) {
    if (!n.IsScalar()) return mismatch(at, "a boolean");
    const std::string& s = n.Scalar();
    if (s == "true") out = true;
    else if (s == "false") out = false;
    else return mismatch(at, "true or false");
    return true;
  }

  bool convert(const YAML::Node& n, const std::string& at, double& out) {
    if (!n.IsScalar()) return mismatch(at, "a number");
    const std::string& s = n.Scalar();
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(out)) return mismatch(at, "a finite number");
    return true;
  }

  bool convert(const YAML::Node& n, const std::string& at, float& out) {
    double d = 0.0;
    if (!convert(n, at, d)) return false;
    out = static_cast<float>(d);
    return true;
  }

  bool convert(const YAML::Node& n, const std::string& at, uint64_t& out) {
    if (!n.IsScalar()) return mismatch(at, "a non-negative integer");
    const std::string& s = n.Scalar();
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return mismatch(at, "a non-negative integer");
    return true;
  }

  bool convert(const YAML::Node& n, const std::string& at, int& out) {
    if (!n.IsScalar()) return mismatch(at, "an integer");
    const std::string& s = n.Scalar();
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return mismatch(at, "an integer");
    return true;
  }

  template <class T>
  bool convert(const YAML::Node& n, const std::string& at, std::vector<T>& out) {
    if (!n.IsSequence()) return mismatch(at, "a list");
    out.clear();
    bool ok = true;
    for (size_t i = 0; i < n.size(); ++i) {
      T v{};
      if (convert(n[i], at + "[" + std::to_string(i) + "]", v)) out.push_back(v);
      else ok = false;
    }
    return ok;
  }

  bool convert(const YAML::Node& n, const std::string& at, ImageShape& out) {
    std::vector<size_t> dims;
    if (!convert(n, at, dims)) return false;
    if (dims.size() != 3 || std::count(dims.begin(), dims.end(), size_t{0}) > 0) {
      error(at, "expected [channels, height, width] with positive entries");
      return false;
    }
    out = {dims[0], dims[1], dims[2]};
    return true;
  }

  bool convert(const YAML::Node& n, const std::string& at, IndexRange& out) {
    if (!mapping(n, at, {"start", "end"})) return false;
    const bool ok = read(n, at, "start", out.start, true) & read(n, at, "end", out.end, true);
    if (ok && out.start >= out.end) {
      error(at, "start must be below end");
      return false;
    }
    return ok;
  }

  bool convert(const YAML::Node& n, const std::string& at, fs::path& out) {
    std::string s;
    if (!convert(n, at, s)) return false;
    if (s.empty()) {
      error(at, "empty path");
      return false;
    }
    out = (base_ / fs::path(s)).lexically_normal();
    return true;
  }

  void require_file(const fs::path& p, const std::string& at) {
    std::error_code ec;
    if (!fs::is_regular_file(p, ec)) error(at, "file not found: " + p.string());
  }

  void require_dir(const fs::path& p, const std::string& at) {
    std::error_code ec;
    if (!fs::is_directory(p, ec)) error(at, "directory not found: " + p.string());
  }

  template <class E, class Parse>
  bool read_enum(const YAML::Node& map, const std::string& path, const char* key, E& out, Parse parse,
                 bool required = false) {
    std::string s;
    if (!read(map, path, key, s, required)) return false;
    try {
      out = parse(s);
      return true;
    } catch (const ConfigError& e) {
      error(join(path, key), e.what());
      return false;
    }
  }

 private:
  bool mismatch(const std::string& at, const std::string& expected) {
    error(at, "expected " + expected);
    return false;
  }
  fs::path base_;
};

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "synth") return DatasetKind::kSynth;
  if (s == "idx") return DatasetKind::kIdx;
  if (s == "cifar10") return DatasetKind::kCifar10;
  throw ConfigError("unknown dataset kind '" + s + "' (expected synth, idx or cifar10)");
}

DefenseKind parse_defense_kind(const std::string& s) {
  if (s == "standard") return DefenseKind::kStandard;
  if (s == "adversarial") return DefenseKind::kAdversarial;
  if (s == "ensemble") return DefenseKind::kEnsemble;
  throw ConfigError("unknown defense kind '" + s + "' (expected standard, adversarial or ensemble)");
}

DataFormat parse_format(const std::string& s) {
  if (s == "idx") return DataFormat::kIdx;
  if (s == "cifar10") return DataFormat::kCifar10;
  throw ConfigError("unknown format '" + s + "' (expected idx or cifar10)");
}

const std::set<std::string> kAttackKeys = {
    "kind", "epsilon", "alpha", "steps", "random_start", "norm", "overshoot", "max_iter", "c", "kappa", "lr",
    "binary_search_steps", "max_queries", "spherical_step", "source_step", "targeted", "target_strategy"};

bool read_attack_spec(Reader& r, const YAML::Node& n, const std::string& path, AttackSpec& s) {
  r.read_enum(n, path, "kind", s.kind, parse_attack_kind, true);
  r.read(n, path, "epsilon", s.epsilon);
  r.read(n, path, "alpha", s.alpha);
  r.read(n, path, "steps", s.steps);
  r.read(n, path, "random_start", s.random_start);
  r.read_enum(n, path, "norm", s.norm, parse_norm);
  r.read(n, path, "overshoot", s.overshoot);
  r.read(n, path, "max_iter", s.max_iter);
  r.read(n, path, "c", s.c);
  r.read(n, path, "kappa", s.kappa);
  r.read(n, path, "lr", s.lr);
  r.read(n, path, "binary_search_steps", s.binary_search_steps);
  r.read(n, path, "max_queries", s.max_queries);
  r.read(n, path, "spherical_step", s.spherical_step);
  r.read(n, path, "source_step", s.source_step);
  r.read(n, path, "targeted", s.targeted);
  r.read_enum(n, path, "target_strategy", s.target_strategy, parse_target_strategy);
  try {
    s.validate();
  } catch (const ConfigError& e) {
    // Messages name the field as attack.<field>; re-root under `path`.
    std::string msg = e.what();
    if (msg.rfind("attack.", 0) == 0) msg = path + msg.substr(6);
    const auto space = msg.find(' ');
    r.error(msg.substr(0, space), msg.substr(space + 1));
    return false;
  }
  return true;
}

void parse_document(Reader& r, const YAML::Node& root, const ConfigOverrides& overrides, ExperimentConfig& cfg) {
  if (!r.mapping(root, "<root>", {"experiment", "model", "dataset", "attack", "defense", "evaluation", "parallel",
                                  "benchmark", "gen_data"}))
    return;

  // experiment
  const YAML::Node exp = root["experiment"];
  if (!exp.IsDefined()) {
    r.error("experiment", "required section is missing");
  } else if (r.mapping(exp, "experiment", {"name", "seed", "output_dir"})) {
    r.read(exp, "experiment", "name", cfg.experiment.name, true);
    r.read(exp, "experiment", "seed", cfg.experiment.seed, !overrides.seed);
    if (!r.read(exp, "experiment", "output_dir", cfg.experiment.output_dir))
      r.convert(YAML::Node("out"), "experiment.output_dir", cfg.experiment.output_dir);
  }
  if (overrides.seed) cfg.experiment.seed = *overrides.seed;
  const uint64_t seed = cfg.experiment.seed;

  // model
  if (const YAML::Node m = root["model"]; m.IsDefined()) {
    ModelSection ms;
    if (r.mapping(m, "model", {"arch", "input_shape", "num_classes", "weights_path", "normalization", "init_seed"})) {
      r.read_enum(m, "model", "arch", ms.spec.arch, parse_arch, true);
      r.read(m, "model", "input_shape", ms.spec.input, true);
      r.read(m, "model", "num_classes", ms.spec.num_classes, true);
      ms.init_seed = seed;
      r.read(m, "model", "init_seed", ms.init_seed);
      fs::path weights;
      if (r.read(m, "model", "weights_path", weights)) {
        r.require_file(weights, "model.weights_path");
        ms.weights_path = weights;
      }
      ms.spec.mean.assign(ms.spec.input.channels, 0.0f);
      ms.spec.std.assign(ms.spec.input.channels, 1.0f);
      if (const YAML::Node norm = m["normalization"]; norm.IsDefined()) {
        if (r.mapping(norm, "model.normalization", {"mean", "std"})) {
          r.read(norm, "model.normalization", "mean", ms.spec.mean, true);
          r.read(norm, "model.normalization", "std", ms.spec.std, true);
        }
      }
      try {
        ms.spec.validate();
      } catch (const ConfigError& e) {
        r.error("model", e.what());
      }
      cfg.model = ms;
    }
  }

  // dataset
  if (const YAML::Node d = root["dataset"]; d.IsDefined()) {
    DatasetSection ds;
    if (r.mapping(d, "dataset", {"kind", "samples", "num_classes", "image_shape", "seed", "images_path",
                                 "labels_path", "dir", "subset", "train_subset"})) {
      r.read_enum(d, "dataset", "kind", ds.kind, parse_dataset_kind, true);
      auto unused = [&](const char* key) {
        if (d[key].IsDefined())
          r.error(join("dataset", key), std::string("not used by dataset kind ") + to_string(ds.kind));
      };
      if (ds.kind == DatasetKind::kSynth) {
        r.read(d, "dataset", "samples", ds.samples, true);
        ds.num_classes = cfg.model ? cfg.model->spec.num_classes : 0;
        ds.image_shape = cfg.model ? cfg.model->spec.input : ImageShape{};
        r.read(d, "dataset", "num_classes", ds.num_classes, !cfg.model);
        r.read(d, "dataset", "image_shape", ds.image_shape, !cfg.model);
        ds.seed = seed;
        r.read(d, "dataset", "seed", ds.seed);
        if (ds.num_classes < 2) r.error("dataset.num_classes", "must be >= 2");
        if (ds.samples < ds.num_classes) r.error("dataset.samples", "must be at least num_classes");
        for (const char* k : {"images_path", "labels_path", "dir"}) unused(k);
      } else if (ds.kind == DatasetKind::kIdx) {
        if (r.read(d, "dataset", "images_path", ds.images_path, true)) r.require_file(ds.images_path, "dataset.images_path");
        if (r.read(d, "dataset", "labels_path", ds.labels_path, true)) r.require_file(ds.labels_path, "dataset.labels_path");
        for (const char* k : {"samples", "num_classes", "image_shape", "seed", "dir"}) unused(k);
      } else {
        if (r.read(d, "dataset", "dir", ds.dir, true)) r.require_dir(ds.dir, "dataset.dir");
        for (const char* k : {"samples", "num_classes", "image_shape", "seed", "images_path", "labels_path"}) unused(k);
      }
      IndexRange range;
      if (r.read(d, "dataset", "subset", range)) ds.subset = range;
      if (r.read(d, "dataset", "train_subset", range)) ds.train_subset = range;
      if (ds.kind == DatasetKind::kSynth) {
        if (ds.subset && ds.subset->end > ds.samples) r.error("dataset.subset.end", "exceeds dataset.samples");
        if (ds.train_subset && ds.train_subset->end > ds.samples)
          r.error("dataset.train_subset.end", "exceeds dataset.samples");
        if (cfg.model && !(ds.image_shape == cfg.model->spec.input))
          r.error("dataset.image_shape", "does not match model.input_shape");
        if (cfg.model && ds.num_classes != cfg.model->spec.num_classes)
          r.error("dataset.num_classes", "does not match model.num_classes");
      }
      cfg.dataset = ds;
    }
  }

  // attack
  if (const YAML::Node a = root["attack"]; a.IsDefined()) {
    AttackSection as;
    std::set<std::string> keys = kAttackKeys;
    keys.insert("targets");
    if (r.mapping(a, "attack", keys)) {
      read_attack_spec(r, a, "attack", as.spec);
      std::vector<int> targets;
      if (r.read(a, "attack", "targets", targets)) as.targets = targets;
      const bool manual = as.spec.targeted && as.spec.target_strategy == TargetStrategy::kManual;
      if (manual && !as.targets) r.error("attack.targets", "required when target_strategy is manual");
      if (!manual && as.targets) r.error("attack.targets", "only used with targeted: true and target_strategy: manual");
      if (as.targets && cfg.model)
        for (size_t i = 0; i < as.targets->size(); ++i)
          if ((*as.targets)[i] < 0 || static_cast<size_t>((*as.targets)[i]) >= cfg.model->spec.num_classes)
            r.error("attack.targets[" + std::to_string(i) + "]", "class out of range");
      cfg.attack = as;
    }
  }

  // defense
  if (const YAML::Node d = root["defense"]; d.IsDefined()) {
    DefenseSection ds;
    if (r.mapping(d, "defense", {"kind", "epochs", "batch_size", "lr", "momentum", "seed", "mix_ratio", "attack",
                                 "ensemble_weights", "output_weights"})) {
      r.read_enum(d, "defense", "kind", ds.kind, parse_defense_kind, true);
      TrainConfig& t = ds.train;
      r.read(d, "defense", "epochs", t.epochs, true);
      r.read(d, "defense", "batch_size", t.batch_size);
      r.read(d, "defense", "lr", t.lr);
      r.read(d, "defense", "momentum", t.momentum);
      t.seed = seed;
      r.read(d, "defense", "seed", t.seed);
      t.mix_ratio = ds.kind == DefenseKind::kStandard ? 0.0f : 0.5f;
      const bool has_mix = r.read(d, "defense", "mix_ratio", t.mix_ratio);
      if (const YAML::Node a = d["attack"]; a.IsDefined()) {
        AttackSpec spec;
        if (r.mapping(a, "defense.attack", kAttackKeys) && read_attack_spec(r, a, "defense.attack", spec)) t.attack = spec;
      }
      if (ds.kind == DefenseKind::kStandard) {
        if (has_mix && t.mix_ratio != 0.0f) r.error("defense.mix_ratio", "must be 0 for kind standard");
        if (d["attack"].IsDefined()) r.error("defense.attack", "not used by kind standard");
      } else {
        if (!d["attack"].IsDefined()) r.error("defense.attack", "required for kind " + std::string(to_string(ds.kind)));
        if (t.mix_ratio <= 0.0f) r.error("defense.mix_ratio", "must be > 0 for kind " + std::string(to_string(ds.kind)));
      }
      if (r.read(d, "defense", "ensemble_weights", ds.ensemble_weights)) {
        if (ds.kind != DefenseKind::kEnsemble) r.error("defense.ensemble_weights", "only used by kind ensemble");
        for (size_t i = 0; i < ds.ensemble_weights.size(); ++i)
          r.require_file(ds.ensemble_weights[i], "defense.ensemble_weights[" + std::to_string(i) + "]");
      }
      if (ds.kind == DefenseKind::kEnsemble && ds.ensemble_weights.empty())
        r.error("defense.ensemble_weights", "kind ensemble needs at least one static model");
      if (r.read(d, "defense", "output_weights", ds.output_weights)) {
        if (ds.output_weights.empty() || fs::path(ds.output_weights).is_absolute())
          r.error("defense.output_weights", "must be a relative file name");
      }
      if (t.epochs < 1) r.error("defense.epochs", "must be >= 1");
      if (t.batch_size < 1) r.error("defense.batch_size", "must be >= 1");
      if (!(t.lr > 0.0f)) r.error("defense.lr", "must be > 0");
      if (!(t.momentum >= 0.0f && t.momentum < 1.0f)) r.error("defense.momentum", "must lie in [0, 1)");
      if (!(t.mix_ratio >= 0.0f && t.mix_ratio <= 1.0f)) r.error("defense.mix_ratio", "must lie in [0, 1]");
      if (t.attack && t.attack->targeted) r.error("defense.attack.targeted", "training crafts untargeted examples");
      cfg.defense = ds;
    }
  }

  // evaluation
  if (const YAML::Node e = root["evaluation"]; e.IsDefined()) {
    if (r.mapping(e, "evaluation", {"metrics", "per_sample", "transfer_weights"})) {
      r.read(e, "evaluation", "metrics", cfg.evaluation.metrics);
      r.read(e, "evaluation", "per_sample", cfg.evaluation.per_sample);
      fs::path p;
      if (r.read(e, "evaluation", "transfer_weights", p)) {
        r.require_file(p, "evaluation.transfer_weights");
        cfg.evaluation.transfer_weights = p;
      }
    }
  }
  const auto& known = known_metrics();
  for (size_t i = 0; i < cfg.evaluation.metrics.size(); ++i) {
    const std::string& name = cfg.evaluation.metrics[i];
    if (std::find(known.begin(), known.end(), name) == known.end())
      r.error("evaluation.metrics[" + std::to_string(i) + "]", "unknown metric '" + name + "'");
    if (name == "transferability" && !cfg.evaluation.transfer_weights)
      r.error("evaluation.transfer_weights", "required by metric transferability");
  }
  if (cfg.evaluation.metrics.empty()) {
    for (const std::string& name : known)
      if (name != "transferability" || cfg.evaluation.transfer_weights) cfg.evaluation.metrics.push_back(name);
  }

  // parallel
  if (const YAML::Node p = root["parallel"]; p.IsDefined()) {
    if (r.mapping(p, "parallel", {"workers"}) && r.read(p, "parallel", "workers", cfg.workers) && cfg.workers < 1)
      r.error("parallel.workers", "must be >= 1");
  }

  if (overrides.workers) {
    if (*overrides.workers < 1) r.error("--workers", "must be >= 1");
    cfg.workers = *overrides.workers;
  }

  // benchmark
  if (const YAML::Node b = root["benchmark"]; b.IsDefined()) {
    BenchmarkSection bs;
    if (r.mapping(b, "benchmark", {"worker_counts", "repetitions"})) {
      r.read(b, "benchmark", "worker_counts", bs.worker_counts);
      r.read(b, "benchmark", "repetitions", bs.repetitions);
      if (bs.worker_counts.empty()) r.error("benchmark.worker_counts", "must not be empty");
      for (size_t i = 0; i < bs.worker_counts.size(); ++i)
        if (bs.worker_counts[i] < 1) r.error("benchmark.worker_counts[" + std::to_string(i) + "]", "must be >= 1");
      if (bs.repetitions < 1) r.error("benchmark.repetitions", "must be >= 1");
      cfg.benchmark = bs;
    }
  }

  // gen_data
  if (const YAML::Node g = root["gen_data"]; g.IsDefined()) {
    GenDataSection gs;
    if (r.mapping(g, "gen_data", {"format", "samples", "num_classes", "image_shape", "seed"})) {
      r.read_enum(g, "gen_data", "format", gs.format, parse_format, true);
      r.read(g, "gen_data", "samples", gs.samples, true);
      r.read(g, "gen_data", "num_classes", gs.num_classes, true);
      r.read(g, "gen_data", "image_shape", gs.image_shape, true);
      gs.seed = seed;
      r.read(g, "gen_data", "seed", gs.seed);
      if (gs.num_classes < 2) r.error("gen_data.num_classes", "must be >= 2");
      if (gs.format == DataFormat::kIdx && gs.image_shape.channels != 1)
        r.error("gen_data.image_shape", "idx images have one channel");
      if (gs.format == DataFormat::kCifar10 && !(gs.image_shape == ImageShape{3, 32, 32}))
        r.error("gen_data.image_shape", "cifar10 records are [3, 32, 32]");
      if (gs.format == DataFormat::kCifar10 && gs.num_classes > 256)
        r.error("gen_data.num_classes", "cifar10 labels are single bytes");
      if (gs.samples < gs.num_classes) r.error("gen_data.samples", "must be at least num_classes");
      cfg.gen_data = gs;
    }
  }
}

// Shortest decimal that round-trips the float, so 0.3f is written as 0.3.
double tidy(float f) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, f);
  double d = 0.0;
  std::from_chars(buf, res.ptr, d);
  return d;
}

Json floats(const std::vector<float>& v) {
  Json out = Json::array();
  for (float f : v) out.push_back(tidy(f));
  return out;
}

Json shape_json(const ImageShape& s) { return Json::array({s.channels, s.height, s.width}); }

Json attack_json(const AttackSpec& s) {
  return Json{{"kind", to_string(s.kind)},
              {"epsilon", tidy(s.epsilon)},
              {"alpha", tidy(s.alpha)},
              {"steps", s.steps},
              {"random_start", s.random_start},
              {"norm", to_string(s.norm)},
              {"overshoot", tidy(s.overshoot)},
              {"max_iter", s.max_iter},
              {"c", tidy(s.c)},
              {"kappa", tidy(s.kappa)},
              {"lr", tidy(s.lr)},
              {"binary_search_steps", s.binary_search_steps},
              {"max_queries", s.max_queries},
              {"spherical_step", tidy(s.spherical_step)},
              {"source_step", tidy(s.source_step)},
              {"targeted", s.targeted},
              {"target_strategy", to_string(s.target_strategy)}};
}

Json range_json(const std::optional<IndexRange>& r) {
  if (!r) return nullptr;
  return Json{{"start", r->start}, {"end", r->end}};
}

}  // namespace

const std::vector<std::string>& known_metrics() {
  static const std::vector<std::string> names{"clean_accuracy", "adversarial_accuracy", "attack_success_rate",
                                              "transferability", "mean_psnr", "mean_ssim", "perturbation"};
  return names;
}

const char* to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kSynth: return "synth";
    case DatasetKind::kIdx: return "idx";
    case DatasetKind::kCifar10: return "cifar10";
  }
  return "?";
}

const char* to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::kStandard: return "standard";
    case DefenseKind::kAdversarial: return "adversarial";
    case DefenseKind::kEnsemble: return "ensemble";
  }
  return "?";
}

const char* to_string(DataFormat format) { return format == DataFormat::kIdx ? "idx" : "cifar10"; }

ExperimentConfig parse_config(const std::string& yaml_text, const fs::path& base_dir,
                              const ConfigOverrides& overrides) {
  std::vector<std::string> problems;
  YAML::Node root;
  try {
    std::istringstream in(yaml_text);
    YAML::Parser parser(in);
    SubsetScanner scanner;
    while (parser.HandleNextDocument(scanner)) {
    }
    problems = scanner.problems;
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("<yaml>: " + std::string(e.what()));
  }
  if (!problems.empty()) {
    std::string msg;
    for (const auto& p : problems) msg += (msg.empty() ? "" : "\n") + ("<yaml>: " + p);
    throw ConfigError(msg);
  }

  ExperimentConfig cfg;
  cfg.base_dir = base_dir.lexically_normal();
  Reader reader(cfg.base_dir);
  if (!root.IsDefined() || root.IsNull()) {
    reader.error("<root>", "empty document");
  } else {
    parse_document(reader, root, overrides, cfg);
  }
  if (!reader.errors.empty()) {
    std::string msg;
    for (const auto& e : reader.errors) msg += (msg.empty() ? "" : "\n") + e;
    throw ConfigError(msg);
  }
  cfg.experiment.output_dir = cfg.experiment.output_dir.lexically_normal();
  return cfg;
}

ExperimentConfig parse_config_file(const fs::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path(), overrides);
}

std::string canonical_config(const ExperimentConfig& cfg) {
  // Relative to the config directory, so the digest does not depend on where
  // the experiment is run from.
  auto path_str = [&](const fs::path& p) { return p.lexically_relative(cfg.base_dir).generic_string(); };

  Json j;
  j["experiment"] = {{"name", cfg.experiment.name},
                     {"seed", cfg.experiment.seed},
                     {"output_dir", path_str(cfg.experiment.output_dir)}};
  if (cfg.model) {
    const ModelSection& m = *cfg.model;
    j["model"] = {{"arch", to_string(m.spec.arch)},
                  {"input_shape", shape_json(m.spec.input)},
                  {"num_classes", m.spec.num_classes},
                  {"weights_path", m.weights_path ? Json(path_str(*m.weights_path)) : Json(nullptr)},
                  {"normalization", {{"mean", floats(m.spec.mean)}, {"std", floats(m.spec.std)}}},
                  {"init_seed", m.init_seed}};
  }
  if (cfg.dataset) {
    const DatasetSection& d = *cfg.dataset;
    Json dj{{"kind", to_string(d.kind)}, {"subset", range_json(d.subset)}, {"train_subset", range_json(d.train_subset)}};
    if (d.kind == DatasetKind::kSynth) {
      dj["samples"] = d.samples;
      dj["num_classes"] = d.num_classes;
      dj["image_shape"] = shape_json(d.image_shape);
      dj["seed"] = d.seed;
    } else if (d.kind == DatasetKind::kIdx) {
      dj["images_path"] = path_str(d.images_path);
      dj["labels_path"] = path_str(d.labels_path);
    } else {
      dj["dir"] = path_str(d.dir);
    }
    j["dataset"] = dj;
  }
  if (cfg.attack) {
    Json a = attack_json(cfg.attack->spec);
    a["targets"] = cfg.attack->targets ? Json(*cfg.attack->targets) : Json(nullptr);
    j["attack"] = a;
  }
  if (cfg.defense) {
    const DefenseSection& d = *cfg.defense;
    Json ens = Json::array();
    for (const auto& p : d.ensemble_weights) ens.push_back(path_str(p));
    j["defense"] = {{"kind", to_string(d.kind)},
                    {"epochs", d.train.epochs},
                    {"batch_size", d.train.batch_size},
                    {"lr", tidy(d.train.lr)},
                    {"momentum", tidy(d.train.momentum)},
                    {"seed", d.train.seed},
                    {"mix_ratio", tidy(d.train.mix_ratio)},
                    {"attack", d.train.attack ? attack_json(*d.train.attack) : Json(nullptr)},
                    {"ensemble_weights", ens},
                    {"output_weights", d.output_weights}};
  }
  j["evaluation"] = {{"metrics", cfg.evaluation.metrics},
                     {"per_sample", cfg.evaluation.per_sample},
                     {"transfer_weights", cfg.evaluation.transfer_weights
                                              ? Json(path_str(*cfg.evaluation.transfer_weights))
                                              : Json(nullptr)}};
  if (cfg.benchmark) j["benchmark"] = {{"worker_counts", cfg.benchmark->worker_counts}, {"repetitions", cfg.benchmark->repetitions}};
  if (cfg.gen_data) {
    const GenDataSection& g = *cfg.gen_data;
    j["gen_data"] = {{"format", to_string(g.format)},
                     {"samples", g.samples},
                     {"num_classes", g.num_classes},
                     {"image_shape", shape_json(g.image_shape)},
                     {"seed", g.seed}};
  }
  return j.dump();
}

std::string config_digest(const ExperimentConfig& cfg) {
  const std::string text = canonical_config(cfg);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(tag_hash(text)));
  return buf;
}

}  // namespace advsec
