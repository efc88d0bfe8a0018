#include "advsec/parallel.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <chrono>

#include "advsec/errors.hpp"
#include "json.hpp"

namespace advsec {

ShardPlan plan_shards(size_t n, size_t workers) {
  if (workers < 1) throw ConfigError("parallel.workers must be >= 1");
  ShardPlan plan;
  plan.total = n;
  plan.workers = workers;
  const size_t count = std::min(workers, n);
  size_t begin = 0;
  for (size_t s = 0; s < count; ++s) {
    const size_t size = n / count + (s < n % count ? 1 : 0);
    plan.shards.push_back({begin, begin + size});
    begin += size;
  }
  return plan;
}

AttackOutcome merge_outcomes(const std::vector<AttackOutcome>& parts) {
  if (parts.empty()) throw ShapeError("nothing to merge");
  if (parts.size() == 1) return parts.front();
  AttackOutcome out;
  std::vector<ImageBatch> batches;
  const bool targeted = parts.front().targets.has_value();
  if (targeted) out.targets.emplace();
  for (const AttackOutcome& p : parts) {
    batches.push_back(p.adversarial);
    auto append = [](auto& dst, const auto& src) { dst.insert(dst.end(), src.begin(), src.end()); };
    append(out.success, p.success);
    append(out.iterations, p.iterations);
    append(out.queries, p.queries);
    append(out.linf_norm, p.linf_norm);
    append(out.l2_norm, p.l2_norm);
    append(out.adversarial_pred, p.adversarial_pred);
    if (targeted) append(*out.targets, *p.targets);
  }
  out.adversarial = concat(batches);
  return out;
}

AttackOutcome parallel_attack(const Model& model, const ImageBatch& batch, const AttackSpec& spec,
                              uint64_t seed, size_t workers, const std::vector<int>* manual_targets,
                              size_t index_offset) {
  spec.validate();
  validate_batch(batch, model.num_classes());
  if (manual_targets && manual_targets->size() != batch.size())
    throw ConfigError("attack.targets has " + std::to_string(manual_targets->size()) + " entries for " +
                      std::to_string(batch.size()) + " samples");
  const ShardPlan plan = plan_shards(batch.size(), workers);
  return merge_outcomes(run_sharded(plan, [&](const Shard& s) {
    const Model local = model;
    std::vector<int> targets;
    if (manual_targets)
      targets.assign(manual_targets->begin() + static_cast<std::ptrdiff_t>(s.begin),
                     manual_targets->begin() + static_cast<std::ptrdiff_t>(s.end));
    return run_attack(local, batch.slice(s.begin, s.end), spec, {seed, index_offset + s.begin},
                      manual_targets ? &targets : nullptr);
  }));
}

std::vector<int> parallel_predict(const Model& model, const Tensor& images, size_t workers) {
  const size_t n = images.dim(0), d = images.numel() / n;
  const ShardPlan plan = plan_shards(n, workers);
  const auto parts = run_sharded(plan, [&](const Shard& s) {
    const Model local = model;
    Shape shape = images.shape();
    shape[0] = s.size();
    Tensor part(shape, std::vector<float>(images.data().begin() + static_cast<std::ptrdiff_t>(s.begin * d),
                                          images.data().begin() + static_cast<std::ptrdiff_t>(s.end * d)));
    return predict_all(local, part);
  });
  std::vector<int> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

EvaluationRun parallel_evaluate(const Model& model, const ImageBatch& batch, const AttackSpec& spec,
                                uint64_t seed, size_t workers, const LabelOracle* transfer_model,
                                const std::vector<int>* manual_targets, size_t index_offset) {
  EvaluationRun run;
  run.clean_pred = parallel_predict(model, batch.images, workers);
  run.outcome = parallel_attack(model, batch, spec, seed, workers, manual_targets, index_offset);
  run.report = build_report(batch, run.clean_pred, run.outcome, transfer_model, index_offset);
  return run;
}

BenchmarkRecord benchmark(const Model& model, const ImageBatch& batch, const AttackSpec& spec,
                          uint64_t seed, const std::vector<size_t>& worker_counts, int repetitions,
                          const std::string& task, const std::string& dataset) {
  if (repetitions < 1) throw ConfigError("benchmark.repetitions must be >= 1");
  if (worker_counts.empty()) throw ConfigError("benchmark.worker_counts must not be empty");
  auto median_seconds = [&](size_t w) {
    std::vector<double> times;
    for (int r = 0; r < repetitions; ++r) {
      const auto start = std::chrono::steady_clock::now();
      parallel_attack(model, batch, spec, seed, w);
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    std::sort(times.begin(), times.end());
    const size_t mid = times.size() / 2;
    return times.size() % 2 ? times[mid] : (times[mid - 1] + times[mid]) / 2.0;
  };

  BenchmarkRecord record;
  record.task = task;
  record.dataset = dataset;
  record.repetitions = repetitions;
  record.machine = machine_description();
  const double base = median_seconds(1);
  for (size_t w : worker_counts) {
    if (w < 1) throw ConfigError("benchmark.worker_counts entries must be >= 1");
    BenchmarkEntry e;
    e.workers = w;
    e.seconds = w == 1 ? base : median_seconds(w);
    e.speedup = w == 1 ? 1.0 : base / e.seconds;
    record.results.push_back(e);
  }
  return record;
}

std::string to_json(const BenchmarkRecord& record) {
  nlohmann::ordered_json j;
  j["task"] = record.task;
  j["dataset"] = record.dataset;
  j["results"] = nlohmann::ordered_json::array();
  for (const BenchmarkEntry& e : record.results)
    j["results"].push_back({{"workers", e.workers}, {"seconds", e.seconds}, {"speedup", e.speedup}});
  j["repetitions"] = record.repetitions;
  j["machine"] = record.machine;
  return j.dump(2) + "\n";
}

std::string machine_description() {
  std::string out = std::to_string(std::thread::hardware_concurrency()) + " logical cpus";
  utsname info{};
  if (uname(&info) == 0) out += std::string(", ") + info.sysname + " " + info.release + " " + info.machine;
  return out;
}

}  // namespace advsec
