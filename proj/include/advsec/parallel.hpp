#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "advsec/attacks.hpp"
#include "advsec/evaluation.hpp"
#include "advsec/model.hpp"

namespace advsec {

struct Shard {
  size_t begin = 0;
  size_t end = 0;
  size_t size() const { return end - begin; }
};

struct ShardPlan {
  size_t total = 0;
  size_t workers = 1;
  std::vector<Shard> shards;
};

// Contiguous partition of [0, n) into min(workers, n) shards whose sizes differ
// by at most one, larger shards first.
ShardPlan plan_shards(size_t n, size_t workers);

// Runs fn(shard) for every shard, one thread per shard, and returns the
// results in shard order. If any shard throws, the first exception in shard
// order is rethrown after all threads have finished.
template <class Fn>
auto run_sharded(const ShardPlan& plan, Fn fn) -> std::vector<decltype(fn(plan.shards.front()))> {
  using R = decltype(fn(plan.shards.front()));
  const size_t count = plan.shards.size();
  std::vector<R> results(count);
  std::vector<std::exception_ptr> errors(count);
  auto body = [&](size_t s) {
    try {
      results[s] = fn(plan.shards[s]);
    } catch (...) {
      errors[s] = std::current_exception();
    }
  };
  if (count == 1) {
    body(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(count);
    for (size_t s = 0; s < count; ++s) threads.emplace_back(body, s);
    for (std::thread& t : threads) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

// Merges per-shard outcomes in shard order.
AttackOutcome merge_outcomes(const std::vector<AttackOutcome>& parts);

// Attack over `batch` split across workers; each worker gets its own model
// copy. Sample i of the batch is sample index_offset + i for seeding, so the
// merged result is bitwise independent of `workers`.
AttackOutcome parallel_attack(const Model& model, const ImageBatch& batch, const AttackSpec& spec,
                              uint64_t seed, size_t workers,
                              const std::vector<int>* manual_targets = nullptr,
                              size_t index_offset = 0);

std::vector<int> parallel_predict(const Model& model, const Tensor& images, size_t workers);

struct EvaluationRun {
  std::vector<int> clean_pred;
  AttackOutcome outcome;
  EvaluationReport report;
};

// Clean predictions, attack and report, with the first two sharded.
EvaluationRun parallel_evaluate(const Model& model, const ImageBatch& batch, const AttackSpec& spec,
                                uint64_t seed, size_t workers, const LabelOracle* transfer_model = nullptr,
                                const std::vector<int>* manual_targets = nullptr,
                                size_t index_offset = 0);

struct BenchmarkEntry {
  size_t workers = 1;
  double seconds = 0.0;  // median over repetitions
  double speedup = 1.0;  // seconds at W=1 divided by seconds at this W
};

struct BenchmarkRecord {
  std::string task;
  std::string dataset;
  std::vector<BenchmarkEntry> results;
  int repetitions = 1;
  std::string machine;
};

// Times parallel_attack for each worker count. W=1 is always measured as the
// baseline, but reported only when requested.
BenchmarkRecord benchmark(const Model& model, const ImageBatch& batch, const AttackSpec& spec,
                          uint64_t seed, const std::vector<size_t>& worker_counts, int repetitions,
                          const std::string& task, const std::string& dataset);

std::string to_json(const BenchmarkRecord& record);

// Short description of the host: logical CPUs and kernel.
std::string machine_description();

}  // namespace advsec
