#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "advsec/errors.hpp"
#include "advsec/parallel.hpp"
#include "advsec/rng.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"

using namespace advsec;

namespace {

std::vector<size_t> sizes(const ShardPlan& p) {
  std::vector<size_t> out;
  for (const Shard& s : p.shards) out.push_back(s.size());
  return out;
}

const Model& trained() {
  static const Model m = testing::train_on(synth_blobs(200, 4, {1, 8, 8}, 61),
                                           testing::blob_spec(Arch::kCnnSmall), 62, 150);
  return m;
}

bool same_outcome(const AttackOutcome& a, const AttackOutcome& b) {
  return a.adversarial.images.bitwise_equal(b.adversarial.images) && a.adversarial.labels == b.adversarial.labels &&
         a.success == b.success && a.iterations == b.iterations && a.queries == b.queries &&
         a.linf_norm == b.linf_norm && a.l2_norm == b.l2_norm && a.adversarial_pred == b.adversarial_pred &&
         a.targets == b.targets;
}

}  // namespace

TEST_CASE("plan_shards examples") {
  CHECK(sizes(plan_shards(100, 4)) == std::vector<size_t>{25, 25, 25, 25});
  CHECK(sizes(plan_shards(10, 3)) == std::vector<size_t>{4, 3, 3});
  CHECK(sizes(plan_shards(2, 5)) == std::vector<size_t>{1, 1});
  CHECK(plan_shards(0, 3).shards.empty());
  CHECK_THROWS_AS(plan_shards(10, 0), ConfigError);
}

TEST_CASE("plan_shards is a contiguous balanced partition") {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const size_t n = rng.below(300), w = 1 + rng.below(16);
    const ShardPlan p = plan_shards(n, w);
    size_t next = 0, lo = n, hi = 0;
    for (size_t i = 0; i < p.shards.size(); ++i) {
      const Shard& s = p.shards[i];
      CHECK(s.begin == next);
      CHECK(s.size() >= 1);
      if (i > 0) CHECK(s.size() <= p.shards[i - 1].size());
      next = s.end;
      lo = std::min(lo, s.size());
      hi = std::max(hi, s.size());
    }
    CHECK(next == n);
    CHECK(p.shards.size() == std::min(n, w));
    if (n > 0) CHECK(hi - lo <= 1);
  }
}

TEST_CASE("run_sharded keeps shard order and reports the first failure") {
  const ShardPlan p = plan_shards(10, 4);
  const auto begins = run_sharded(p, [](const Shard& s) { return s.begin; });
  CHECK(begins == std::vector<size_t>{0, 3, 6, 8});

  try {
    run_sharded(p, [](const Shard& s) -> int {
      if (s.begin >= 3) throw std::runtime_error("shard " + std::to_string(s.begin));
      return 0;
    });
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "shard 3");
  }
}

TEST_CASE("every attack kind is worker invariant") {
  const ImageBatch batch = synth_blobs(24, 4, {1, 8, 8}, 63).all();
  std::vector<AttackSpec> specs;
  for (AttackKind kind : {AttackKind::kFgsm, AttackKind::kBim, AttackKind::kPgd, AttackKind::kDeepFool,
                          AttackKind::kCwL2, AttackKind::kBoundary}) {
    AttackSpec s;
    s.kind = kind;
    s.epsilon = 0.2f;
    s.alpha = 0.05f;
    s.steps = 4;
    s.random_start = true;
    s.max_iter = 5;
    s.binary_search_steps = 2;
    s.max_queries = 40;
    specs.push_back(s);
  }
  AttackSpec targeted;
  targeted.kind = AttackKind::kPgd;
  targeted.targeted = true;
  targeted.target_strategy = TargetStrategy::kRandomDifferent;
  specs.push_back(targeted);

  for (const AttackSpec& s : specs) {
    INFO(to_string(s.kind));
    const AttackOutcome one = parallel_attack(trained(), batch, s, 77, 1);
    for (size_t w : {2, 3, 4, 7}) CHECK(same_outcome(one, parallel_attack(trained(), batch, s, 77, w)));
  }
}

TEST_CASE("parallel attack with an offset equals the matching slice of a full run") {
  const ImageBatch batch = synth_blobs(20, 4, {1, 8, 8}, 64).all();
  AttackSpec s;
  s.kind = AttackKind::kPgd;
  s.random_start = true;
  s.steps = 3;
  const AttackOutcome full = parallel_attack(trained(), batch, s, 5, 3);
  const AttackOutcome tail = parallel_attack(trained(), batch.slice(8, 20), s, 5, 2, nullptr, 8);
  CHECK(tail.adversarial.images.bitwise_equal(full.adversarial.slice(8, 20).images));
}

TEST_CASE("parallel_evaluate is worker invariant") {
  const ImageBatch batch = synth_blobs(30, 4, {1, 8, 8}, 65).all();
  AttackSpec s;
  s.epsilon = 0.2f;
  const EvaluationRun a = parallel_evaluate(trained(), batch, s, 1, 1);
  const EvaluationRun b = parallel_evaluate(trained(), batch, s, 1, 4);
  CHECK(a.clean_pred == b.clean_pred);
  REQUIRE(a.report.metrics.size() == b.report.metrics.size());
  for (const auto& [key, value] : a.report.metrics) {
    INFO(key);
    const double other = b.report.metrics.at(key);
    CHECK((value == other || (std::isnan(value) && std::isnan(other))));
  }
  CHECK(same_outcome(a.outcome, b.outcome));
}

TEST_CASE("benchmark record and JSON schema") {
  const ImageBatch batch = synth_blobs(16, 4, {1, 8, 8}, 66).all();
  AttackSpec s;
  s.kind = AttackKind::kPgd;
  s.steps = 2;
  const BenchmarkRecord r = benchmark(trained(), batch, s, 1, {1, 2}, 3, "pgd", "synth");
  REQUIRE(r.results.size() == 2);
  CHECK(r.results[0].workers == 1);
  CHECK(r.results[0].speedup == 1.0);
  for (const BenchmarkEntry& e : r.results) CHECK(e.seconds > 0.0);

  const auto j = nlohmann::json::parse(to_json(r));
  CHECK(j.at("task") == "pgd");
  CHECK(j.at("dataset") == "synth");
  CHECK(j.at("repetitions") == 3);
  CHECK(j.at("machine").is_string());
  REQUIRE(j.at("results").is_array());
  for (const auto& e : j.at("results")) {
    CHECK(e.at("workers").is_number_integer());
    CHECK(e.at("seconds").is_number());
    CHECK(e.at("speedup").is_number());
  }

  const BenchmarkRecord only_two = benchmark(trained(), batch, s, 1, {2}, 1, "pgd", "synth");
  REQUIRE(only_two.results.size() == 1);
  CHECK(only_two.results[0].workers == 2);
  CHECK_THROWS_AS(benchmark(trained(), batch, s, 1, {1}, 0, "pgd", "synth"), ConfigError);
}
