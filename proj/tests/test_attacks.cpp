#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "advsec/attacks.hpp"
#include "advsec/errors.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace advsec;
using testing::LinearClassifier;

namespace {

// Trained once and shared; every attack test reads it only.
const Model& blob_model() {
  static const Model m = [] {
    Dataset ds = synth_blobs(200, 4, {1, 8, 8}, 101);
    return testing::train_on(ds, testing::blob_spec(Arch::kMlpSmall), 102, 200);
  }();
  return m;
}

const Model& blob_cnn() {
  static const Model m = [] {
    Dataset ds = synth_blobs(200, 4, {1, 8, 8}, 103);
    return testing::train_on(ds, testing::blob_spec(Arch::kCnnSmall), 104, 200);
  }();
  return m;
}

ImageBatch eval_batch(size_t n = 12, uint64_t seed = 105) { return synth_blobs(n, 4, {1, 8, 8}, seed).all(); }

LinearClassifier random_linear(Rng& rng, size_t d, size_t k) {
  return LinearClassifier(testing::random_tensor(rng, {d, k}, -1.0, 1.0), testing::random_tensor(rng, {k}, -0.5, 0.5));
}

double success_rate(const AttackOutcome& o) {
  return static_cast<double>(std::count(o.success.begin(), o.success.end(), 1)) / static_cast<double>(o.size());
}

AttackSpec spec_of(AttackKind kind) {
  AttackSpec s;
  s.kind = kind;
  return s;
}

// Softmax over [0, w x + b] is the logistic model sigma(w x + b).
LinearClassifier logistic(float w, float b) { return LinearClassifier(Tensor({1, 2}, {0.0f, w}), Tensor({2}, {0.0f, b})); }

ImageBatch one_pixel(float x, int label) { return {Tensor({1, 1, 1, 1}, {x}), {label}}; }

}  // namespace

TEST_CASE("fgsm, bim and pgd on the 1-feature logistic model") {
  const LinearClassifier m = logistic(2.0f, 0.0f);
  AttackSpec spec = spec_of(AttackKind::kFgsm);
  spec.epsilon = 0.1f;
  // dCE/dx = -(1 - sigma(1)) * 2 < 0 for label 1, so the step goes down.
  CHECK(fgsm(m, one_pixel(0.5f, 1), spec).adversarial.images[0] == doctest::Approx(0.4f));

  spec.kind = AttackKind::kBim;
  spec.epsilon = 0.3f;
  spec.alpha = 0.05f;
  spec.steps = 4;
  CHECK(bim(m, one_pixel(0.5f, 1), spec).adversarial.images[0] == doctest::Approx(0.3f));

  spec.kind = AttackKind::kPgd;
  spec.epsilon = 0.1f;
  spec.alpha = 0.25f;
  spec.steps = 1;
  CHECK(pgd(m, one_pixel(0.5f, 0), spec, {}).adversarial.images[0] == doctest::Approx(0.6f));
}

TEST_CASE("fgsm on a linear model matches the closed-form sign step") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t d = 12, k = 3;
    LinearClassifier model = random_linear(rng, d, k);
    ImageBatch batch{testing::random_tensor(rng, {2, 1, 3, 4}, 0.0, 1.0), {0, 2}};
    AttackSpec spec = spec_of(AttackKind::kFgsm);
    spec.epsilon = 0.1f;
    const AttackOutcome out = fgsm(model, batch, spec);
    for (size_t i = 0; i < 2; ++i) {
      // dCE/dx = W (softmax(z) - onehot(y)), in double.
      std::vector<double> z(k);
      for (size_t c = 0; c < k; ++c) {
        z[c] = model.bias()[c];
        for (size_t j = 0; j < d; ++j) z[c] += static_cast<double>(batch.images[i * d + j]) * model.weight()[j * k + c];
      }
      const double mx = *std::max_element(z.begin(), z.end());
      double total = 0.0;
      for (double v : z) total += std::exp(v - mx);
      for (size_t j = 0; j < d; ++j) {
        double g = 0.0;
        for (size_t c = 0; c < k; ++c)
          g += model.weight()[j * k + c] * (std::exp(z[c] - mx) / total - (static_cast<int>(c) == batch.labels[i]));
        if (std::fabs(g) < 1e-5) continue;
        const float x = batch.images[i * d + j];
        const float expected = std::clamp(x + (g > 0 ? 0.1f : -0.1f), 0.0f, 1.0f);
        CHECK(out.adversarial.images[i * d + j] == expected);
      }
    }
  }
}

TEST_CASE("fgsm: budget, box and zero epsilon") {
  const ImageBatch batch = eval_batch();
  AttackSpec spec = spec_of(AttackKind::kFgsm);
  spec.epsilon = 0.2f;
  const AttackOutcome out = fgsm(blob_model(), batch, spec);
  for (size_t i = 0; i < batch.size(); ++i) CHECK(out.linf_norm[i] <= 0.2f + 1e-6f);
  for (float v : out.adversarial.images.data()) CHECK((v >= 0.0f && v <= 1.0f));
  CHECK(out.adversarial.labels == batch.labels);

  spec.epsilon = 0.0f;
  CHECK(fgsm(blob_model(), batch, spec).adversarial.images.bitwise_equal(batch.images));
}

TEST_CASE("fgsm equals one-step bim and pgd without random start, bitwise") {
  const ImageBatch batch = eval_batch();
  for (const Model* m : {&blob_model(), &blob_cnn()}) {
    AttackSpec spec = spec_of(AttackKind::kFgsm);
    spec.epsilon = 0.15f;
    spec.alpha = 0.15f;
    spec.steps = 1;
    const Tensor a = fgsm(*m, batch, spec).adversarial.images;
    const Tensor b = bim(*m, batch, spec).adversarial.images;
    const Tensor c = pgd(*m, batch, spec, {}).adversarial.images;
    CHECK(a.bitwise_equal(b));
    CHECK(a.bitwise_equal(c));
  }
}

TEST_CASE("bim and pgd stay within budget; iterating is at least as strong as fgsm") {
  const ImageBatch batch = eval_batch(40, 106);
  AttackSpec spec = spec_of(AttackKind::kBim);
  spec.epsilon = 0.25f;
  spec.alpha = 0.05f;
  spec.steps = 10;
  const AttackOutcome it = bim(blob_model(), batch, spec);
  for (float v : it.linf_norm) CHECK(v <= 0.25f + 1e-6f);
  const AttackOutcome one = fgsm(blob_model(), batch, spec);
  CHECK(success_rate(it) >= success_rate(one));

  spec.kind = AttackKind::kPgd;
  spec.random_start = true;
  const AttackOutcome p = pgd(blob_model(), batch, spec, {7, 0});
  for (float v : p.linf_norm) CHECK(v <= 0.25f + 1e-6f);

  spec.norm = Norm::kL2;
  spec.epsilon = 1.5f;
  spec.alpha = 0.3f;
  for (bool rs : {false, true}) {
    spec.random_start = rs;
    const AttackOutcome l2 = pgd(blob_model(), batch, spec, {7, 0});
    for (float v : l2.l2_norm) CHECK(v <= 1.5f * (1.0f + 1e-5f));
    for (float v : l2.adversarial.images.data()) CHECK((v >= 0.0f && v <= 1.0f));
  }
}

TEST_CASE("pgd l2 leaves a sample alone when its gradient vanishes") {
  LinearClassifier zero(Tensor({64, 4}), Tensor({4}));
  const ImageBatch batch = eval_batch(4);
  AttackSpec spec = spec_of(AttackKind::kPgd);
  spec.norm = Norm::kL2;
  spec.epsilon = 1.0f;
  const AttackOutcome out = pgd(zero, batch, spec, {});
  CHECK(out.adversarial.images.bitwise_equal(batch.images));
}

TEST_CASE("pgd random start is reproducible and seed dependent") {
  const ImageBatch batch = eval_batch();
  AttackSpec spec = spec_of(AttackKind::kPgd);
  spec.random_start = true;
  spec.epsilon = 0.2f;
  spec.steps = 3;
  const Tensor a = pgd(blob_model(), batch, spec, {5, 0}).adversarial.images;
  const Tensor b = pgd(blob_model(), batch, spec, {5, 0}).adversarial.images;
  const Tensor c = pgd(blob_model(), batch, spec, {6, 0}).adversarial.images;
  CHECK(a.bitwise_equal(b));
  CHECK_FALSE(a.bitwise_equal(c));
}

TEST_CASE("every attack is invariant to how the batch is split") {
  const ImageBatch batch = eval_batch(6, 107);
  std::vector<AttackSpec> specs;
  for (AttackKind kind : {AttackKind::kFgsm, AttackKind::kBim, AttackKind::kPgd, AttackKind::kDeepFool,
                          AttackKind::kCwL2, AttackKind::kBoundary}) {
    AttackSpec s = spec_of(kind);
    s.epsilon = 0.2f;
    s.alpha = 0.05f;
    s.steps = 5;
    s.random_start = true;
    s.max_iter = 10;
    s.binary_search_steps = 2;
    s.max_queries = 60;
    specs.push_back(s);
  }
  AttackSpec targeted = spec_of(AttackKind::kPgd);
  targeted.targeted = true;
  targeted.steps = 3;
  specs.push_back(targeted);
  for (const Model* m : {&blob_model(), &blob_cnn()}) {
    for (const AttackSpec& s : specs) {
      INFO(to_string(s.kind), " targeted ", s.targeted);
      const AttackOutcome whole = run_attack(*m, batch, s, {9, 100});
      const AttackOutcome left = run_attack(*m, batch.slice(0, 2), s, {9, 100});
      const AttackOutcome right = run_attack(*m, batch.slice(2, 6), s, {9, 102});
      const std::vector<ImageBatch> parts{left.adversarial, right.adversarial};
      CHECK(concat(parts).images.bitwise_equal(whole.adversarial.images));
      std::vector<int> q = left.queries;
      q.insert(q.end(), right.queries.begin(), right.queries.end());
      CHECK(q == whole.queries);
    }
  }
}

TEST_CASE("deepfool on a linear binary model takes the exact projection step") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const size_t d = 16;
    Tensor w({d, 2});
    std::vector<double> wv(d);
    double wn2 = 0.0;
    for (size_t j = 0; j < d; ++j) {
      wv[j] = rng.uniform(-0.2, 0.2);
      w[j * 2 + 1] = static_cast<float>(wv[j]);
      wn2 += wv[j] * wv[j];
    }
    Tensor x({1, 1, 4, 4});
    double dot = 0.0;
    for (size_t j = 0; j < d; ++j) {
      x[j] = static_cast<float>(rng.uniform(0.4, 0.6));
      dot += x[j] * wv[j];
    }
    // Bias puts x a small distance from the hyperplane so no pixel clips.
    const double offset = rng.uniform(0.01, 0.05) * (trial % 2 ? 1.0 : -1.0);
    const auto b = static_cast<float>(offset - dot);
    const double s = dot + b;
    const int label = s > 0 ? 1 : 0;
    LinearClassifier model(w, Tensor({2}, {0.0f, b}));
    AttackSpec spec = spec_of(AttackKind::kDeepFool);
    spec.max_iter = 1;
    spec.overshoot = 0.0f;
    const AttackOutcome out = deepfool(model, {x, {label}}, spec);
    // f_other - f_label = -s or s; the minimal step is -s w / |w|^2.
    double err = 0.0, ref = 0.0;
    for (size_t j = 0; j < d; ++j) {
      const double r = -s * wv[j] / wn2;
      err += std::pow(out.adversarial.images[j] - x[j] - r, 2);
      ref += r * r;
    }
    CHECK(std::sqrt(err / ref) < 0.01);
    CHECK(out.iterations[0] == 1);

    spec.overshoot = 0.02f;
    const AttackOutcome over = deepfool(model, {x, {label}}, spec);
    CHECK(over.l2_norm[0] == doctest::Approx(1.02 * std::fabs(s) / std::sqrt(wn2)).epsilon(1e-4));
    CHECK(over.success[0]);
  }
}

TEST_CASE("deepfool: misclassified samples and vanishing gradients") {
  const ImageBatch batch = eval_batch(4);
  LinearClassifier constant_model(Tensor({64, 4}), Tensor({4}, {0.0f, 1.0f, 0.0f, 0.0f}));
  const AttackOutcome out = deepfool(constant_model, batch, spec_of(AttackKind::kDeepFool));
  for (size_t i = 0; i < batch.size(); ++i) {
    if (batch.labels[i] == 1) {
      CHECK_FALSE(out.success[i]);
    } else {
      CHECK(out.success[i]);
    }
    CHECK(out.iterations[i] == 0);
  }
  CHECK(out.adversarial.images.bitwise_equal(batch.images));
}

TEST_CASE("deepfool fools a trained model with small perturbations") {
  const ImageBatch batch = eval_batch(20, 108);
  AttackSpec spec = spec_of(AttackKind::kDeepFool);
  const AttackOutcome df = deepfool(blob_model(), batch, spec);
  // Clipping can stall the linearization on a few samples.
  CHECK(success_rate(df) >= 0.75);
  AttackSpec f = spec_of(AttackKind::kFgsm);
  f.epsilon = 0.3f;
  const AttackOutcome fg = fgsm(blob_model(), batch, f);
  double df_l2 = 0, fg_l2 = 0;
  for (size_t i = 0; i < batch.size(); ++i) {
    df_l2 += df.l2_norm[i];
    fg_l2 += fg.l2_norm[i];
  }
  CHECK(df_l2 < fg_l2);
}

TEST_CASE("cw_l2 with c = 0 only minimizes distance") {
  const ImageBatch batch = eval_batch(4);
  LinearClassifier constant_model(Tensor({64, 4}), Tensor({4}, {0.0f, 1.0f, 0.0f, 0.0f}));
  AttackSpec spec = spec_of(AttackKind::kCwL2);
  spec.c = 0.0f;
  spec.binary_search_steps = 1;
  spec.steps = 50;
  const AttackOutcome out = cw_l2(constant_model, batch, spec);
  for (size_t i = 0; i < batch.size(); ++i) {
    CHECK(static_cast<bool>(out.success[i]) == (batch.labels[i] != 1));
    CHECK(out.l2_norm[i] < 10 * spec.lr);
  }
}

TEST_CASE("cw_l2 finds adversarial examples, targeted and untargeted") {
  const ImageBatch batch = eval_batch(12, 109);
  AttackSpec spec = spec_of(AttackKind::kCwL2);
  spec.c = 1.0f;
  spec.steps = 100;
  spec.lr = 0.05f;
  spec.binary_search_steps = 4;
  const AttackOutcome un = cw_l2(blob_model(), batch, spec);
  CHECK(success_rate(un) >= 0.9);

  spec.targeted = true;
  spec.target_strategy = TargetStrategy::kNextClass;
  const AttackOutcome tg = run_attack(blob_model(), batch, spec, {});
  REQUIRE(tg.targets);
  for (size_t i = 0; i < batch.size(); ++i)
    if (tg.success[i]) CHECK(tg.adversarial_pred[i] == (*tg.targets)[i]);
  CHECK(success_rate(tg) >= 0.75);
}

namespace {

// label = [x > 0.5]
class Threshold : public LabelOracle {
 public:
  size_t num_classes() const override { return 2; }
  std::vector<int> predict_labels(const Tensor& images) const override {
    std::vector<int> out;
    for (size_t i = 0; i < images.dim(0); ++i) out.push_back(images[i] > 0.5f ? 1 : 0);
    return out;
  }
};

}  // namespace

TEST_CASE("boundary attack converges to a 1-D threshold") {
  Threshold oracle;
  AttackSpec spec = spec_of(AttackKind::kBoundary);
  spec.max_queries = 2000;
  std::vector<double> gaps;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const AttackOutcome out = boundary_attack(oracle, one_pixel(0.9f, 1), spec, {seed, 0});
    CHECK(out.success[0]);
    CHECK(out.queries[0] <= 2000);
    gaps.push_back(std::fabs(out.adversarial.images[0] - 0.5));
  }
  std::nth_element(gaps.begin(), gaps.begin() + 10, gaps.end());
  CHECK(gaps[10] <= 0.05);
}

TEST_CASE("boundary attack never asks for gradients") {
  const ImageBatch batch = eval_batch(4);
  testing::CountingClassifier counter(blob_model());
  AttackSpec spec = spec_of(AttackKind::kBoundary);
  spec.max_queries = 150;
  const AttackOutcome out = run_attack(counter, batch, spec, {3, 0});
  CHECK(counter.gradient_calls == 0);
  size_t used = 0;
  for (int q : out.queries) {
    CHECK(q <= 150);
    used += static_cast<size_t>(q);
  }
  // Attack queries plus one clean and one final pass over the batch.
  CHECK(counter.label_queries == used + 2 * batch.size());
  for (size_t i = 0; i < batch.size(); ++i)
    if (out.queries[i] > 0) CHECK(out.l2_norm[i] > 0.0f);
}

TEST_CASE("boundary attack leaves misclassified samples alone") {
  Threshold oracle;
  const AttackOutcome out =
      boundary_attack(oracle, one_pixel(0.2f, 1), spec_of(AttackKind::kBoundary), {});
  CHECK(out.queries[0] == 0);
  CHECK(out.adversarial.images[0] == 0.2f);
  CHECK(out.success[0]);
}

TEST_CASE("generate_targets strategies") {
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
  const auto next = generate_targets(labels, 4, TargetStrategy::kNextClass, {});
  for (size_t i = 0; i < labels.size(); ++i) CHECK(next[i] == (labels[i] + 1) % 4);

  std::vector<int> many(400, 2);
  const auto rnd = generate_targets(many, 4, TargetStrategy::kRandomDifferent, {11, 0});
  CHECK(rnd == generate_targets(many, 4, TargetStrategy::kRandomDifferent, {11, 0}));
  std::set<int> seen(rnd.begin(), rnd.end());
  CHECK(seen == std::set<int>{0, 1, 3});

  LinearClassifier model(Tensor({1, 3}), Tensor({3}, {2.0f, -1.0f, 0.5f}));
  const Tensor x({2, 1, 1, 1});
  const std::vector<int> ys{0, 1};
  const auto ll = generate_targets(ys, 3, TargetStrategy::kLeastLikely, {}, &model, &x);
  CHECK(ll[0] == 1);
  CHECK(ll[1] == 2);
  CHECK_THROWS_AS(generate_targets(ys, 3, TargetStrategy::kLeastLikely, {}), ConfigError);
  CHECK_THROWS_AS(generate_targets(ys, 1, TargetStrategy::kNextClass, {}), ConfigError);
}

TEST_CASE("cw_l2 on a 2-pixel linear model matches a grid-search optimum") {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const float w0 = static_cast<float>(rng.uniform(0.5, 2.0)), w1 = static_cast<float>(rng.uniform(-2.0, -0.5));
    const float b = static_cast<float>(rng.uniform(-0.2, 0.2));
    const LinearClassifier m(Tensor({2, 2}, {0.0f, w0, 0.0f, w1}), Tensor({2}, {0.0f, b}));
    Tensor x({1, 1, 1, 2}, {static_cast<float>(rng.uniform(0.55, 0.8)), static_cast<float>(rng.uniform(0.2, 0.45))});
    const int label = m.predict_labels(x)[0];
    // Brute force: smallest |d| on a fine grid whose point flips the label.
    double best = 1e9;
    for (int i = -400; i <= 400; ++i)
      for (int j = -400; j <= 400; ++j) {
        const double p0 = x[0] + i * 0.0025, p1 = x[1] + j * 0.0025;
        if (p0 < 0 || p0 > 1 || p1 < 0 || p1 > 1) continue;
        const double z = w0 * p0 + w1 * p1 + b;
        const int pred = z > 0.0 ? 1 : 0;
        if (pred != label) best = std::min(best, std::hypot(p0 - x[0], p1 - x[1]));
      }
    AttackSpec spec = spec_of(AttackKind::kCwL2);
    spec.c = 1.0f;
    spec.steps = 300;
    spec.lr = 0.01f;
    spec.binary_search_steps = 8;
    const AttackOutcome out = cw_l2(m, {x, {label}}, spec);
    REQUIRE(out.success[0]);
    CHECK(out.l2_norm[0] == doctest::Approx(best).epsilon(0.05));
  }
}

TEST_CASE("pgd-20 is at least as strong as fgsm on an undefended model") {
  const ImageBatch batch = eval_batch(100, 111);
  AttackSpec spec = spec_of(AttackKind::kFgsm);
  spec.epsilon = 0.2f;
  const double fgsm_acc = 1.0 - success_rate(run_attack(blob_model(), batch, spec, {}));
  spec.kind = AttackKind::kPgd;
  spec.steps = 20;
  spec.alpha = 0.02f;
  spec.random_start = true;
  const double pgd_acc = 1.0 - success_rate(run_attack(blob_model(), batch, spec, {1, 0}));
  CHECK(pgd_acc <= fgsm_acc + 0.05);
}

TEST_CASE("norms recomputed independently match the outcome") {
  const ImageBatch batch = eval_batch(8);
  AttackSpec spec = spec_of(AttackKind::kPgd);
  spec.norm = Norm::kL2;
  spec.epsilon = 1.0f;
  spec.alpha = 0.2f;
  const AttackOutcome out = run_attack(blob_cnn(), batch, spec, {});
  CHECK_FALSE(out.targets);
  for (size_t i = 0; i < batch.size(); ++i) {
    double sq = 0, mx = 0;
    for (size_t j = 0; j < 64; ++j) {
      const double d = out.adversarial.images[i * 64 + j] - batch.images[i * 64 + j];
      sq += d * d;
      mx = std::max(mx, std::fabs(d));
    }
    CHECK(out.l2_norm[i] == doctest::Approx(std::sqrt(sq)).epsilon(1e-5));
    CHECK(out.linf_norm[i] == doctest::Approx(mx).epsilon(1e-6));
  }
}

TEST_CASE("targeted pgd moves predictions to the target") {
  const ImageBatch batch = eval_batch(20, 110);
  AttackSpec spec = spec_of(AttackKind::kPgd);
  spec.targeted = true;
  spec.target_strategy = TargetStrategy::kRandomDifferent;
  spec.epsilon = 0.5f;
  spec.alpha = 0.05f;
  spec.steps = 20;
  const AttackOutcome out = run_attack(blob_model(), batch, spec, {4, 0});
  REQUIRE(out.targets);
  for (size_t i = 0; i < batch.size(); ++i) {
    CHECK((*out.targets)[i] != batch.labels[i]);
    CHECK(static_cast<bool>(out.success[i]) == (out.adversarial_pred[i] == (*out.targets)[i]));
  }
  CHECK(success_rate(out) >= 0.8);
}

TEST_CASE("run_attack rejects bad specs and targets") {
  const ImageBatch batch = eval_batch(4);
  AttackSpec s = spec_of(AttackKind::kFgsm);
  s.epsilon = -0.1f;
  CHECK_THROWS_AS(run_attack(blob_model(), batch, s, {}), ConfigError);
  s = spec_of(AttackKind::kDeepFool);
  s.targeted = true;
  CHECK_THROWS_AS(run_attack(blob_model(), batch, s, {}), ConfigError);
  s = spec_of(AttackKind::kBoundary);
  s.targeted = true;
  CHECK_THROWS_AS(run_attack(blob_model(), batch, s, {}), ConfigError);
  s = spec_of(AttackKind::kBim);
  s.norm = Norm::kL2;
  CHECK_THROWS_AS(run_attack(blob_model(), batch, s, {}), ConfigError);

  s = spec_of(AttackKind::kFgsm);
  s.targeted = true;
  s.target_strategy = TargetStrategy::kManual;
  CHECK_THROWS_AS(run_attack(blob_model(), batch, s, {}), ConfigError);
  std::vector<int> wrong_size{1, 2};
  CHECK_THROWS_AS(run_attack(blob_model(), batch, s, {}, &wrong_size), ConfigError);
  std::vector<int> same = batch.labels;
  CHECK_THROWS_AS(run_attack(blob_model(), batch, s, {}, &same), ConfigError);
  std::vector<int> ok;
  for (int y : batch.labels) ok.push_back((y + 2) % 4);
  const AttackOutcome out = run_attack(blob_model(), batch, s, {}, &ok);
  CHECK(*out.targets == ok);

  CHECK_THROWS_AS(parse_attack_kind("jsma"), ConfigError);
  CHECK(parse_attack_kind("cw_l2") == AttackKind::kCwL2);
}
