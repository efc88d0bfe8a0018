#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "advsec/autodiff.hpp"
#include "advsec/dataset.hpp"
#include "advsec/model.hpp"

namespace advsec::testing {

// logits = flatten(x) * W + b with W of shape (D, K).
class LinearClassifier : public DifferentiableClassifier {
 public:
  LinearClassifier(Tensor weight, Tensor bias) : weight_(std::move(weight)), bias_(std::move(bias)) {}

  size_t num_classes() const override { return bias_.numel(); }

  using DifferentiableClassifier::logits;
  Var logits(const Var& images) const override {
    const Var flat = ops::reshape(images, {images.shape()[0], weight_.dim(0)});
    return ops::add(ops::matmul(flat, constant(weight_)), constant(bias_));
  }

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

// Forwards to a model while counting label queries and gradient-carrying
// forward passes.
class CountingClassifier : public DifferentiableClassifier {
 public:
  explicit CountingClassifier(const DifferentiableClassifier& inner) : inner_(inner) {}

  size_t num_classes() const override { return inner_.num_classes(); }

  using DifferentiableClassifier::logits;
  Var logits(const Var& images) const override {
    if (images.requires_grad()) ++gradient_calls;
    return inner_.logits(images);
  }

  std::vector<int> predict_labels(const Tensor& images) const override {
    label_queries += images.dim(0);
    return inner_.predict_labels(images);
  }

  mutable std::atomic<size_t> gradient_calls{0};
  mutable std::atomic<size_t> label_queries{0};

 private:
  const DifferentiableClassifier& inner_;
};

inline Model train_on(const Dataset& ds, const ModelSpec& spec, uint64_t seed, int steps,
                      float lr = 0.05f) {
  Model m = build_model(spec, seed);
  SgdState state;
  int done = 0;
  for (uint64_t epoch = 0; done < steps; ++epoch) {
    for (const auto& batch : batch_iter(ds, 20, epoch)) {
      Tape tape;
      std::vector<Var> params;
      Var loss = ops::mean(
          ops::softmax_cross_entropy(m.forward(tape, constant(batch.images), params), batch.labels));
      GradMap g = tape.backward(loss);
      NamedGrads named;
      for (size_t i = 0; i < params.size(); ++i) named[m.parameters()[i].name] = g.take(params[i]);
      sgd_step(m, named, lr, 0.9f, state);
      if (++done == steps) break;
    }
  }
  return m;
}

inline ModelSpec blob_spec(Arch arch, size_t classes = 4) {
  return ModelSpec{arch, {1, 8, 8}, classes, {0.5f}, {0.25f}};
}

}  // namespace advsec::testing
