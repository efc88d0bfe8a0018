#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "advsec/tensor.hpp"

namespace advsec {

enum class Primitive {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatmul,
  kConv2d,
  kMaxPool2x2,
  kRelu,
  kTanh,
  kSigmoid,
  kSoftmaxCrossEntropy,
  kSum,
  kMean,
  kClamp,
  kSign,
  kReshape,
  kSlice,
};

const char* to_string(Primitive kind);

// Attributes consumed by the primitives that need them; the rest ignore them.
struct Attrs {
  float scale = 1.0f;        // scale
  float lo = 0.0f;           // clamp
  float hi = 1.0f;           // clamp
  int stride = 1;            // conv2d
  int pad = 0;               // conv2d
  std::vector<int> labels;   // softmax_cross_entropy, one per row
  Shape shape;               // reshape
  size_t start = 0;          // slice, rows [start, end) of axis 0
  size_t end = 0;
};

class Tape;

// Handle to a value produced during a computation. Values that do not depend
// on any gradient-requiring leaf are constants and carry no tape node.
class Var {
 public:
  Var() = default;

  bool defined() const { return value_ != nullptr; }
  const Tensor& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  bool requires_grad() const { return node_ >= 0; }
  int id() const { return node_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  friend Var constant(Tensor);
  friend Var constant(std::shared_ptr<const Tensor>);
  friend Var apply_primitive(Primitive, std::span<const Var>, const Attrs&);

  std::shared_ptr<const Tensor> value_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

Var constant(Tensor value);
Var constant(std::shared_ptr<const Tensor> value);

// Gradients of the leaves reached by one backward pass, keyed by node id.
class GradMap {
 public:
  bool contains(const Var& v) const { return grads_.count(v.id()) != 0; }
  const Tensor& at(const Var& v) const;
  Tensor take(const Var& v);
  size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<int, Tensor> grads_;
};

// Append-only record of the primitives applied to gradient-requiring values.
// One tape per computation and per thread; there is no global autodiff state.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var leaf(std::shared_ptr<const Tensor> value);

  // Reverse pass from a scalar loss.
  GradMap backward(const Var& loss) const;
  // Vector-Jacobian product: reverse pass seeded with `seed` at `output`.
  GradMap backward(const Var& output, const Tensor& seed) const;

  size_t size() const { return nodes_.size(); }

  // Hash of every piecewise-linear branch decision on the tape (relu masks,
  // maxpool argmax, clamp masks). Two evaluations with equal signatures lie on
  // the same linear piece.
  uint64_t piecewise_signature() const;

 private:
  friend Var apply_primitive(Primitive, std::span<const Var>, const Attrs&);

  struct Node {
    Primitive kind = Primitive::kLeaf;
    std::vector<int> inputs;
    std::vector<std::shared_ptr<const Tensor>> input_values;
    std::shared_ptr<const Tensor> output;
    Attrs attrs;
    std::vector<uint32_t> argmax;  // maxpool routing
    Tensor probs;                  // softmax_cross_entropy
  };

  int push(Node node);

  std::vector<Node> nodes_;
};

// Forward evaluation of one primitive; records a node when any input is on a tape.
Var apply_primitive(Primitive kind, std::span<const Var> inputs, const Attrs& attrs = {});

namespace ops {

// add/sub/mul accept `b` whose shape is a suffix of `a`'s (bias-style broadcast).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float factor);
Var matmul(const Var& a, const Var& b);
// `bias` may be an undefined Var.
Var conv2d(const Var& input, const Var& kernel, const Var& bias, int stride, int pad);
Var maxpool2x2(const Var& input);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
// Per-row cross-entropy of softmax(logits) against integer labels, shape (N).
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);
Var sum(const Var& a);
Var mean(const Var& a);
Var clamp(const Var& a, float lo, float hi);
Var sign(const Var& a);
Var reshape(const Var& a, Shape shape);
Var slice(const Var& a, size_t start, size_t end);

}  // namespace ops

struct GradCheckReport {
  double max_abs_error = 0.0;
  // max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf)
  double max_rel_error = 0.0;
  size_t checked = 0;
  // Coordinates whose +/- probes landed on different linear pieces.
  size_t skipped_kinks = 0;
  bool passed = false;
};

using ScalarFunction = std::function<Var(Tape&, const Var&)>;

// Central-difference check of backward() at `point`. The probe for coordinate
// i uses h = step * (|x_i| + 1).
GradCheckReport grad_check(const ScalarFunction& fn, const Tensor& point, double step,
                           double tolerance);

}  // namespace advsec
