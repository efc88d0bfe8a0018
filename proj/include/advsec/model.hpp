#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "advsec/autodiff.hpp"
#include "advsec/dataset.hpp"

namespace advsec {

// Anything that maps an image batch to class labels. Decision-based attacks
// see a model only through this interface.
class LabelOracle {
 public:
  virtual ~LabelOracle() = default;
  virtual size_t num_classes() const = 0;
  virtual std::vector<int> predict_labels(const Tensor& images) const = 0;
};

// A classifier whose logits can be differentiated with respect to its input.
class DifferentiableClassifier : public LabelOracle {
 public:
  // Logits for `images`, recorded on the images' tape when they require grad.
  // Parameters enter as constants.
  virtual Var logits(const Var& images) const = 0;

  Tensor logits(const Tensor& images) const;
  std::vector<int> predict_labels(const Tensor& images) const override;
};

// Index of the largest entry of each row; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

struct Prediction {
  std::vector<int> labels;
  Tensor probabilities;  // softmax rows
};

Prediction predict(const DifferentiableClassifier& model, const Tensor& images);

enum class Arch : uint8_t { kMlpSmall = 0, kCnnSmall = 1 };

const char* to_string(Arch arch);
Arch parse_arch(const std::string& name);

struct ModelSpec {
  Arch arch = Arch::kMlpSmall;
  ImageShape input;
  size_t num_classes = 10;
  std::vector<float> mean;  // per channel
  std::vector<float> std;   // per channel

  // Throws ConfigError when the spec cannot be built.
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

struct Parameter {
  std::string name;
  std::shared_ptr<Tensor> value;
};

class Model : public DifferentiableClassifier {
 public:
  Model(ModelSpec spec, std::vector<Parameter> params);
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelSpec& spec() const { return spec_; }
  size_t num_classes() const override { return spec_.num_classes; }

  const std::vector<Parameter>& parameters() const { return params_; }
  Tensor& parameter(const std::string& name);
  const Tensor& parameter(const std::string& name) const;

  using DifferentiableClassifier::logits;
  Var logits(const Var& images) const override;

  // Training forward: every parameter becomes a leaf on `tape`, returned in
  // parameter order through `param_vars`.
  Var forward(Tape& tape, const Var& images, std::vector<Var>& param_vars) const;

  bool bitwise_equal(const Model& other) const;

 private:
  Var run(const Var& images, std::span<const Var> params) const;
  void check_input(const Shape& shape) const;

  ModelSpec spec_;
  std::vector<Parameter> params_;
  Var norm_scale_;
  Var norm_shift_;
};

// Kaiming-uniform (fan-in) weights and zero biases, drawn in parameter order
// from the stream seeded by `init_seed`.
Model build_model(const ModelSpec& spec, uint64_t init_seed);

Tensor forward(const Model& model, const ImageBatch& batch);

using NamedGrads = std::map<std::string, Tensor>;

struct SgdState {
  std::vector<Tensor> velocity;  // parameter order
};

// v <- momentum * v + g; p <- p - lr * v.
void sgd_step(Model& model, const NamedGrads& grads, float lr, float momentum, SgdState& state);

// Raw contents of a weight file; read_weight_file checks only the container
// layout (magic, version, lengths), not agreement with an architecture.
struct WeightFile {
  ModelSpec spec;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_weight_file(const WeightFile& file, const std::filesystem::path& path);
WeightFile read_weight_file(const std::filesystem::path& path);

void save_weights(const Model& model, const std::filesystem::path& path);
// Throws FormatError (bad magic, version mismatch, truncation, shape mismatch)
// or IoError when the file cannot be opened.
Model load_weights(const std::filesystem::path& path);

}  // namespace advsec
