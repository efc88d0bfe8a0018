#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advsec/dataset.hpp"
#include "advsec/model.hpp"

namespace advsec {

enum class AttackKind { kFgsm, kBim, kPgd, kDeepFool, kCwL2, kBoundary };
enum class Norm { kLinf, kL2 };
enum class TargetStrategy { kManual, kRandomDifferent, kLeastLikely, kNextClass };

const char* to_string(AttackKind kind);
const char* to_string(Norm norm);
const char* to_string(TargetStrategy strategy);
AttackKind parse_attack_kind(const std::string& name);
Norm parse_norm(const std::string& name);
TargetStrategy parse_target_strategy(const std::string& name);

// Attack identity and hyperparameters. Budgets and step sizes are in raw
// [0,1] pixel units.
struct AttackSpec {
  AttackKind kind = AttackKind::kFgsm;
  float epsilon = 0.3f;
  float alpha = 0.01f;
  int steps = 10;
  bool random_start = false;
  Norm norm = Norm::kLinf;
  // deepfool
  float overshoot = 0.02f;
  int max_iter = 50;
  // cw_l2
  float c = 1.0f;
  float kappa = 0.0f;
  float lr = 0.01f;
  int binary_search_steps = 5;
  // boundary
  int max_queries = 1000;
  float spherical_step = 0.01f;
  float source_step = 0.01f;

  bool targeted = false;
  TargetStrategy target_strategy = TargetStrategy::kRandomDifferent;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Where per-sample random streams come from: sample i of a batch draws from
// the stream keyed (seed, index_offset + i, purpose), so results do not depend
// on how a dataset is cut into batches.
struct AttackContext {
  uint64_t seed = 0;
  size_t index_offset = 0;
};

struct AttackOutcome {
  ImageBatch adversarial;  // labels are the true labels
  std::vector<uint8_t> success;
  std::vector<int> iterations;
  std::vector<int> queries;
  std::vector<float> linf_norm;
  std::vector<float> l2_norm;
  std::vector<int> adversarial_pred;
  std::optional<std::vector<int>> targets;

  size_t size() const { return success.size(); }
};

// Targets differ from the true label for every generative strategy.
std::vector<int> generate_targets(std::span<const int> labels, size_t num_classes,
                                  TargetStrategy strategy, const AttackContext& ctx,
                                  const DifferentiableClassifier* model = nullptr,
                                  const Tensor* images = nullptr);

// Gradient of sum_i CE(model(x)_i, labels_i) with respect to x.
Tensor loss_gradient(const DifferentiableClassifier& model, const Tensor& images,
                     std::span<const int> labels);

// Kind-specific attacks. `targets` must be given iff spec.targeted.
AttackOutcome fgsm(const DifferentiableClassifier& model, const ImageBatch& batch,
                   const AttackSpec& spec, const std::vector<int>* targets = nullptr);
AttackOutcome bim(const DifferentiableClassifier& model, const ImageBatch& batch,
                  const AttackSpec& spec, const std::vector<int>* targets = nullptr);
AttackOutcome pgd(const DifferentiableClassifier& model, const ImageBatch& batch,
                  const AttackSpec& spec, const AttackContext& ctx,
                  const std::vector<int>* targets = nullptr);
AttackOutcome deepfool(const DifferentiableClassifier& model, const ImageBatch& batch,
                       const AttackSpec& spec);
AttackOutcome cw_l2(const DifferentiableClassifier& model, const ImageBatch& batch,
                    const AttackSpec& spec, const std::vector<int>* targets = nullptr);
// Decision-based: the model is reachable only through predicted labels.
AttackOutcome boundary_attack(const LabelOracle& model, const ImageBatch& batch,
                              const AttackSpec& spec, const AttackContext& ctx);

// Validates the spec, resolves targets (manual or generated) and dispatches.
AttackOutcome run_attack(const DifferentiableClassifier& model, const ImageBatch& batch,
                         const AttackSpec& spec, const AttackContext& ctx,
                         const std::vector<int>* manual_targets = nullptr);

}  // namespace advsec
