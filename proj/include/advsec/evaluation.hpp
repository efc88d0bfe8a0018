#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advsec/attacks.hpp"
#include "advsec/dataset.hpp"
#include "advsec/model.hpp"

namespace advsec {

// Fraction of samples whose prediction equals the true label. Empty input is
// an error.
double accuracy(const LabelOracle& model, const ImageBatch& batch);
double accuracy(const LabelOracle& model, const Dataset& ds, size_t batch_size = 256);

std::vector<int> predict_all(const LabelOracle& model, const Tensor& images, size_t batch_size = 256);

struct RobustnessResult {
  double clean_accuracy = 0.0;
  double adversarial_accuracy = 0.0;
  // Untargeted: share of initially-correct samples that end misclassified.
  // Targeted: share of all samples that reach their target. NaN when the
  // denominator is empty.
  double attack_success_rate = 0.0;
  size_t successes = 0;
  size_t eligible = 0;
};

// Metrics of an already computed attack outcome.
RobustnessResult summarize_attack(const ImageBatch& batch, const std::vector<int>& clean_pred,
                                  const AttackOutcome& outcome);

RobustnessResult robustness(const DifferentiableClassifier& model, const ImageBatch& batch,
                            const AttackSpec& spec, const AttackContext& ctx,
                            const std::vector<int>* manual_targets = nullptr);

struct TransferResult {
  double rate = std::numeric_limits<double>::quiet_NaN();  // NaN when no source successes
  size_t transferred = 0;
  size_t source_successes = 0;
  bool defined() const { return source_successes > 0; }
};

// Among samples where the source attack succeeded, the share that also
// deceive `target` (targeted outcomes must hit the same target).
TransferResult transferability(const AttackOutcome& source, const ImageBatch& original,
                               const LabelOracle& target);

// Per sample, MAX = 1. Identical images give +infinity.
std::vector<double> psnr(const Tensor& x, const Tensor& y);

// Per sample: mean over channels and valid 11x11 Gaussian (sigma 1.5) windows,
// C1 = 0.01^2, C2 = 0.03^2. Images smaller than the window are rejected.
std::vector<double> ssim(const Tensor& x, const Tensor& y);

struct PerturbationStats {
  double mean_l2 = 0.0;
  double max_l2 = 0.0;
  double mean_linf = 0.0;
  double max_linf = 0.0;
};

PerturbationStats perturbation_stats(const Tensor& x, const Tensor& y);

struct SampleRecord {
  size_t index = 0;
  int true_label = 0;
  int clean_pred = 0;
  int adv_pred = 0;
  bool success = false;
  double l2 = 0.0;
  double linf = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;  // NaN when the image is smaller than the SSIM window
};

struct EvaluationReport {
  std::map<std::string, double> metrics;
  std::vector<SampleRecord> per_sample;
};

// The six reported metrics (clean/adversarial accuracy, attack success rate,
// transferability when a transfer model is given, mean PSNR and SSIM) plus
// perturbation statistics. Mean PSNR is taken over perturbed samples only, so
// untouched samples do not turn it into +infinity.
EvaluationReport build_report(const ImageBatch& batch, const std::vector<int>& clean_pred,
                              const AttackOutcome& outcome, const LabelOracle* transfer_model,
                              size_t index_offset = 0);

}  // namespace advsec
