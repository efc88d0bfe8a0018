#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "advsec/attacks.hpp"
#include "advsec/dataset.hpp"
#include "advsec/model.hpp"

namespace advsec {

struct TrainConfig {
  int epochs = 1;
  size_t batch_size = 32;
  float lr = 0.01f;
  float momentum = 0.9f;
  uint64_t seed = 0;
  // Fraction of each batch replaced by adversarial examples.
  float mix_ratio = 0.0f;
  std::optional<AttackSpec> attack;  // present iff mix_ratio > 0

  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double clean_accuracy = 0.0;  // whole training set, end of epoch
  // Accuracy of the model on the examples crafted during the epoch, measured
  // before each update; absent without adversarial mixing.
  std::optional<double> adversarial_accuracy;
  double seconds = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

struct TrainResult {
  Model model;
  TrainHistory history;
};

// SGD with momentum over batches shuffled per epoch from cfg.seed.
TrainResult train_standard(Model model, const Dataset& ds, const TrainConfig& cfg);

// The first ceil(mix_ratio * B) samples of every shuffled batch are replaced
// by examples crafted against the current model; labels stay the true labels.
TrainResult adversarial_train(Model model, const Dataset& ds, const TrainConfig& cfg);

// As adversarial_train, but each batch draws its crafting source uniformly from
// {model being trained} and the static models.
TrainResult ensemble_adversarial_train(Model model, std::span<const Model> static_models,
                                       const Dataset& ds, const TrainConfig& cfg);

}  // namespace advsec
