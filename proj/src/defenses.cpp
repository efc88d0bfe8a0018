#include "advsec/defenses.hpp"

#include <chrono>
#include <cmath>

#include "advsec/errors.hpp"
#include "advsec/evaluation.hpp"
#include "advsec/rng.hpp"

namespace advsec {

namespace {

using Clock = std::chrono::steady_clock;

// Copies rows [0, k) of `src` over rows [0, k) of `dst`.
void overwrite_rows(Tensor& dst, const Tensor& src, size_t k) {
  const size_t d = dst.numel() / dst.dim(0);
  std::copy_n(src.data().begin(), k * d, dst.data().begin());
}

TrainResult train_loop(Model model, std::span<const Model> static_models, const Dataset& ds,
                       const TrainConfig& cfg) {
  cfg.validate();
  if (ds.num_classes() != model.num_classes())
    throw ConfigError("dataset has " + std::to_string(ds.num_classes()) + " classes, model expects " +
                      std::to_string(model.num_classes()));
  const bool mixing = cfg.mix_ratio > 0.0f;
  SgdState state;
  TrainHistory history;
  size_t global_batch = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    const auto order = batch_indices(ds.size(), cfg.batch_size,
                                     stream_seed(cfg.seed, static_cast<uint64_t>(epoch), "epoch"));
    double loss_sum = 0.0;
    size_t seen = 0, crafted = 0, crafted_correct = 0, position = 0;

    for (const auto& indices : order) {
      ImageBatch batch = ds.gather(indices);
      const size_t n = batch.size();
      const auto k = mixing ? static_cast<size_t>(std::ceil(cfg.mix_ratio * static_cast<double>(n))) : 0;
      if (k > 0) {
        const Model* source = &model;
        if (!static_models.empty()) {
          Rng pick(cfg.seed, global_batch, "ensemble");
          const size_t choice = pick.below(static_models.size() + 1);
          if (choice > 0) source = &static_models[choice - 1];
        }
        const ImageBatch head = batch.slice(0, k);
        const AttackContext ctx{stream_seed(cfg.seed, static_cast<uint64_t>(epoch), "craft"), position};
        const AttackOutcome adv = run_attack(*source, head, *cfg.attack, ctx);
        overwrite_rows(batch.images, adv.adversarial.images, k);
      }

      Tape tape;
      std::vector<Var> params;
      const Var logits = model.forward(tape, constant(batch.images), params);
      const Var loss = ops::mean(ops::softmax_cross_entropy(logits, batch.labels));
      if (k > 0) {
        const auto pred = argmax_rows(logits.value());
        for (size_t i = 0; i < k; ++i) crafted_correct += pred[i] == batch.labels[i];
        crafted += k;
      }
      GradMap grads = tape.backward(loss);
      NamedGrads named;
      for (size_t i = 0; i < params.size(); ++i) named[model.parameters()[i].name] = grads.take(params[i]);
      sgd_step(model, named, cfg.lr, cfg.momentum, state);

      loss_sum += static_cast<double>(loss.value().item()) * static_cast<double>(n);
      seen += n;
      position += n;
      ++global_batch;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(seen);
    rec.clean_accuracy = accuracy(model, ds);
    if (mixing) rec.adversarial_accuracy = static_cast<double>(crafted_correct) / static_cast<double>(crafted);
    rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    history.push_back(rec);
  }
  return {std::move(model), std::move(history)};
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("defense.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("defense.batch_size must be >= 1");
  if (!(std::isfinite(lr) && lr > 0.0f)) throw ConfigError("defense.lr must be > 0");
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("defense.momentum must lie in [0, 1)");
  if (!(mix_ratio >= 0.0f && mix_ratio <= 1.0f)) throw ConfigError("defense.mix_ratio must lie in [0, 1]");
  if (mix_ratio > 0.0f && !attack) throw ConfigError("defense.attack is required when mix_ratio > 0");
  if (mix_ratio == 0.0f && attack) throw ConfigError("defense.attack given but mix_ratio is 0");
  if (attack) {
    attack->validate();
    if (attack->targeted) throw ConfigError("defense.attack.targeted is not supported; crafting is untargeted");
  }
}

TrainResult train_standard(Model model, const Dataset& ds, const TrainConfig& cfg) {
  if (cfg.mix_ratio != 0.0f) throw ConfigError("train_standard requires defense.mix_ratio = 0");
  return train_loop(std::move(model), {}, ds, cfg);
}

TrainResult adversarial_train(Model model, const Dataset& ds, const TrainConfig& cfg) {
  return train_loop(std::move(model), {}, ds, cfg);
}

TrainResult ensemble_adversarial_train(Model model, std::span<const Model> static_models,
                                       const Dataset& ds, const TrainConfig& cfg) {
  if (static_models.empty()) throw ConfigError("ensemble adversarial training needs at least one static model");
  if (cfg.mix_ratio == 0.0f) throw ConfigError("ensemble adversarial training requires defense.mix_ratio > 0");
  for (const Model& m : static_models)
    if (m.spec().input != model.spec().input || m.num_classes() != model.num_classes())
      throw ConfigError("ensemble model does not match the trained model's input or classes");
  return train_loop(std::move(model), static_models, ds, cfg);
}

}  // namespace advsec
