#include "advsec/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "advsec/errors.hpp"
#include "advsec/rng.hpp"

namespace advsec {

namespace {

constexpr float kTanhShrink = 1.0f - 1e-6f;

float sign_of(float g) { return g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f); }
float clip01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

size_t per_sample(const Tensor& images) { return images.numel() / images.dim(0); }

void check_targets(const ImageBatch& batch, const AttackSpec& spec, const std::vector<int>* targets) {
  if (spec.targeted && !targets) throw ConfigError("targeted attack needs targets");
  if (!spec.targeted && targets) throw ConfigError("targets given to an untargeted attack");
  if (targets && targets->size() != batch.size())
    throw ShapeError("expected " + std::to_string(batch.size()) + " targets, got " +
                     std::to_string(targets->size()));
}

bool is_adversarial(int pred, int label, const std::vector<int>* targets, size_t i) {
  return targets ? pred == (*targets)[i] : pred != label;
}

// Norms, predictions and success flags, filled the same way for every attack.
AttackOutcome finish(const LabelOracle& model, const ImageBatch& batch, Tensor adversarial,
                     const std::vector<int>* targets, std::vector<int> iterations,
                     std::vector<int> queries) {
  const size_t n = batch.size(), d = per_sample(batch.images);
  AttackOutcome out;
  out.adversarial_pred = model.predict_labels(adversarial);
  out.iterations = std::move(iterations);
  out.queries = std::move(queries);
  out.success.resize(n);
  out.linf_norm.resize(n);
  out.l2_norm.resize(n);
  for (size_t i = 0; i < n; ++i) {
    double linf = 0.0, sq = 0.0;
    for (size_t j = i * d; j < (i + 1) * d; ++j) {
      const double diff = static_cast<double>(adversarial[j]) - batch.images[j];
      linf = std::max(linf, std::fabs(diff));
      sq += diff * diff;
    }
    out.linf_norm[i] = static_cast<float>(linf);
    out.l2_norm[i] = static_cast<float>(std::sqrt(sq));
    out.success[i] = is_adversarial(out.adversarial_pred[i], batch.labels[i], targets, i);
  }
  if (targets) out.targets = *targets;
  out.adversarial = ImageBatch{std::move(adversarial), batch.labels};
  return out;
}

// Ascent on the true-label loss, or descent on the target loss.
struct Objective {
  std::vector<int> labels;
  float direction;
};

Objective objective(const ImageBatch& batch, const std::vector<int>* targets) {
  if (targets) return {*targets, -1.0f};
  return {batch.labels, 1.0f};
}

// adv <- clip01(project(adv + direction * step * sign(grad))). Without a
// budget the projection onto the eps-ball is skipped.
void signed_step(Tensor& adv, const Tensor& x, const Tensor& grad, float step, float direction,
                 const float* eps) {
  for (size_t j = 0; j < adv.numel(); ++j) {
    float v = adv[j] + direction * step * sign_of(grad[j]);
    if (eps) v = std::min(x[j] + *eps, std::max(x[j] - *eps, v));
    adv[j] = clip01(v);
  }
}

Tensor iterate_linf(const DifferentiableClassifier& model, const ImageBatch& batch,
                    const AttackSpec& spec, Tensor start, const Objective& obj) {
  for (int s = 0; s < spec.steps; ++s) {
    const Tensor g = loss_gradient(model, start, obj.labels);
    signed_step(start, batch.images, g, spec.alpha, obj.direction, &spec.epsilon);
  }
  return start;
}

Tensor iterate_l2(const DifferentiableClassifier& model, const ImageBatch& batch,
                  const AttackSpec& spec, Tensor adv, const Objective& obj) {
  const size_t n = batch.size(), d = per_sample(batch.images);
  for (int s = 0; s < spec.steps; ++s) {
    const Tensor g = loss_gradient(model, adv, obj.labels);
    for (size_t i = 0; i < n; ++i) {
      double gn = 0.0;
      for (size_t j = i * d; j < (i + 1) * d; ++j) gn += static_cast<double>(g[j]) * g[j];
      gn = std::sqrt(gn);
      if (gn == 0.0) continue;
      std::vector<double> delta(d);
      double dn = 0.0;
      for (size_t j = 0; j < d; ++j) {
        const size_t k = i * d + j;
        delta[j] = adv[k] + obj.direction * spec.alpha * g[k] / gn - batch.images[k];
        dn += delta[j] * delta[j];
      }
      dn = std::sqrt(dn);
      const double shrink = dn > spec.epsilon ? spec.epsilon / dn : 1.0;
      for (size_t j = 0; j < d; ++j) {
        const size_t k = i * d + j;
        adv[k] = clip01(static_cast<float>(batch.images[k] + delta[j] * shrink));
      }
    }
  }
  return adv;
}

Tensor random_start(const ImageBatch& batch, const AttackSpec& spec, const AttackContext& ctx) {
  const size_t n = batch.size(), d = per_sample(batch.images);
  Tensor start = batch.images;
  for (size_t i = 0; i < n; ++i) {
    Rng rng(ctx.seed, ctx.index_offset + i, "pgd_start");
    if (spec.norm == Norm::kLinf) {
      for (size_t j = i * d; j < (i + 1) * d; ++j)
        start[j] = clip01(batch.images[j] + static_cast<float>(rng.uniform(-spec.epsilon, spec.epsilon)));
    } else {
      std::vector<double> dir(d);
      double norm = 0.0;
      for (double& v : dir) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      const double radius = spec.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
      for (size_t j = 0; j < d; ++j) {
        const size_t k = i * d + j;
        start[k] = clip01(static_cast<float>(batch.images[k] + (norm > 0.0 ? radius * dir[j] / norm : 0.0)));
      }
    }
  }
  return start;
}

Tensor gather_rows(const Tensor& t, const std::vector<size_t>& rows) {
  const size_t d = per_sample(t);
  Shape shape = t.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  for (size_t r = 0; r < rows.size(); ++r)
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  return out;
}

int best_other(std::span<const float> z, int excluded) {
  int best = -1;
  for (size_t k = 0; k < z.size(); ++k) {
    if (static_cast<int>(k) == excluded) continue;
    if (best < 0 || z[k] > z[static_cast<size_t>(best)]) best = static_cast<int>(k);
  }
  return best;
}

}  // namespace

const char* to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kBim: return "bim";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kDeepFool: return "deepfool";
    case AttackKind::kCwL2: return "cw_l2";
    case AttackKind::kBoundary: return "boundary";
  }
  return "?";
}

const char* to_string(Norm norm) { return norm == Norm::kLinf ? "linf" : "l2"; }

const char* to_string(TargetStrategy strategy) {
  switch (strategy) {
    case TargetStrategy::kManual: return "manual";
    case TargetStrategy::kRandomDifferent: return "random_different";
    case TargetStrategy::kLeastLikely: return "least_likely";
    case TargetStrategy::kNextClass: return "next_class";
  }
  return "?";
}

AttackKind parse_attack_kind(const std::string& name) {
  for (AttackKind k : {AttackKind::kFgsm, AttackKind::kBim, AttackKind::kPgd, AttackKind::kDeepFool,
                       AttackKind::kCwL2, AttackKind::kBoundary})
    if (name == to_string(k)) return k;
  throw ConfigError("unknown attack '" + name + "'");
}

Norm parse_norm(const std::string& name) {
  if (name == "linf") return Norm::kLinf;
  if (name == "l2") return Norm::kL2;
  throw ConfigError("unknown norm '" + name + "' (expected linf or l2)");
}

TargetStrategy parse_target_strategy(const std::string& name) {
  for (TargetStrategy s : {TargetStrategy::kManual, TargetStrategy::kRandomDifferent,
                           TargetStrategy::kLeastLikely, TargetStrategy::kNextClass})
    if (name == to_string(s)) return s;
  throw ConfigError("unknown target strategy '" + name + "'");
}

void AttackSpec::validate() const {
  auto require = [](bool ok, const char* field, const std::string& rule) {
    if (!ok) throw ConfigError(std::string("attack.") + field + " " + rule);
  };
  require(std::isfinite(epsilon) && epsilon >= 0.0f, "epsilon", "must be >= 0");
  require(std::isfinite(alpha) && alpha > 0.0f, "alpha", "must be > 0");
  require(steps >= 1, "steps", "must be >= 1");
  require(std::isfinite(overshoot) && overshoot >= 0.0f, "overshoot", "must be >= 0");
  require(max_iter >= 1, "max_iter", "must be >= 1");
  require(std::isfinite(c) && c >= 0.0f, "c", "must be >= 0");
  require(std::isfinite(kappa) && kappa >= 0.0f, "kappa", "must be >= 0");
  require(std::isfinite(lr) && lr > 0.0f, "lr", "must be > 0");
  require(binary_search_steps >= 1, "binary_search_steps", "must be >= 1");
  require(max_queries >= 1, "max_queries", "must be >= 1");
  require(spherical_step > 0.0f && spherical_step < 1.0f, "spherical_step", "must lie in (0, 1)");
  require(source_step > 0.0f && source_step < 1.0f, "source_step", "must lie in (0, 1)");
  if (norm == Norm::kL2 && kind != AttackKind::kPgd)
    throw ConfigError(std::string("attack.norm l2 is only supported by pgd, not ") + to_string(kind));
  if (targeted && (kind == AttackKind::kDeepFool || kind == AttackKind::kBoundary))
    throw ConfigError(std::string("attack.targeted is not supported by ") + to_string(kind));
}

std::vector<int> generate_targets(std::span<const int> labels, size_t num_classes,
                                  TargetStrategy strategy, const AttackContext& ctx,
                                  const DifferentiableClassifier* model, const Tensor* images) {
  if (num_classes < 2) throw ConfigError("targeted attacks need at least two classes");
  const auto k = static_cast<int>(num_classes);
  std::vector<int> targets(labels.size());
  switch (strategy) {
    case TargetStrategy::kManual:
      throw ConfigError("target strategy manual needs explicit targets");
    case TargetStrategy::kRandomDifferent:
      for (size_t i = 0; i < labels.size(); ++i) {
        Rng rng(ctx.seed, ctx.index_offset + i, "target");
        auto t = static_cast<int>(rng.below(num_classes - 1));
        targets[i] = t >= labels[i] ? t + 1 : t;
      }
      break;
    case TargetStrategy::kNextClass:
      for (size_t i = 0; i < labels.size(); ++i) targets[i] = (labels[i] + 1) % k;
      break;
    case TargetStrategy::kLeastLikely: {
      if (!model || !images) throw ConfigError("target strategy least_likely needs a model");
      const Tensor z = model->logits(*images);
      for (size_t i = 0; i < labels.size(); ++i) {
        int best = -1;
        for (int c = 0; c < k; ++c) {
          if (c == labels[i]) continue;
          if (best < 0 || z[i * num_classes + static_cast<size_t>(c)] < z[i * num_classes + static_cast<size_t>(best)])
            best = c;
        }
        targets[i] = best;
      }
      break;
    }
  }
  return targets;
}

Tensor loss_gradient(const DifferentiableClassifier& model, const Tensor& images,
                     std::span<const int> labels) {
  Tape tape;
  const Var x = tape.leaf(images);
  const Var loss = ops::sum(ops::softmax_cross_entropy(model.logits(x), labels));
  GradMap grads = tape.backward(loss);
  if (!grads.contains(x)) return Tensor(images.shape());
  return grads.take(x);
}

AttackOutcome fgsm(const DifferentiableClassifier& model, const ImageBatch& batch,
                   const AttackSpec& spec, const std::vector<int>* targets) {
  check_targets(batch, spec, targets);
  const Objective obj = objective(batch, targets);
  Tensor adv = batch.images;
  signed_step(adv, batch.images, loss_gradient(model, adv, obj.labels), spec.epsilon, obj.direction,
              nullptr);
  return finish(model, batch, std::move(adv), targets, std::vector<int>(batch.size(), 1),
                std::vector<int>(batch.size(), 0));
}

AttackOutcome bim(const DifferentiableClassifier& model, const ImageBatch& batch,
                  const AttackSpec& spec, const std::vector<int>* targets) {
  check_targets(batch, spec, targets);
  Tensor adv = iterate_linf(model, batch, spec, batch.images, objective(batch, targets));
  return finish(model, batch, std::move(adv), targets, std::vector<int>(batch.size(), spec.steps),
                std::vector<int>(batch.size(), 0));
}

AttackOutcome pgd(const DifferentiableClassifier& model, const ImageBatch& batch,
                  const AttackSpec& spec, const AttackContext& ctx,
                  const std::vector<int>* targets) {
  check_targets(batch, spec, targets);
  const Objective obj = objective(batch, targets);
  Tensor start = spec.random_start ? random_start(batch, spec, ctx) : batch.images;
  Tensor adv = spec.norm == Norm::kLinf ? iterate_linf(model, batch, spec, std::move(start), obj)
                                        : iterate_l2(model, batch, spec, std::move(start), obj);
  return finish(model, batch, std::move(adv), targets, std::vector<int>(batch.size(), spec.steps),
                std::vector<int>(batch.size(), 0));
}

AttackOutcome deepfool(const DifferentiableClassifier& model, const ImageBatch& batch,
                       const AttackSpec& spec) {
  const size_t n = batch.size(), d = per_sample(batch.images), k = model.num_classes();
  Tensor current = batch.images;
  std::vector<double> r_total(n * d, 0.0);
  std::vector<int> iterations(n, 0);

  std::vector<size_t> active;
  {
    const auto pred = model.predict_labels(batch.images);
    for (size_t i = 0; i < n; ++i)
      if (pred[i] == batch.labels[i]) active.push_back(i);
  }

  for (int it = 0; it < spec.max_iter && !active.empty(); ++it) {
    Tape tape;
    const Var x = tape.leaf(gather_rows(current, active));
    const Var z = model.logits(x);
    const size_t m = active.size();
    std::vector<Tensor> grads;
    for (size_t c = 0; c < k; ++c) {
      Tensor seed({m, k});
      for (size_t r = 0; r < m; ++r) seed[r * k + c] = 1.0f;
      GradMap g = tape.backward(z, seed);
      grads.push_back(g.contains(x) ? g.take(x) : Tensor(x.shape()));
    }

    std::vector<size_t> stepped;
    for (size_t r = 0; r < m; ++r) {
      const size_t i = active[r];
      const auto y = static_cast<size_t>(batch.labels[i]);
      double best_ratio = std::numeric_limits<double>::infinity();
      size_t best = k;
      double best_f = 0.0, best_wn2 = 0.0;
      for (size_t c = 0; c < k; ++c) {
        if (c == y) continue;
        double wn2 = 0.0;
        for (size_t j = 0; j < d; ++j) {
          const double w = static_cast<double>(grads[c][r * d + j]) - grads[y][r * d + j];
          wn2 += w * w;
        }
        if (wn2 == 0.0) continue;
        const double f = static_cast<double>(z.value()[r * k + c]) - z.value()[r * k + y];
        const double ratio = std::fabs(f) / std::sqrt(wn2);
        if (ratio < best_ratio) {
          best_ratio = ratio;
          best = c;
          best_f = f;
          best_wn2 = wn2;
        }
      }
      if (best == k) continue;  // every w_k vanished: give up on this sample
      const double coef = std::fabs(best_f) / best_wn2;
      for (size_t j = 0; j < d; ++j) {
        const double w = static_cast<double>(grads[best][r * d + j]) - grads[y][r * d + j];
        r_total[i * d + j] += coef * w;
        current[i * d + j] =
            clip01(static_cast<float>(batch.images[i * d + j] + (1.0 + spec.overshoot) * r_total[i * d + j]));
      }
      ++iterations[i];
      stepped.push_back(i);
    }

    active.clear();
    if (stepped.empty()) break;
    const auto pred = model.predict_labels(gather_rows(current, stepped));
    for (size_t r = 0; r < stepped.size(); ++r)
      if (pred[r] == batch.labels[stepped[r]]) active.push_back(stepped[r]);
  }
  return finish(model, batch, std::move(current), nullptr, std::move(iterations),
                std::vector<int>(n, 0));
}

AttackOutcome cw_l2(const DifferentiableClassifier& model, const ImageBatch& batch,
                    const AttackSpec& spec, const std::vector<int>* targets) {
  check_targets(batch, spec, targets);
  const size_t n = batch.size(), d = per_sample(batch.images), k = model.num_classes();
  const std::vector<float>& x = batch.images.storage();
  constexpr double kNoUpper = std::numeric_limits<double>::infinity();

  std::vector<double> c(n, spec.c), lower(n, 0.0), upper(n, kNoUpper);
  std::vector<double> best_l2(n, kNoUpper);
  Tensor best = batch.images;
  Tensor last = batch.images;

  std::vector<double> w(n * d), m(n * d), v(n * d);
  for (int round = 0; round < spec.binary_search_steps; ++round) {
    for (size_t j = 0; j < n * d; ++j) w[j] = std::atanh((2.0 * x[j] - 1.0) * kTanhShrink);
    std::fill(m.begin(), m.end(), 0.0);
    std::fill(v.begin(), v.end(), 0.0);
    std::vector<uint8_t> found(n, 0);

    for (int t = 0; t <= spec.steps; ++t) {
      Tensor xp(batch.images.shape());
      for (size_t j = 0; j < n * d; ++j) xp[j] = static_cast<float>((std::tanh(w[j]) + 1.0) / 2.0);
      Tape tape;
      const Var leaf = tape.leaf(xp);
      const Var z = model.logits(leaf);
      const Tensor& zv = z.value();

      Tensor seed({n, k});
      for (size_t i = 0; i < n; ++i) {
        std::span<const float> zi(zv.data().data() + i * k, k);
        const int pred = static_cast<int>(std::max_element(zi.begin(), zi.end()) - zi.begin());
        if (is_adversarial(pred, batch.labels[i], targets, i)) {
          found[i] = 1;
          double l2 = 0.0;
          for (size_t j = i * d; j < (i + 1) * d; ++j) {
            const double diff = static_cast<double>(xp[j]) - x[j];
            l2 += diff * diff;
          }
          l2 = std::sqrt(l2);
          if (l2 < best_l2[i]) {
            best_l2[i] = l2;
            std::copy_n(xp.data().begin() + static_cast<std::ptrdiff_t>(i * d), d,
                        best.data().begin() + static_cast<std::ptrdiff_t>(i * d));
          }
        }
        // Margin term: push the reference logit below the strongest rival
        // (untargeted) or the target above every other class.
        const int ref = targets ? (*targets)[i] : batch.labels[i];
        const int rival = best_other(zi, ref);
        const double margin = targets ? zi[static_cast<size_t>(rival)] - zi[static_cast<size_t>(ref)]
                                      : zi[static_cast<size_t>(ref)] - zi[static_cast<size_t>(rival)];
        if (margin > -spec.kappa) {
          const auto sgn = static_cast<float>(targets ? -c[i] : c[i]);
          seed[i * k + static_cast<size_t>(ref)] = sgn;
          seed[i * k + static_cast<size_t>(rival)] = -sgn;
        }
      }
      if (t == spec.steps) {
        last = std::move(xp);
        break;
      }

      GradMap g = tape.backward(z, seed);
      const Tensor gz = g.contains(leaf) ? g.take(leaf) : Tensor(xp.shape());
      const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      const double corr1 = 1.0 - std::pow(b1, t + 1), corr2 = 1.0 - std::pow(b2, t + 1);
      for (size_t j = 0; j < n * d; ++j) {
        const double th = std::tanh(w[j]);
        const double grad = (2.0 * (static_cast<double>(xp[j]) - x[j]) + gz[j]) * (1.0 - th * th) / 2.0;
        m[j] = b1 * m[j] + (1.0 - b1) * grad;
        v[j] = b2 * v[j] + (1.0 - b2) * grad * grad;
        w[j] -= spec.lr * (m[j] / corr1) / (std::sqrt(v[j] / corr2) + eps);
      }
    }

    for (size_t i = 0; i < n; ++i) {
      if (found[i]) {
        upper[i] = std::min(upper[i], c[i]);
        c[i] = (lower[i] + upper[i]) / 2.0;
      } else {
        lower[i] = std::max(lower[i], c[i]);
        c[i] = upper[i] == kNoUpper ? (c[i] > 0.0 ? c[i] * 2.0 : 1.0) : (lower[i] + upper[i]) / 2.0;
      }
    }
  }

  Tensor adv = best;
  for (size_t i = 0; i < n; ++i)
    if (best_l2[i] == kNoUpper)
      std::copy_n(last.data().begin() + static_cast<std::ptrdiff_t>(i * d), d,
                  adv.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  return finish(model, batch, std::move(adv), targets,
                std::vector<int>(n, spec.binary_search_steps * spec.steps), std::vector<int>(n, 0));
}

AttackOutcome boundary_attack(const LabelOracle& model, const ImageBatch& batch,
                              const AttackSpec& spec, const AttackContext& ctx) {
  if (spec.targeted) throw ConfigError("attack.targeted is not supported by boundary");
  const size_t n = batch.size(), d = per_sample(batch.images);
  Shape one = batch.images.shape();
  one[0] = 1;
  Tensor adv = batch.images;
  std::vector<int> queries(n, 0), iterations(n, 0);
  const auto clean = model.predict_labels(batch.images);

  for (size_t i = 0; i < n; ++i) {
    if (clean[i] != batch.labels[i]) continue;
    Rng rng(ctx.seed, ctx.index_offset + i, "boundary");
    int& used = queries[i];
    auto query = [&](const std::vector<double>& img) {
      Tensor t(one);
      for (size_t j = 0; j < d; ++j) t[j] = static_cast<float>(img[j]);
      ++used;
      return model.predict_labels(t)[0] != batch.labels[i];
    };
    const std::vector<double> x(batch.images.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                                batch.images.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));

    std::vector<double> current(d);
    bool started = false;
    for (int tries = 0; tries < 100 && used < spec.max_queries && !started; ++tries) {
      for (double& p : current) p = rng.uniform();
      started = query(current);
    }
    if (!started) continue;

    double spherical = spec.spherical_step, source = spec.source_step;
    int window_accepted = 0, window_size = 0;
    std::vector<double> cand(d);
    while (used < spec.max_queries) {
      double dist = 0.0;
      for (size_t j = 0; j < d; ++j) dist += (x[j] - current[j]) * (x[j] - current[j]);
      dist = std::sqrt(dist);
      if (dist == 0.0) break;

      // Random step orthogonal to the source direction, then back onto the
      // sphere of radius dist around x.
      std::vector<double> eta(d);
      double dot = 0.0;
      for (size_t j = 0; j < d; ++j) {
        eta[j] = rng.normal();
        dot += eta[j] * (x[j] - current[j]);
      }
      double eta_norm = 0.0;
      for (size_t j = 0; j < d; ++j) {
        eta[j] -= dot / (dist * dist) * (x[j] - current[j]);
        eta_norm += eta[j] * eta[j];
      }
      eta_norm = std::sqrt(eta_norm);
      for (size_t j = 0; j < d; ++j)
        cand[j] = current[j] + (eta_norm > 1e-12 * dist ? spherical * dist * eta[j] / eta_norm : 0.0);
      double cand_dist = 0.0;
      for (size_t j = 0; j < d; ++j) cand_dist += (x[j] - cand[j]) * (x[j] - cand[j]);
      cand_dist = std::sqrt(cand_dist);
      for (size_t j = 0; j < d; ++j) {
        cand[j] = x[j] - (x[j] - cand[j]) * (dist / cand_dist);
        cand[j] += source * (x[j] - cand[j]);
        cand[j] = std::min(1.0, std::max(0.0, cand[j]));
      }

      ++iterations[i];
      const bool accepted = query(cand);
      if (accepted) current = cand;
      window_accepted += accepted;
      if (++window_size == 10) {
        const double factor = window_accepted > 5 ? 1.1 : 0.9;
        spherical = std::min(0.5, spherical * factor);
        source = std::min(0.5, source * factor);
        window_accepted = window_size = 0;
      }
    }
    for (size_t j = 0; j < d; ++j) adv[i * d + j] = static_cast<float>(current[j]);
  }
  return finish(model, batch, std::move(adv), nullptr, std::move(iterations), std::move(queries));
}

AttackOutcome run_attack(const DifferentiableClassifier& model, const ImageBatch& batch,
                         const AttackSpec& spec, const AttackContext& ctx,
                         const std::vector<int>* manual_targets) {
  spec.validate();
  validate_batch(batch, model.num_classes());
  std::optional<std::vector<int>> targets;
  if (spec.targeted) {
    if (spec.target_strategy == TargetStrategy::kManual) {
      if (!manual_targets) throw ConfigError("attack.targets must be given for target strategy manual");
      if (manual_targets->size() != batch.size())
        throw ConfigError("attack.targets has " + std::to_string(manual_targets->size()) +
                          " entries for " + std::to_string(batch.size()) + " samples");
      for (size_t i = 0; i < batch.size(); ++i) {
        const int t = (*manual_targets)[i];
        if (t < 0 || static_cast<size_t>(t) >= model.num_classes())
          throw ConfigError("attack.targets[" + std::to_string(i) + "] out of range");
        if (t == batch.labels[i])
          throw ConfigError("attack.targets[" + std::to_string(i) + "] equals the true label");
      }
      targets = *manual_targets;
    } else {
      targets = generate_targets(batch.labels, model.num_classes(), spec.target_strategy, ctx, &model,
                                 &batch.images);
    }
  }
  const std::vector<int>* t = targets ? &*targets : nullptr;
  switch (spec.kind) {
    case AttackKind::kFgsm: return fgsm(model, batch, spec, t);
    case AttackKind::kBim: return bim(model, batch, spec, t);
    case AttackKind::kPgd: return pgd(model, batch, spec, ctx, t);
    case AttackKind::kDeepFool: return deepfool(model, batch, spec);
    case AttackKind::kCwL2: return cw_l2(model, batch, spec, t);
    case AttackKind::kBoundary: return boundary_attack(model, batch, spec, ctx);
  }
  throw ConfigError("unknown attack kind");
}

}  // namespace advsec
