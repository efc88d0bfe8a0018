#include "advsec/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "advsec/errors.hpp"

namespace advsec {

namespace {

constexpr size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void check_same(const Tensor& x, const Tensor& y, const char* what) {
  if (x.shape() != y.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(x.shape()) + " vs " +
                     to_string(y.shape()));
  if (x.rank() != 4) throw ShapeError(std::string(what) + ": expected (N,C,H,W), got " + to_string(x.shape()));
}

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> taps{};
  double total = 0.0;
  for (size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - (kWindow - 1) / 2.0;
    taps[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

// Separable valid-mode Gaussian filter of an h x w plane.
std::vector<double> filter(const std::vector<double>& plane, size_t h, size_t w) {
  static const auto taps = gaussian_taps();
  const size_t ow = w - kWindow + 1, oh = h - kWindow + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (size_t k = 0; k < kWindow; ++k) acc += taps[k] * plane[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  std::vector<double> out(oh * ow, 0.0);
  for (size_t y = 0; y < oh; ++y)
    for (size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (size_t k = 0; k < kWindow; ++k) acc += taps[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace

std::vector<int> predict_all(const LabelOracle& model, const Tensor& images, size_t batch_size) {
  const size_t n = images.dim(0), d = images.numel() / n;
  if (batch_size == 0) batch_size = n;
  std::vector<int> out;
  out.reserve(n);
  for (size_t b = 0; b < n; b += batch_size) {
    const size_t e = std::min(n, b + batch_size);
    Shape shape = images.shape();
    shape[0] = e - b;
    Tensor part(shape, std::vector<float>(images.data().begin() + static_cast<std::ptrdiff_t>(b * d),
                                          images.data().begin() + static_cast<std::ptrdiff_t>(e * d)));
    const auto pred = model.predict_labels(part);
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

double accuracy(const LabelOracle& model, const ImageBatch& batch) {
  if (batch.size() == 0) throw ShapeError("accuracy of an empty batch");
  const auto pred = predict_all(model, batch.images);
  size_t ok = 0;
  for (size_t i = 0; i < batch.size(); ++i) ok += pred[i] == batch.labels[i];
  return static_cast<double>(ok) / static_cast<double>(batch.size());
}

double accuracy(const LabelOracle& model, const Dataset& ds, size_t batch_size) {
  if (ds.size() == 0) throw ShapeError("accuracy of an empty dataset");
  size_t ok = 0;
  for (size_t b = 0; b < ds.size(); b += batch_size) {
    const ImageBatch part = ds.range(b, std::min(ds.size(), b + batch_size));
    const auto pred = model.predict_labels(part.images);
    for (size_t i = 0; i < part.size(); ++i) ok += pred[i] == part.labels[i];
  }
  return static_cast<double>(ok) / static_cast<double>(ds.size());
}

RobustnessResult summarize_attack(const ImageBatch& batch, const std::vector<int>& clean_pred,
                                  const AttackOutcome& outcome) {
  const size_t n = batch.size();
  if (n == 0) throw ShapeError("robustness of an empty batch");
  if (clean_pred.size() != n || outcome.size() != n)
    throw ShapeError("attack outcome does not match the batch");
  RobustnessResult r;
  size_t clean_ok = 0, adv_ok = 0;
  for (size_t i = 0; i < n; ++i) {
    const bool correct = clean_pred[i] == batch.labels[i];
    clean_ok += correct;
    adv_ok += outcome.adversarial_pred[i] == batch.labels[i];
    if (outcome.targets) {
      ++r.eligible;
      r.successes += outcome.success[i] != 0;
    } else if (correct) {
      ++r.eligible;
      r.successes += outcome.success[i] != 0;
    }
  }
  r.clean_accuracy = static_cast<double>(clean_ok) / static_cast<double>(n);
  r.adversarial_accuracy = static_cast<double>(adv_ok) / static_cast<double>(n);
  r.attack_success_rate = r.eligible ? static_cast<double>(r.successes) / static_cast<double>(r.eligible)
                                     : std::numeric_limits<double>::quiet_NaN();
  return r;
}

RobustnessResult robustness(const DifferentiableClassifier& model, const ImageBatch& batch,
                            const AttackSpec& spec, const AttackContext& ctx,
                            const std::vector<int>* manual_targets) {
  const AttackOutcome outcome = run_attack(model, batch, spec, ctx, manual_targets);
  return summarize_attack(batch, model.predict_labels(batch.images), outcome);
}

TransferResult transferability(const AttackOutcome& source, const ImageBatch& original,
                               const LabelOracle& target) {
  if (source.size() != original.size() || source.adversarial.size() != original.size())
    throw ShapeError("transferability: outcome has " + std::to_string(source.size()) +
                     " samples, batch has " + std::to_string(original.size()));
  TransferResult r;
  const auto pred = predict_all(target, source.adversarial.images);
  for (size_t i = 0; i < original.size(); ++i) {
    if (!source.success[i]) continue;
    ++r.source_successes;
    const bool fooled = source.targets ? pred[i] == (*source.targets)[i] : pred[i] != original.labels[i];
    r.transferred += fooled;
  }
  if (r.source_successes)
    r.rate = static_cast<double>(r.transferred) / static_cast<double>(r.source_successes);
  return r;
}

std::vector<double> psnr(const Tensor& x, const Tensor& y) {
  check_same(x, y, "psnr");
  const size_t n = x.dim(0), d = x.numel() / n;
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (size_t j = i * d; j < (i + 1) * d; ++j) {
      const double diff = static_cast<double>(x[j]) - y[j];
      sq += diff * diff;
    }
    const double mse = sq / static_cast<double>(d);
    out[i] = mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
  }
  return out;
}

std::vector<double> ssim(const Tensor& x, const Tensor& y) {
  check_same(x, y, "ssim");
  const size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < kWindow || w < kWindow)
    throw ShapeError("ssim needs images of at least 11x11, got " + std::to_string(h) + "x" + std::to_string(w));
  std::vector<double> out(n);
  const size_t plane = h * w;
  for (size_t i = 0; i < n; ++i) {
    double total = 0.0;
    size_t count = 0;
    for (size_t ch = 0; ch < c; ++ch) {
      const size_t base = (i * c + ch) * plane;
      std::vector<double> a(plane), b(plane), aa(plane), bb(plane), ab(plane);
      for (size_t p = 0; p < plane; ++p) {
        a[p] = x[base + p];
        b[p] = y[base + p];
        aa[p] = a[p] * a[p];
        bb[p] = b[p] * b[p];
        ab[p] = a[p] * b[p];
      }
      const auto mu_a = filter(a, h, w), mu_b = filter(b, h, w);
      const auto e_aa = filter(aa, h, w), e_bb = filter(bb, h, w), e_ab = filter(ab, h, w);
      for (size_t p = 0; p < mu_a.size(); ++p) {
        const double va = e_aa[p] - mu_a[p] * mu_a[p];
        const double vb = e_bb[p] - mu_b[p] * mu_b[p];
        const double cov = e_ab[p] - mu_a[p] * mu_b[p];
        total += ((2 * mu_a[p] * mu_b[p] + kC1) * (2 * cov + kC2)) /
                 ((mu_a[p] * mu_a[p] + mu_b[p] * mu_b[p] + kC1) * (va + vb + kC2));
        ++count;
      }
    }
    out[i] = total / static_cast<double>(count);
  }
  return out;
}

PerturbationStats perturbation_stats(const Tensor& x, const Tensor& y) {
  check_same(x, y, "perturbation_stats");
  const size_t n = x.dim(0), d = x.numel() / n;
  PerturbationStats s;
  for (size_t i = 0; i < n; ++i) {
    double sq = 0.0, linf = 0.0;
    for (size_t j = i * d; j < (i + 1) * d; ++j) {
      const double diff = static_cast<double>(y[j]) - x[j];
      sq += diff * diff;
      linf = std::max(linf, std::fabs(diff));
    }
    const double l2 = std::sqrt(sq);
    s.mean_l2 += l2;
    s.mean_linf += linf;
    s.max_l2 = std::max(s.max_l2, l2);
    s.max_linf = std::max(s.max_linf, linf);
  }
  s.mean_l2 /= static_cast<double>(n);
  s.mean_linf /= static_cast<double>(n);
  return s;
}

EvaluationReport build_report(const ImageBatch& batch, const std::vector<int>& clean_pred,
                              const AttackOutcome& outcome, const LabelOracle* transfer_model,
                              size_t index_offset) {
  const RobustnessResult rob = summarize_attack(batch, clean_pred, outcome);
  const Tensor& adv = outcome.adversarial.images;
  const auto p = psnr(batch.images, adv);
  const ImageShape shape = batch.image_shape();
  const bool has_ssim = shape.height >= kWindow && shape.width >= kWindow;
  const auto s = has_ssim ? ssim(batch.images, adv) : std::vector<double>(batch.size(), std::nan(""));
  const PerturbationStats stats = perturbation_stats(batch.images, adv);

  EvaluationReport report;
  auto& m = report.metrics;
  m["clean_accuracy"] = rob.clean_accuracy;
  m["adversarial_accuracy"] = rob.adversarial_accuracy;
  m["attack_success_rate"] = rob.attack_success_rate;
  if (transfer_model) {
    const TransferResult t = transferability(outcome, batch, *transfer_model);
    m["transferability"] = t.rate;
    m["transfer_source_successes"] = static_cast<double>(t.source_successes);
  }
  double psnr_sum = 0.0, ssim_sum = 0.0;
  size_t perturbed = 0;
  for (size_t i = 0; i < batch.size(); ++i) {
    if (std::isfinite(p[i])) {
      psnr_sum += p[i];
      ++perturbed;
    }
    ssim_sum += s[i];
  }
  m["mean_psnr"] = perturbed ? psnr_sum / static_cast<double>(perturbed) : std::numeric_limits<double>::infinity();
  m["mean_ssim"] = ssim_sum / static_cast<double>(batch.size());
  m["mean_l2"] = stats.mean_l2;
  m["max_l2"] = stats.max_l2;
  m["mean_linf"] = stats.mean_linf;
  m["max_linf"] = stats.max_linf;
  m["samples"] = static_cast<double>(batch.size());

  report.per_sample.resize(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    SampleRecord& r = report.per_sample[i];
    r.index = index_offset + i;
    r.true_label = batch.labels[i];
    r.clean_pred = clean_pred[i];
    r.adv_pred = outcome.adversarial_pred[i];
    r.success = outcome.success[i] != 0;
    r.l2 = outcome.l2_norm[i];
    r.linf = outcome.linf_norm[i];
    r.psnr = p[i];
    r.ssim = s[i];
  }
  return report;
}

}  // namespace advsec
