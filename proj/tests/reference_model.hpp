#pragma once

// Double-precision re-implementation of mlp_small / cnn_small used as a
// finite-difference oracle. Shares no code with the engine's forward path.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "advsec/model.hpp"

namespace advsec::testing {

struct ReferenceNet {
  ModelSpec spec;
  std::vector<std::vector<double>> params;  // engine parameter order

  explicit ReferenceNet(const Model& m) : spec(m.spec()) {
    for (const Parameter& p : m.parameters()) params.emplace_back(p.value->data().begin(), p.value->data().end());
  }

  // Cross-entropy of one image; `pattern` collects relu/maxpool decisions.
  double loss(const std::vector<double>& image, int label, std::vector<uint32_t>* pattern = nullptr) const {
    const size_t c = spec.input.channels, h = spec.input.height, w = spec.input.width;
    std::vector<double> x(image.size());
    for (size_t ch = 0; ch < c; ++ch)
      for (size_t p = 0; p < h * w; ++p) x[ch * h * w + p] = (image[ch * h * w + p] - spec.mean[ch]) / spec.std[ch];

    std::vector<double> logits;
    if (spec.arch == Arch::kMlpSmall) {
      const auto hidden = dense(x, params[0], params[1], pattern, true);
      logits = dense(hidden, params[2], params[3], nullptr, false);
    } else {
      auto a = conv3x3(x, c, h, w, params[0], params[1], pattern);
      a = pool(a, 16, h, w, pattern);
      auto b = conv3x3(a, 16, h / 2, w / 2, params[2], params[3], pattern);
      b = pool(b, 32, h / 2, w / 2, pattern);
      logits = dense(b, params[4], params[5], nullptr, false);
    }
    double mx = logits[0];
    for (double z : logits) mx = std::max(mx, z);
    double total = 0.0;
    for (double z : logits) total += std::exp(z - mx);
    return std::log(total) + mx - logits[static_cast<size_t>(label)];
  }

 private:
  static std::vector<double> dense(const std::vector<double>& in, const std::vector<double>& weight,
                                   const std::vector<double>& bias, std::vector<uint32_t>* pattern,
                                   bool relu) {
    const size_t out_dim = bias.size();
    std::vector<double> out(bias);
    for (size_t o = 0; o < out_dim; ++o) {
      for (size_t i = 0; i < in.size(); ++i) out[o] += in[i] * weight[i * out_dim + o];
      if (relu) {
        if (pattern) pattern->push_back(out[o] > 0.0);
        out[o] = std::max(out[o], 0.0);
      }
    }
    return out;
  }

  static std::vector<double> conv3x3(const std::vector<double>& in, size_t cin, size_t h, size_t w,
                                     const std::vector<double>& kernel, const std::vector<double>& bias,
                                     std::vector<uint32_t>* pattern) {
    const size_t cout = bias.size();
    std::vector<double> out(cout * h * w);
    for (size_t o = 0; o < cout; ++o)
      for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x) {
          double acc = bias[o];
          for (size_t ci = 0; ci < cin; ++ci)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                acc += in[(ci * h + static_cast<size_t>(yy)) * w + static_cast<size_t>(xx)] *
                       kernel[((o * cin + ci) * 3 + static_cast<size_t>(dy + 1)) * 3 + static_cast<size_t>(dx + 1)];
              }
          if (pattern) pattern->push_back(acc > 0.0);
          out[(o * h + y) * w + x] = std::max(acc, 0.0);
        }
    return out;
  }

  static std::vector<double> pool(const std::vector<double>& in, size_t ch, size_t h, size_t w,
                                  std::vector<uint32_t>* pattern) {
    const size_t ho = h / 2, wo = w / 2;
    std::vector<double> out(ch * ho * wo);
    for (size_t c = 0; c < ch; ++c)
      for (size_t y = 0; y < ho; ++y)
        for (size_t x = 0; x < wo; ++x) {
          uint32_t best = 0;
          double v = in[(c * h + 2 * y) * w + 2 * x];
          for (uint32_t k = 1; k < 4; ++k) {
            const double cand = in[(c * h + 2 * y + k / 2) * w + 2 * x + k % 2];
            if (cand > v) {
              v = cand;
              best = k;
            }
          }
          if (pattern) pattern->push_back(best);
          out[(c * ho + y) * wo + x] = v;
        }
    return out;
  }
};

}  // namespace advsec::testing
