#include "advsec/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>

#include "advsec/errors.hpp"

namespace advsec {

const char* to_string(Primitive kind) {
  switch (kind) {
    case Primitive::kLeaf: return "leaf";
    case Primitive::kAdd: return "add";
    case Primitive::kSub: return "sub";
    case Primitive::kMul: return "mul";
    case Primitive::kScale: return "scale";
    case Primitive::kMatmul: return "matmul";
    case Primitive::kConv2d: return "conv2d";
    case Primitive::kMaxPool2x2: return "maxpool2x2";
    case Primitive::kRelu: return "relu";
    case Primitive::kTanh: return "tanh";
    case Primitive::kSigmoid: return "sigmoid";
    case Primitive::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Primitive::kSum: return "sum";
    case Primitive::kMean: return "mean";
    case Primitive::kClamp: return "clamp";
    case Primitive::kSign: return "sign";
    case Primitive::kReshape: return "reshape";
    case Primitive::kSlice: return "slice";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_fail(Primitive kind, const std::string& detail) {
  throw ShapeError(std::string(to_string(kind)) + ": " + detail);
}

bool is_suffix(const Shape& b, const Shape& a) {
  if (b.size() > a.size()) return false;
  return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

// C(m,n) += A(m,k) * B(k,n). Each row of C depends only on the same row of A.
void gemm_acc(size_t m, size_t k, size_t n, const float* a, const float* b, float* c) {
  for (size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    const float* arow = a + i * k;
    for (size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void transpose(size_t rows, size_t cols, const float* src, float* dst) {
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

struct ConvGeom {
  size_t n, c, h, w, o, kh, kw, ho, wo;
  int stride, pad;
  size_t patch() const { return c * kh * kw; }
  size_t positions() const { return ho * wo; }
};

ConvGeom conv_geometry(const Shape& x, const Shape& k, int stride, int pad) {
  if (x.size() != 4 || k.size() != 4) {
    shape_fail(Primitive::kConv2d, "expects NCHW input and OIHW kernel, got " + to_string(x) +
                                       " and " + to_string(k));
  }
  if (x[1] != k[1]) {
    shape_fail(Primitive::kConv2d, "channel mismatch between input " + to_string(x) +
                                       " and kernel " + to_string(k));
  }
  if (stride < 1 || pad < 0) shape_fail(Primitive::kConv2d, "stride must be >= 1 and pad >= 0");
  const auto ph = static_cast<long>(x[2]) + 2L * pad - static_cast<long>(k[2]);
  const auto pw = static_cast<long>(x[3]) + 2L * pad - static_cast<long>(k[3]);
  if (ph < 0 || pw < 0) {
    shape_fail(Primitive::kConv2d, "kernel " + to_string(k) + " larger than padded input " +
                                       to_string(x));
  }
  ConvGeom g{x[0], x[1], x[2], x[3], k[0], k[2], k[3], 0, 0, stride, pad};
  g.ho = static_cast<size_t>(ph / stride) + 1;
  g.wo = static_cast<size_t>(pw / stride) + 1;
  return g;
}

// col(patch, positions) for one image.
void im2col(const ConvGeom& g, const float* img, float* col) {
  const size_t pos = g.positions();
  for (size_t c = 0; c < g.c; ++c)
    for (size_t ky = 0; ky < g.kh; ++ky)
      for (size_t kx = 0; kx < g.kw; ++kx) {
        float* row = col + ((c * g.kh + ky) * g.kw + kx) * pos;
        for (size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          for (size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) &&
                                ix < static_cast<long>(g.w);
            row[oy * g.wo + ox] =
                inside ? img[(c * g.h + static_cast<size_t>(iy)) * g.w + static_cast<size_t>(ix)]
                       : 0.0f;
          }
        }
      }
}

void col2im(const ConvGeom& g, const float* col, float* img) {
  const size_t pos = g.positions();
  for (size_t c = 0; c < g.c; ++c)
    for (size_t ky = 0; ky < g.kh; ++ky)
      for (size_t kx = 0; kx < g.kw; ++kx) {
        const float* row = col + ((c * g.kh + ky) * g.kw + kx) * pos;
        for (size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(c * g.h + static_cast<size_t>(iy)) * g.w + static_cast<size_t>(ix)] +=
                row[oy * g.wo + ox];
          }
        }
      }
}

struct Forward {
  Tensor out;
  std::vector<uint32_t> argmax;
  Tensor probs;
};

Forward forward_elementwise_binary(Primitive kind, const Tensor& a, const Tensor& b) {
  if (!is_suffix(b.shape(), a.shape())) {
    shape_fail(kind, "shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " are not broadcast-compatible");
  }
  Tensor out(a.shape());
  const size_t nb = b.numel();
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  for (size_t i = 0; i < a.numel(); ++i) {
    const float bv = pb[i % nb];
    switch (kind) {
      case Primitive::kAdd: po[i] = pa[i] + bv; break;
      case Primitive::kSub: po[i] = pa[i] - bv; break;
      default: po[i] = pa[i] * bv; break;
    }
  }
  return {std::move(out), {}, {}};
}

Forward forward_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_fail(Primitive::kMatmul, "cannot multiply " + to_string(a.shape()) + " by " +
                                       to_string(b.shape()));
  }
  const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  gemm_acc(m, k, n, a.data().data(), b.data().data(), out.data().data());
  return {std::move(out), {}, {}};
}

Forward forward_conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const Attrs& at) {
  const ConvGeom g = conv_geometry(x.shape(), w.shape(), at.stride, at.pad);
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.o)) {
    shape_fail(Primitive::kConv2d, "bias " + to_string(bias->shape()) + " does not match " +
                                       std::to_string(g.o) + " output channels");
  }
  Tensor out({g.n, g.o, g.ho, g.wo});
  std::vector<float> col(g.patch() * g.positions());
  const size_t in_stride = g.c * g.h * g.w;
  const size_t out_stride = g.o * g.positions();
  for (size_t s = 0; s < g.n; ++s) {
    im2col(g, x.data().data() + s * in_stride, col.data());
    float* dst = out.data().data() + s * out_stride;
    if (bias) {
      for (size_t o = 0; o < g.o; ++o)
        std::fill(dst + o * g.positions(), dst + (o + 1) * g.positions(), (*bias)[o]);
    }
    gemm_acc(g.o, g.patch(), g.positions(), w.data().data(), col.data(), dst);
  }
  return {std::move(out), {}, {}};
}

Forward forward_maxpool(const Tensor& x) {
  if (x.rank() != 4 || x.dim(2) < 2 || x.dim(3) < 2) {
    shape_fail(Primitive::kMaxPool2x2, "expects NCHW input with H,W >= 2, got " +
                                           to_string(x.shape()));
  }
  const size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const size_t ho = h / 2, wo = w / 2;
  Tensor out({n, c, ho, wo});
  std::vector<uint32_t> argmax(out.numel());
  size_t o = 0;
  for (size_t plane = 0; plane < n * c; ++plane) {
    const size_t base = plane * h * w;
    for (size_t oy = 0; oy < ho; ++oy)
      for (size_t ox = 0; ox < wo; ++ox, ++o) {
        size_t best = base + (2 * oy) * w + 2 * ox;
        for (size_t dy = 0; dy < 2; ++dy)
          for (size_t dx = 0; dx < 2; ++dx) {
            const size_t idx = base + (2 * oy + dy) * w + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;  // strict: first index wins ties
          }
        out[o] = x[best];
        argmax[o] = static_cast<uint32_t>(best);
      }
  }
  return {std::move(out), std::move(argmax), {}};
}

Forward forward_softmax_ce(const Tensor& z, const std::vector<int>& labels) {
  if (z.rank() != 2) {
    shape_fail(Primitive::kSoftmaxCrossEntropy, "expects (N,K) logits, got " +
                                                    to_string(z.shape()));
  }
  const size_t n = z.dim(0), k = z.dim(1);
  if (labels.size() != n) {
    shape_fail(Primitive::kSoftmaxCrossEntropy,
               std::to_string(labels.size()) + " labels for logits " + to_string(z.shape()));
  }
  Tensor out({n});
  Tensor probs({n, k});
  for (size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<size_t>(y) >= k) {
      shape_fail(Primitive::kSoftmaxCrossEntropy,
                 "label " + std::to_string(y) + " out of range for " + std::to_string(k) +
                     " classes");
    }
    const float* row = z.data().data() + i * k;
    float mx = row[0];
    for (size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (size_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(row[j] - mx));
    const double log_total = std::log(total);
    for (size_t j = 0; j < k; ++j) {
      probs[i * k + j] =
          static_cast<float>(std::exp(static_cast<double>(row[j] - mx) - log_total));
    }
    out[i] = static_cast<float>(log_total - static_cast<double>(row[y] - mx));
  }
  return {std::move(out), {}, std::move(probs)};
}

Forward forward_unary(Primitive kind, const Tensor& a, const Attrs& at) {
  Tensor out(a.shape());
  for (size_t i = 0; i < a.numel(); ++i) {
    const float v = a[i];
    switch (kind) {
      case Primitive::kScale: out[i] = v * at.scale; break;
      case Primitive::kRelu: out[i] = v > 0.0f ? v : 0.0f; break;
      case Primitive::kTanh: out[i] = std::tanh(v); break;
      case Primitive::kSigmoid: out[i] = 1.0f / (1.0f + std::exp(-v)); break;
      case Primitive::kClamp: out[i] = std::clamp(v, at.lo, at.hi); break;
      case Primitive::kSign: out[i] = v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); break;
      default: break;
    }
  }
  return {std::move(out), {}, {}};
}

Forward forward(Primitive kind, std::span<const Tensor* const> in, const Attrs& at) {
  const auto arity = [&](size_t lo, size_t hi) {
    if (in.size() < lo || in.size() > hi) {
      shape_fail(kind, "expects " + std::to_string(lo) + (lo == hi ? "" : "-" + std::to_string(hi)) +
                           " inputs, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case Primitive::kAdd:
    case Primitive::kSub:
    case Primitive::kMul:
      arity(2, 2);
      return forward_elementwise_binary(kind, *in[0], *in[1]);
    case Primitive::kMatmul:
      arity(2, 2);
      return forward_matmul(*in[0], *in[1]);
    case Primitive::kConv2d:
      arity(2, 3);
      return forward_conv2d(*in[0], *in[1], in.size() == 3 ? in[2] : nullptr, at);
    case Primitive::kMaxPool2x2:
      arity(1, 1);
      return forward_maxpool(*in[0]);
    case Primitive::kSoftmaxCrossEntropy:
      arity(1, 1);
      return forward_softmax_ce(*in[0], at.labels);
    case Primitive::kSum:
    case Primitive::kMean: {
      arity(1, 1);
      double total = 0.0;
      for (float v : in[0]->data()) total += v;
      if (kind == Primitive::kMean) total /= static_cast<double>(in[0]->numel());
      return {Tensor::scalar(static_cast<float>(total)), {}, {}};
    }
    case Primitive::kClamp:
      if (!(at.lo <= at.hi)) shape_fail(kind, "lo must not exceed hi");
      [[fallthrough]];
    case Primitive::kScale:
    case Primitive::kRelu:
    case Primitive::kTanh:
    case Primitive::kSigmoid:
    case Primitive::kSign:
      arity(1, 1);
      return forward_unary(kind, *in[0], at);
    case Primitive::kReshape:
      arity(1, 1);
      if (numel(at.shape) != in[0]->numel()) {
        shape_fail(kind, "cannot reshape " + to_string(in[0]->shape()) + " to " +
                             to_string(at.shape));
      }
      return {in[0]->reshaped(at.shape), {}, {}};
    case Primitive::kSlice: {
      arity(1, 1);
      const Tensor& a = *in[0];
      if (a.rank() < 1 || at.start >= at.end || at.end > a.dim(0)) {
        shape_fail(kind, "rows [" + std::to_string(at.start) + "," + std::to_string(at.end) +
                             ") out of range for " + to_string(a.shape()));
      }
      Shape s = a.shape();
      s[0] = at.end - at.start;
      const size_t row = a.numel() / a.dim(0);
      std::vector<float> data(a.data().begin() + static_cast<std::ptrdiff_t>(at.start * row),
                              a.data().begin() + static_cast<std::ptrdiff_t>(at.end * row));
      return {Tensor(std::move(s), std::move(data)), {}, {}};
    }
    case Primitive::kLeaf:
      break;
  }
  shape_fail(kind, "not an applicable primitive");
}

// Sum of `g` over the leading axes that `target` lacks.
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor out(target);
  const size_t nb = out.numel();
  for (size_t i = 0; i < g.numel(); ++i) out[i % nb] += g[i];
  return out;
}

using InputGrads = std::vector<std::optional<Tensor>>;

}  // namespace

// ---------------------------------------------------------------------------

Var constant(Tensor value) { return constant(std::make_shared<const Tensor>(std::move(value))); }

Var constant(std::shared_ptr<const Tensor> value) {
  Var v;
  v.value_ = std::move(value);
  return v;
}

const Tensor& GradMap::at(const Var& v) const {
  auto it = grads_.find(v.id());
  if (it == grads_.end()) throw Error("no gradient recorded for node " + std::to_string(v.id()));
  return it->second;
}

Tensor GradMap::take(const Var& v) {
  auto it = grads_.find(v.id());
  if (it == grads_.end()) throw Error("no gradient recorded for node " + std::to_string(v.id()));
  Tensor out = std::move(it->second);
  grads_.erase(it);
  return out;
}

int Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) { return leaf(std::make_shared<const Tensor>(std::move(value))); }

Var Tape::leaf(std::shared_ptr<const Tensor> value) {
  Node n;
  n.kind = Primitive::kLeaf;
  n.output = value;
  Var v;
  v.value_ = std::move(value);
  v.tape_ = this;
  v.node_ = push(std::move(n));
  return v;
}

Var apply_primitive(Primitive kind, std::span<const Var> inputs, const Attrs& attrs) {
  std::vector<const Tensor*> values;
  Tape* tape = nullptr;
  for (const Var& v : inputs) {
    if (!v.value_) throw ShapeError(std::string(to_string(kind)) + ": undefined input");
    values.push_back(v.value_.get());
    if (v.requires_grad()) {
      if (tape && tape != v.tape_) {
        throw Error(std::string(to_string(kind)) + ": inputs recorded on different tapes");
      }
      tape = v.tape_;
    }
  }
  Forward fwd = forward(kind, values, attrs);
  if (!fwd.out.all_finite()) {
    throw NumericError(std::string(to_string(kind)) + ": non-finite output of shape " +
                       to_string(fwd.out.shape()));
  }
  auto out = std::make_shared<const Tensor>(std::move(fwd.out));
  Var result;
  result.value_ = out;
  if (!tape) return result;

  Tape::Node node;
  node.kind = kind;
  for (const Var& v : inputs) {
    node.inputs.push_back(v.requires_grad() ? v.node_ : -1);
    node.input_values.push_back(v.value_);
  }
  node.output = out;
  node.attrs = attrs;
  node.argmax = std::move(fwd.argmax);
  node.probs = std::move(fwd.probs);
  result.tape_ = tape;
  result.node_ = tape->push(std::move(node));
  return result;
}

namespace {

InputGrads backward_node(const Primitive kind, const std::vector<int>& ids,
                         const std::vector<std::shared_ptr<const Tensor>>& in, const Tensor& y,
                         const Attrs& at, const std::vector<uint32_t>& argmax,
                         const Tensor& probs, const Tensor& g) {
  InputGrads grads(in.size());
  const auto wants = [&](size_t i) { return ids[i] >= 0; };
  switch (kind) {
    case Primitive::kAdd:
    case Primitive::kSub: {
      if (wants(0)) grads[0] = g;
      if (wants(1)) {
        Tensor gb = reduce_to(g, in[1]->shape());
        if (kind == Primitive::kSub)
          for (float& v : gb.data()) v = -v;
        grads[1] = std::move(gb);
      }
      break;
    }
    case Primitive::kMul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const size_t nb = b.numel();
      if (wants(0)) {
        Tensor ga(a.shape());
        for (size_t i = 0; i < a.numel(); ++i) ga[i] = g[i] * b[i % nb];
        grads[0] = std::move(ga);
      }
      if (wants(1)) {
        Tensor gb(b.shape());
        for (size_t i = 0; i < a.numel(); ++i) gb[i % nb] += g[i] * a[i];
        grads[1] = std::move(gb);
      }
      break;
    }
    case Primitive::kScale: {
      Tensor ga(g.shape());
      for (size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * at.scale;
      grads[0] = std::move(ga);
      break;
    }
    case Primitive::kMatmul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      if (wants(0)) {
        std::vector<float> bt(k * n);
        transpose(k, n, b.data().data(), bt.data());
        Tensor ga({m, k});
        gemm_acc(m, n, k, g.data().data(), bt.data(), ga.data().data());
        grads[0] = std::move(ga);
      }
      if (wants(1)) {
        std::vector<float> aT(m * k);
        transpose(m, k, a.data().data(), aT.data());
        Tensor gb({k, n});
        gemm_acc(k, m, n, aT.data(), g.data().data(), gb.data().data());
        grads[1] = std::move(gb);
      }
      break;
    }
    case Primitive::kConv2d: {
      const Tensor& x = *in[0];
      const Tensor& w = *in[1];
      const ConvGeom geo = conv_geometry(x.shape(), w.shape(), at.stride, at.pad);
      const size_t patch = geo.patch(), pos = geo.positions();
      const size_t in_stride = geo.c * geo.h * geo.w, out_stride = geo.o * pos;
      std::vector<float> col(patch * pos);
      if (wants(0)) {
        std::vector<float> wt(patch * geo.o);
        transpose(geo.o, patch, w.data().data(), wt.data());
        Tensor gx(x.shape());
        for (size_t s = 0; s < geo.n; ++s) {
          std::fill(col.begin(), col.end(), 0.0f);
          gemm_acc(patch, geo.o, pos, wt.data(), g.data().data() + s * out_stride, col.data());
          col2im(geo, col.data(), gx.data().data() + s * in_stride);
        }
        grads[0] = std::move(gx);
      }
      if (wants(1)) {
        std::vector<float> colT(pos * patch);
        Tensor gw(w.shape());
        for (size_t s = 0; s < geo.n; ++s) {
          im2col(geo, x.data().data() + s * in_stride, col.data());
          transpose(patch, pos, col.data(), colT.data());
          gemm_acc(geo.o, pos, patch, g.data().data() + s * out_stride, colT.data(),
                   gw.data().data());
        }
        grads[1] = std::move(gw);
      }
      if (in.size() == 3 && wants(2)) {
        Tensor gb({geo.o});
        for (size_t s = 0; s < geo.n; ++s)
          for (size_t o = 0; o < geo.o; ++o) {
            const float* src = g.data().data() + s * out_stride + o * pos;
            float acc = 0.0f;
            for (size_t p = 0; p < pos; ++p) acc += src[p];
            gb[o] += acc;
          }
        grads[2] = std::move(gb);
      }
      break;
    }
    case Primitive::kMaxPool2x2: {
      Tensor gx(in[0]->shape());
      for (size_t o = 0; o < g.numel(); ++o) gx[argmax[o]] += g[o];
      grads[0] = std::move(gx);
      break;
    }
    case Primitive::kRelu:
    case Primitive::kClamp:
    case Primitive::kTanh:
    case Primitive::kSigmoid: {
      const Tensor& x = *in[0];
      Tensor gx(x.shape());
      for (size_t i = 0; i < x.numel(); ++i) {
        float d = 0.0f;
        switch (kind) {
          case Primitive::kRelu: d = x[i] > 0.0f ? 1.0f : 0.0f; break;
          case Primitive::kClamp: d = (x[i] >= at.lo && x[i] <= at.hi) ? 1.0f : 0.0f; break;
          case Primitive::kTanh: d = 1.0f - y[i] * y[i]; break;
          default: d = y[i] * (1.0f - y[i]); break;
        }
        gx[i] = g[i] * d;
      }
      grads[0] = std::move(gx);
      break;
    }
    case Primitive::kSign:
      grads[0] = Tensor(in[0]->shape());
      break;
    case Primitive::kSoftmaxCrossEntropy: {
      const size_t n = probs.dim(0), k = probs.dim(1);
      Tensor gz({n, k});
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < k; ++j) {
          const float onehot = static_cast<int>(j) == at.labels[i] ? 1.0f : 0.0f;
          gz[i * k + j] = g[i] * (probs[i * k + j] - onehot);
        }
      grads[0] = std::move(gz);
      break;
    }
    case Primitive::kSum:
    case Primitive::kMean: {
      const float scale =
          kind == Primitive::kMean ? 1.0f / static_cast<float>(in[0]->numel()) : 1.0f;
      grads[0] = Tensor(in[0]->shape(), g[0] * scale);
      break;
    }
    case Primitive::kReshape:
      grads[0] = g.reshaped(in[0]->shape());
      break;
    case Primitive::kSlice: {
      Tensor gx(in[0]->shape());
      const size_t row = gx.numel() / gx.dim(0);
      std::copy(g.data().begin(), g.data().end(),
                gx.data().begin() + static_cast<std::ptrdiff_t>(at.start * row));
      grads[0] = std::move(gx);
      break;
    }
    case Primitive::kLeaf:
      break;
  }
  return grads;
}

void accumulate(std::optional<Tensor>& slot, Tensor&& g) {
  if (!slot) {
    slot = std::move(g);
    return;
  }
  for (size_t i = 0; i < g.numel(); ++i) (*slot)[i] += g[i];
}

}  // namespace

GradMap Tape::backward(const Var& loss) const {
  if (loss.value().numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  return backward(loss, Tensor(loss.shape(), 1.0f));
}

GradMap Tape::backward(const Var& output, const Tensor& seed) const {
  if (output.tape() != this || !output.requires_grad()) {
    throw Error("backward: output is not recorded on this tape");
  }
  if (seed.shape() != output.shape()) {
    throw ShapeError("backward: seed shape " + to_string(seed.shape()) +
                     " does not match output " + to_string(output.shape()));
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[static_cast<size_t>(output.id())] = seed;
  GradMap result;
  for (int id = output.id(); id >= 0; --id) {
    auto& slot = grads[static_cast<size_t>(id)];
    if (!slot) continue;
    const Node& node = nodes_[static_cast<size_t>(id)];
    if (node.kind == Primitive::kLeaf) {
      result.grads_.emplace(id, std::move(*slot));
      slot.reset();
      continue;
    }
    InputGrads in_grads = backward_node(node.kind, node.inputs, node.input_values, *node.output,
                                        node.attrs, node.argmax, node.probs, *slot);
    slot.reset();
    for (size_t i = 0; i < node.inputs.size(); ++i) {
      if (node.inputs[i] >= 0 && in_grads[i]) {
        accumulate(grads[static_cast<size_t>(node.inputs[i])], std::move(*in_grads[i]));
      }
    }
  }
  return result;
}

uint64_t Tape::piecewise_signature() const {
  uint64_t h = 0xCBF29CE484222325ULL;
  const auto mix = [&h](uint64_t v) {
    h ^= v;
    h *= 0x100000001B3ULL;
  };
  for (const Node& n : nodes_) {
    switch (n.kind) {
      case Primitive::kRelu:
        for (float v : n.input_values[0]->data()) mix(v > 0.0f);
        break;
      case Primitive::kClamp:
        for (float v : n.input_values[0]->data()) mix((v >= n.attrs.lo) + 2 * (v <= n.attrs.hi));
        break;
      case Primitive::kMaxPool2x2:
        for (uint32_t a : n.argmax) mix(a);
        break;
      default:
        break;
    }
  }
  return h;
}

// ---------------------------------------------------------------------------

namespace ops {

namespace {
Var apply1(Primitive k, const Var& a, const Attrs& at = {}) {
  const Var in[] = {a};
  return apply_primitive(k, in, at);
}
Var apply2(Primitive k, const Var& a, const Var& b) {
  const Var in[] = {a, b};
  return apply_primitive(k, in);
}
}  // namespace

Var add(const Var& a, const Var& b) { return apply2(Primitive::kAdd, a, b); }
Var sub(const Var& a, const Var& b) { return apply2(Primitive::kSub, a, b); }
Var mul(const Var& a, const Var& b) { return apply2(Primitive::kMul, a, b); }
Var matmul(const Var& a, const Var& b) { return apply2(Primitive::kMatmul, a, b); }

Var scale(const Var& a, float factor) {
  Attrs at;
  at.scale = factor;
  return apply1(Primitive::kScale, a, at);
}

Var conv2d(const Var& input, const Var& kernel, const Var& bias, int stride, int pad) {
  Attrs at;
  at.stride = stride;
  at.pad = pad;
  if (!bias.defined()) {
    const Var in[] = {input, kernel};
    return apply_primitive(Primitive::kConv2d, in, at);
  }
  const Var in[] = {input, kernel, bias};
  return apply_primitive(Primitive::kConv2d, in, at);
}

Var maxpool2x2(const Var& input) { return apply1(Primitive::kMaxPool2x2, input); }
Var relu(const Var& a) { return apply1(Primitive::kRelu, a); }
Var tanh(const Var& a) { return apply1(Primitive::kTanh, a); }
Var sigmoid(const Var& a) { return apply1(Primitive::kSigmoid, a); }

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  Attrs at;
  at.labels.assign(labels.begin(), labels.end());
  return apply1(Primitive::kSoftmaxCrossEntropy, logits, at);
}

Var sum(const Var& a) { return apply1(Primitive::kSum, a); }
Var mean(const Var& a) { return apply1(Primitive::kMean, a); }

Var clamp(const Var& a, float lo, float hi) {
  Attrs at;
  at.lo = lo;
  at.hi = hi;
  return apply1(Primitive::kClamp, a, at);
}

Var sign(const Var& a) { return apply1(Primitive::kSign, a); }

Var reshape(const Var& a, Shape shape) {
  Attrs at;
  at.shape = std::move(shape);
  return apply1(Primitive::kReshape, a, at);
}

Var slice(const Var& a, size_t start, size_t end) {
  Attrs at;
  at.start = start;
  at.end = end;
  return apply1(Primitive::kSlice, a, at);
}

}  // namespace ops

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const ScalarFunction& fn, const Tensor& point, double step,
                           double tolerance) {
  GradCheckReport report;
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");

  Tensor analytic;
  {
    Tape tape;
    Var x = tape.leaf(point);
    Var loss = fn(tape, x);
    GradMap grads = tape.backward(loss);
    analytic = grads.contains(x) ? grads.take(x) : Tensor(point.shape());
  }

  const auto probe = [&](const Tensor& at, uint64_t& signature) {
    Tape tape;
    Var x = tape.leaf(at);
    const double value = fn(tape, x).value().item();
    signature = tape.piecewise_signature();
    return value;
  };

  std::vector<double> numeric(point.numel(), 0.0);
  std::vector<bool> usable(point.numel(), true);
  Tensor shifted = point;
  for (size_t i = 0; i < point.numel(); ++i) {
    const float orig = point[i];
    const float h = static_cast<float>(step * (std::fabs(orig) + 1.0));
    uint64_t sig_plus = 0, sig_minus = 0;
    shifted[i] = orig + h;
    const double f_plus = probe(shifted, sig_plus);
    const double actual_plus = static_cast<double>(shifted[i]) - orig;
    shifted[i] = orig - h;
    const double f_minus = probe(shifted, sig_minus);
    const double actual_minus = static_cast<double>(orig) - shifted[i];
    shifted[i] = orig;
    if (sig_plus != sig_minus) {
      usable[i] = false;
      ++report.skipped_kinks;
      continue;
    }
    numeric[i] = (f_plus - f_minus) / (actual_plus + actual_minus);
  }

  double scale = 0.0;
  for (size_t i = 0; i < point.numel(); ++i) {
    if (!usable[i]) continue;
    scale = std::max({scale, std::fabs(static_cast<double>(analytic[i])), std::fabs(numeric[i])});
  }
  for (size_t i = 0; i < point.numel(); ++i) {
    if (!usable[i]) continue;
    const double err = std::fabs(static_cast<double>(analytic[i]) - numeric[i]);
    report.max_abs_error = std::max(report.max_abs_error, err);
    ++report.checked;
  }
  report.max_rel_error = scale > 0.0 ? report.max_abs_error / scale : report.max_abs_error;
  report.passed = report.checked > 0 && report.max_rel_error <= tolerance;
  return report;
}

}  // namespace advsec
