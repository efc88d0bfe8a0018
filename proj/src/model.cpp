#include "advsec/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "advsec/errors.hpp"
#include "advsec/rng.hpp"

namespace advsec {

namespace fs = std::filesystem;

Tensor DifferentiableClassifier::logits(const Tensor& images) const {
  return logits(constant(images)).value();
}

std::vector<int> DifferentiableClassifier::predict_labels(const Tensor& images) const {
  return argmax_rows(logits(images));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax expects (N,K), got " + to_string(logits.shape()));
  const size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (size_t i = 0; i < n; ++i) {
    size_t best = 0;
    for (size_t j = 1; j < k; ++j)
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

Prediction predict(const DifferentiableClassifier& model, const Tensor& images) {
  Tensor z = model.logits(images);
  Prediction p{argmax_rows(z), Tensor(z.shape())};
  const size_t n = z.dim(0), k = z.dim(1);
  for (size_t i = 0; i < n; ++i) {
    const float* row = z.data().data() + i * k;
    float mx = row[0];
    for (size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (size_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(row[j] - mx));
    for (size_t j = 0; j < k; ++j)
      p.probabilities[i * k + j] = static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / total);
  }
  return p;
}

const char* to_string(Arch arch) {
  return arch == Arch::kCnnSmall ? "cnn_small" : "mlp_small";
}

Arch parse_arch(const std::string& name) {
  if (name == "mlp_small") return Arch::kMlpSmall;
  if (name == "cnn_small") return Arch::kCnnSmall;
  throw ConfigError("unsupported architecture '" + name + "' (expected mlp_small or cnn_small)");
}

void ModelSpec::validate() const {
  if (input.numel() == 0) throw ConfigError("model input shape has a zero dimension");
  if (num_classes < 2) throw ConfigError("model needs num_classes >= 2");
  if (mean.size() != input.channels || std.size() != input.channels) {
    throw ConfigError("normalization needs one mean and one std per channel (" +
                      std::to_string(input.channels) + ")");
  }
  for (float s : std) {
    if (!(s > 0.0f)) throw ConfigError("normalization std must be positive");
  }
  if (arch == Arch::kCnnSmall && (input.height < 4 || input.width < 4)) {
    throw ConfigError("cnn_small needs H,W >= 4, got " + to_string(input));
  }
}

namespace {

constexpr size_t kMlpHidden = 128;
constexpr size_t kConv1Channels = 16;
constexpr size_t kConv2Channels = 32;

size_t cnn_flat_dim(const ImageShape& in) {
  return kConv2Channels * (in.height / 2 / 2) * (in.width / 2 / 2);
}

struct ParamLayout {
  std::string name;
  Shape shape;
  size_t fan_in;  // 0 for biases
};

std::vector<ParamLayout> layout(const ModelSpec& s) {
  if (s.arch == Arch::kMlpSmall) {
    const size_t in = s.input.numel();
    return {{"dense1.weight", {in, kMlpHidden}, in},
            {"dense1.bias", {kMlpHidden}, 0},
            {"dense2.weight", {kMlpHidden, s.num_classes}, kMlpHidden},
            {"dense2.bias", {s.num_classes}, 0}};
  }
  const size_t c = s.input.channels;
  const size_t flat = cnn_flat_dim(s.input);
  return {{"conv1.weight", {kConv1Channels, c, 3, 3}, c * 9},
          {"conv1.bias", {kConv1Channels}, 0},
          {"conv2.weight", {kConv2Channels, kConv1Channels, 3, 3}, kConv1Channels * 9},
          {"conv2.bias", {kConv2Channels}, 0},
          {"dense.weight", {flat, s.num_classes}, flat},
          {"dense.bias", {s.num_classes}, 0}};
}

}  // namespace

Model::Model(ModelSpec spec, std::vector<Parameter> params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  const auto expected = layout(spec_);
  if (params_.size() != expected.size()) {
    throw ShapeError("model " + std::string(to_string(spec_.arch)) + " expects " +
                     std::to_string(expected.size()) + " parameters, got " +
                     std::to_string(params_.size()));
  }
  for (size_t i = 0; i < expected.size(); ++i) {
    if (params_[i].name != expected[i].name || !params_[i].value ||
        params_[i].value->shape() != expected[i].shape) {
      throw ShapeError("parameter " + std::to_string(i) + " should be " + expected[i].name + " " +
                       to_string(expected[i].shape));
    }
  }
  // x' = x * (1/std) + (-mean/std), expanded to one (C,H,W) image.
  const ImageShape& in = spec_.input;
  Tensor scale(Shape{in.channels, in.height, in.width});
  Tensor shift(Shape{in.channels, in.height, in.width});
  const size_t plane = in.height * in.width;
  for (size_t c = 0; c < in.channels; ++c)
    for (size_t p = 0; p < plane; ++p) {
      scale[c * plane + p] = 1.0f / spec_.std[c];
      shift[c * plane + p] = -spec_.mean[c] / spec_.std[c];
    }
  norm_scale_ = constant(std::move(scale));
  norm_shift_ = constant(std::move(shift));
}

Model::Model(const Model& other)
    : spec_(other.spec_), norm_scale_(other.norm_scale_), norm_shift_(other.norm_shift_) {
  params_.reserve(other.params_.size());
  for (const Parameter& p : other.params_) {
    params_.push_back({p.name, std::make_shared<Tensor>(*p.value)});
  }
}

Model& Model::operator=(const Model& other) {
  if (this != &other) *this = Model(other);
  return *this;
}

Tensor& Model::parameter(const std::string& name) {
  for (Parameter& p : params_)
    if (p.name == name) return *p.value;
  throw Error("model has no parameter '" + name + "'");
}

const Tensor& Model::parameter(const std::string& name) const {
  return const_cast<Model*>(this)->parameter(name);
}

void Model::check_input(const Shape& shape) const {
  if (shape.size() != 4 || shape[0] == 0 ||
      !(ImageShape{shape[1], shape[2], shape[3]} == spec_.input)) {
    throw ShapeError("model expects (N," + to_string(spec_.input).substr(1) + " input, got " +
                     to_string(shape));
  }
}

Var Model::run(const Var& images, std::span<const Var> p) const {
  check_input(images.shape());
  const size_t n = images.shape()[0];
  Var x = ops::add(ops::mul(images, norm_scale_), norm_shift_);
  if (spec_.arch == Arch::kMlpSmall) {
    x = ops::reshape(x, {n, spec_.input.numel()});
    x = ops::relu(ops::add(ops::matmul(x, p[0]), p[1]));
    return ops::add(ops::matmul(x, p[2]), p[3]);
  }
  x = ops::maxpool2x2(ops::relu(ops::conv2d(x, p[0], p[1], 1, 1)));
  x = ops::maxpool2x2(ops::relu(ops::conv2d(x, p[2], p[3], 1, 1)));
  x = ops::reshape(x, {n, cnn_flat_dim(spec_.input)});
  return ops::add(ops::matmul(x, p[4]), p[5]);
}

Var Model::logits(const Var& images) const {
  std::vector<Var> p;
  p.reserve(params_.size());
  for (const Parameter& param : params_) p.push_back(constant(std::shared_ptr<const Tensor>(param.value)));
  return run(images, p);
}

Var Model::forward(Tape& tape, const Var& images, std::vector<Var>& param_vars) const {
  param_vars.clear();
  for (const Parameter& param : params_) {
    param_vars.push_back(tape.leaf(std::shared_ptr<const Tensor>(param.value)));
  }
  return run(images, param_vars);
}

bool Model::bitwise_equal(const Model& other) const {
  if (!(spec_ == other.spec_) || params_.size() != other.params_.size()) return false;
  for (size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name ||
        !params_[i].value->bitwise_equal(*other.params_[i].value)) {
      return false;
    }
  }
  return true;
}

Model build_model(const ModelSpec& spec, uint64_t init_seed) {
  spec.validate();
  Rng rng(init_seed, 0, "model_init");
  std::vector<Parameter> params;
  for (const ParamLayout& l : layout(spec)) {
    auto t = std::make_shared<Tensor>(l.shape);
    if (l.fan_in > 0) {
      const double bound = std::sqrt(6.0 / static_cast<double>(l.fan_in));
      for (float& v : t->data()) v = static_cast<float>(rng.uniform(-bound, bound));
    }
    params.push_back({l.name, std::move(t)});
  }
  return Model(spec, std::move(params));
}

Tensor forward(const Model& model, const ImageBatch& batch) { return model.logits(batch.images); }

void sgd_step(Model& model, const NamedGrads& grads, float lr, float momentum, SgdState& state) {
  if (!(lr > 0.0f)) throw ConfigError("sgd: lr must be positive");
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("sgd: momentum must be in [0,1)");
  const auto& params = model.parameters();
  for (const Parameter& p : params) {
    auto it = grads.find(p.name);
    if (it == grads.end()) throw Error("sgd: missing gradient for parameter '" + p.name + "'");
    if (it->second.shape() != p.value->shape()) {
      throw ShapeError("sgd: gradient for '" + p.name + "' has shape " +
                       to_string(it->second.shape()));
    }
  }
  if (state.velocity.empty()) {
    for (const Parameter& p : params) state.velocity.emplace_back(p.value->shape());
  }
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& v = state.velocity[i];
    Tensor& w = *params[i].value;
    const Tensor& g = grads.at(params[i].name);
    for (size_t j = 0; j < w.numel(); ++j) {
      v[j] = momentum * v[j] + g[j];
      w[j] -= lr * v[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Weight file: little-endian, magic "AVSN", version 1.

namespace {

constexpr char kMagic[4] = {'A', 'V', 'S', 'N'};
constexpr uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    static_assert(std::is_integral_v<T> || std::is_same_v<T, float>);
    uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    bytes(raw, sizeof(T));
  }
  const std::vector<uint8_t>& buf() const { return buf_; }

 private:
  std::vector<uint8_t> buf_;
};

class Reader {
 public:
  Reader(std::vector<uint8_t> buf, std::string origin) : buf_(std::move(buf)), origin_(std::move(origin)) {}

  void bytes(void* p, size_t n) {
    if (pos_ + n > buf_.size()) {
      throw FormatError(FormatErrorKind::kTruncated,
                        origin_ + ": unexpected end of file at byte " + std::to_string(pos_));
    }
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T le() {
    uint8_t raw[sizeof(T)];
    bytes(raw, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  std::vector<uint8_t> buf_;
  std::string origin_;
  size_t pos_ = 0;
};

}  // namespace

void write_weight_file(const WeightFile& file, const fs::path& path) {
  const ModelSpec& s = file.spec;
  Writer w;
  w.bytes(kMagic, 4);
  w.le<uint32_t>(kVersion);
  w.le<uint8_t>(static_cast<uint8_t>(s.arch));
  w.le<uint32_t>(static_cast<uint32_t>(s.input.channels));
  w.le<uint32_t>(static_cast<uint32_t>(s.input.height));
  w.le<uint32_t>(static_cast<uint32_t>(s.input.width));
  w.le<uint32_t>(static_cast<uint32_t>(s.num_classes));
  for (size_t c = 0; c < s.input.channels; ++c) {
    w.le<float>(s.mean.at(c));
    w.le<float>(s.std.at(c));
  }
  w.le<uint32_t>(static_cast<uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) {
    w.le<uint16_t>(static_cast<uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<uint8_t>(static_cast<uint8_t>(t.rank()));
    for (size_t d : t.shape()) w.le<uint32_t>(static_cast<uint32_t>(d));
    for (float v : t.data()) w.le<float>(v);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write weights to " + path.string());
  out.write(reinterpret_cast<const char*>(w.buf().data()), static_cast<std::streamsize>(w.buf().size()));
  if (!out) throw IoError("short write to " + path.string());
}

WeightFile read_weight_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weights file " + path.string());
  Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, path.string());

  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(FormatErrorKind::kBadMagic, path.string() + ": not an AVSN weight file");
  }
  const auto version = r.le<uint32_t>();
  if (version != kVersion) {
    throw FormatError(FormatErrorKind::kVersionMismatch,
                      path.string() + ": version " + std::to_string(version) + ", expected 1");
  }
  WeightFile file;
  ModelSpec& spec = file.spec;
  spec.arch = static_cast<Arch>(r.le<uint8_t>());
  spec.input.channels = r.le<uint32_t>();
  spec.input.height = r.le<uint32_t>();
  spec.input.width = r.le<uint32_t>();
  spec.num_classes = r.le<uint32_t>();
  for (size_t c = 0; c < spec.input.channels; ++c) {
    spec.mean.push_back(r.le<float>());
    spec.std.push_back(r.le<float>());
  }
  const auto count = r.le<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name(r.le<uint16_t>(), '\0');
    r.bytes(name.data(), name.size());
    const auto rank = r.le<uint8_t>();
    Shape shape;
    for (uint8_t d = 0; d < rank; ++d) shape.push_back(r.le<uint32_t>());
    size_t elems = 1;
    for (size_t d : shape) {
      if (d == 0) {
        throw FormatError(FormatErrorKind::kShapeMismatch,
                          path.string() + ": tensor '" + name + "' has a zero dimension");
      }
      elems *= d;
    }
    std::vector<float> data(elems);
    for (float& v : data) v = r.le<float>();
    file.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) {
    throw FormatError(FormatErrorKind::kTruncated, path.string() + ": trailing bytes after last tensor");
  }
  return file;
}

void save_weights(const Model& model, const fs::path& path) {
  WeightFile file{model.spec(), {}};
  for (const Parameter& p : model.parameters()) file.tensors.emplace_back(p.name, *p.value);
  write_weight_file(file, path);
}

Model load_weights(const fs::path& path) {
  WeightFile file = read_weight_file(path);
  const auto arch = static_cast<uint8_t>(file.spec.arch);
  if (arch > 1) {
    throw FormatError(FormatErrorKind::kShapeMismatch,
                      path.string() + ": unknown arch id " + std::to_string(arch));
  }
  try {
    file.spec.validate();
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorKind::kShapeMismatch, path.string() + ": " + e.what());
  }
  const auto expected = layout(file.spec);
  if (file.tensors.size() != expected.size()) {
    throw FormatError(FormatErrorKind::kShapeMismatch,
                      path.string() + ": " + std::to_string(file.tensors.size()) +
                          " tensors, spec needs " + std::to_string(expected.size()));
  }
  std::vector<Parameter> params;
  for (size_t i = 0; i < expected.size(); ++i) {
    auto& [name, t] = file.tensors[i];
    if (name != expected[i].name || t.shape() != expected[i].shape) {
      throw FormatError(FormatErrorKind::kShapeMismatch,
                        path.string() + ": tensor '" + name + "' " + to_string(t.shape()) +
                            " does not match spec's " + expected[i].name + " " +
                            to_string(expected[i].shape));
    }
    params.push_back({std::move(name), std::make_shared<Tensor>(std::move(t))});
  }
  return Model(std::move(file.spec), std::move(params));
}

}  // namespace advsec
