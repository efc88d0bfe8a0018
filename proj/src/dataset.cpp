#include "advsec/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "advsec/errors.hpp"
#include "advsec/rng.hpp"

namespace advsec {

namespace fs = std::filesystem;

std::string to_string(const ImageShape& s) {
  return to_string(Shape{s.channels, s.height, s.width});
}

ImageShape ImageBatch::image_shape() const {
  if (images.rank() != 4) throw ShapeError("image batch must be NCHW, got " + to_string(images.shape()));
  return {images.dim(1), images.dim(2), images.dim(3)};
}

ImageBatch ImageBatch::slice(size_t begin, size_t end) const {
  if (begin >= end || end > size()) {
    throw ShapeError("batch slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + std::to_string(size()) + " samples");
  }
  const size_t per = images.numel() / size();
  std::vector<float> data(images.data().begin() + static_cast<std::ptrdiff_t>(begin * per),
                          images.data().begin() + static_cast<std::ptrdiff_t>(end * per));
  return {Tensor(image_shape().batched(end - begin), std::move(data)),
          std::vector<int>(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                           labels.begin() + static_cast<std::ptrdiff_t>(end))};
}

void validate_batch(const ImageBatch& batch, size_t num_classes) {
  if (batch.size() == 0) throw ShapeError("image batch is empty");
  if (batch.images.rank() != 4 || batch.images.dim(0) != batch.size()) {
    throw ShapeError("image batch of shape " + to_string(batch.images.shape()) + " has " +
                     std::to_string(batch.size()) + " labels");
  }
  for (float v : batch.images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ShapeError("image values must lie in [0,1]");
  }
  for (int y : batch.labels) {
    if (y < 0 || static_cast<size_t>(y) >= num_classes) {
      throw ShapeError("label " + std::to_string(y) + " out of range for " +
                       std::to_string(num_classes) + " classes");
    }
  }
}

ImageBatch concat(std::span<const ImageBatch> parts) {
  if (parts.empty()) throw ShapeError("concat of zero batches");
  const ImageShape shape = parts.front().image_shape();
  std::vector<float> data;
  std::vector<int> labels;
  for (const ImageBatch& p : parts) {
    if (!(p.image_shape() == shape)) throw ShapeError("concat of batches with different image shapes");
    data.insert(data.end(), p.images.data().begin(), p.images.data().end());
    labels.insert(labels.end(), p.labels.begin(), p.labels.end());
  }
  const size_t n = labels.size();
  return {Tensor(shape.batched(n), std::move(data)), std::move(labels)};
}

// ---------------------------------------------------------------------------

Dataset::Dataset(std::string name, size_t num_classes, ImageShape shape,
                 std::vector<float> pixels, std::vector<int> labels)
    : name_(std::move(name)),
      num_classes_(num_classes),
      shape_(shape),
      pixels_(std::move(pixels)),
      labels_(std::move(labels)) {
  if (shape_.numel() == 0) throw ShapeError("dataset image shape has a zero dimension");
  if (pixels_.size() != labels_.size() * shape_.numel()) {
    throw ShapeError("dataset '" + name_ + "' has " + std::to_string(pixels_.size()) +
                     " pixels for " + std::to_string(labels_.size()) + " images of shape " +
                     to_string(shape_));
  }
  for (int y : labels_) {
    if (y < 0 || static_cast<size_t>(y) >= num_classes_) {
      throw ShapeError("dataset '" + name_ + "' label " + std::to_string(y) + " out of range");
    }
  }
}

std::span<const float> Dataset::image(size_t index) const {
  if (index >= size()) throw ShapeError("sample index " + std::to_string(index) + " out of range");
  return std::span<const float>(pixels_).subspan(index * shape_.numel(), shape_.numel());
}

ImageBatch Dataset::gather(std::span<const size_t> indices) const {
  if (indices.empty()) throw ShapeError("cannot gather an empty batch");
  std::vector<float> data;
  data.reserve(indices.size() * shape_.numel());
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (size_t i : indices) {
    auto img = image(i);
    data.insert(data.end(), img.begin(), img.end());
    labels.push_back(labels_[i]);
  }
  return {Tensor(shape_.batched(indices.size()), std::move(data)), std::move(labels)};
}

ImageBatch Dataset::range(size_t begin, size_t end) const {
  std::vector<size_t> idx(end > begin ? end - begin : 0);
  std::iota(idx.begin(), idx.end(), begin);
  return gather(idx);
}

Dataset Dataset::subset(size_t begin, size_t end) const {
  if (begin >= end || end > size()) {
    throw ShapeError("subset [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for dataset of " + std::to_string(size()));
  }
  const size_t per = shape_.numel();
  return Dataset(name_, num_classes_, shape_,
                 std::vector<float>(pixels_.begin() + static_cast<std::ptrdiff_t>(begin * per),
                                    pixels_.begin() + static_cast<std::ptrdiff_t>(end * per)),
                 std::vector<int>(labels_.begin() + static_cast<std::ptrdiff_t>(begin),
                                  labels_.begin() + static_cast<std::ptrdiff_t>(end)));
}

// ---------------------------------------------------------------------------

namespace {

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;
constexpr size_t kCifarSide = 32;
constexpr size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

std::vector<uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::vector<uint8_t>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

uint32_t read_be32(const std::vector<uint8_t>& b, size_t at, const fs::path& path) {
  if (at + 4 > b.size()) {
    throw FormatError(FormatErrorKind::kTruncated, path.string() + ": header ends early");
  }
  return (uint32_t{b[at]} << 24) | (uint32_t{b[at + 1]} << 16) | (uint32_t{b[at + 2]} << 8) |
         uint32_t{b[at + 3]};
}

void append_be32(std::vector<uint8_t>& b, uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) b.push_back(static_cast<uint8_t>(v >> shift));
}

uint8_t quantize(float v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

size_t infer_classes(const std::vector<int>& labels) {
  int top = 1;
  for (int y : labels) top = std::max(top, y);
  return static_cast<size_t>(top) + 1;
}

}  // namespace

Dataset load_idx(const fs::path& images_path, const fs::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  if (read_be32(img, 0, images_path) != kIdxImagesMagic) {
    throw FormatError(FormatErrorKind::kBadMagic, images_path.string() + ": expected 0x00000803");
  }
  if (read_be32(lab, 0, labels_path) != kIdxLabelsMagic) {
    throw FormatError(FormatErrorKind::kBadMagic, labels_path.string() + ": expected 0x00000801");
  }
  const size_t n = read_be32(img, 4, images_path);
  const size_t rows = read_be32(img, 8, images_path);
  const size_t cols = read_be32(img, 12, images_path);
  const size_t n_labels = read_be32(lab, 4, labels_path);
  if (n != n_labels) {
    throw FormatError(FormatErrorKind::kCountMismatch,
                      std::to_string(n) + " images in " + images_path.string() + " but " +
                          std::to_string(n_labels) + " labels in " + labels_path.string());
  }
  if (n == 0 || rows == 0 || cols == 0) {
    throw FormatError(FormatErrorKind::kShapeMismatch, images_path.string() + ": empty dimension");
  }
  const size_t pixels = n * rows * cols;
  if (img.size() < 16 + pixels) {
    throw FormatError(FormatErrorKind::kTruncated,
                      images_path.string() + ": expected " + std::to_string(pixels) +
                          " pixel bytes, found " + std::to_string(img.size() - 16));
  }
  if (lab.size() < 8 + n) {
    throw FormatError(FormatErrorKind::kTruncated, labels_path.string() + ": expected " +
                                                       std::to_string(n) + " label bytes");
  }
  std::vector<float> data(pixels);
  for (size_t i = 0; i < pixels; ++i) data[i] = static_cast<float>(img[16 + i]) / 255.0f;
  std::vector<int> labels(n);
  for (size_t i = 0; i < n; ++i) labels[i] = lab[8 + i];
  const size_t classes = infer_classes(labels);
  return Dataset("idx:" + images_path.filename().string(), classes, {1, rows, cols},
                 std::move(data), std::move(labels));
}

void write_idx(const Dataset& ds, const fs::path& images_path, const fs::path& labels_path) {
  const ImageShape s = ds.image_shape();
  if (s.channels != 1) {
    throw ShapeError("IDX images are single-channel, dataset has " + std::to_string(s.channels));
  }
  std::vector<uint8_t> img;
  img.reserve(16 + ds.size() * s.numel());
  append_be32(img, kIdxImagesMagic);
  append_be32(img, static_cast<uint32_t>(ds.size()));
  append_be32(img, static_cast<uint32_t>(s.height));
  append_be32(img, static_cast<uint32_t>(s.width));
  for (size_t i = 0; i < ds.size(); ++i)
    for (float v : ds.image(i)) img.push_back(quantize(v));

  std::vector<uint8_t> lab;
  append_be32(lab, kIdxLabelsMagic);
  append_be32(lab, static_cast<uint32_t>(ds.size()));
  for (int y : ds.labels()) {
    if (y > 255) throw ShapeError("IDX labels are single bytes");
    lab.push_back(static_cast<uint8_t>(y));
  }
  write_file(images_path, img);
  write_file(labels_path, lab);
}

Dataset load_cifar10(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("CIFAR-10 directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".bin") files.push_back(entry.path());
  }
  if (files.empty()) throw IoError("no CIFAR-10 batch files (*.bin) in " + dir.string());
  std::sort(files.begin(), files.end());

  std::vector<float> data;
  std::vector<int> labels;
  for (const auto& file : files) {
    const auto bytes = read_file(file);
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
      throw FormatError(FormatErrorKind::kBadRecord,
                        file.string() + ": length " + std::to_string(bytes.size()) +
                            " is not a positive multiple of 3073");
    }
    const size_t records = bytes.size() / kCifarRecord;
    for (size_t r = 0; r < records; ++r) {
      const uint8_t* rec = bytes.data() + r * kCifarRecord;
      if (rec[0] > 9) {
        throw FormatError(FormatErrorKind::kBadRecord, file.string() + ": record " +
                                                           std::to_string(r) + " has label " +
                                                           std::to_string(rec[0]));
      }
      labels.push_back(rec[0]);
      for (size_t p = 1; p < kCifarRecord; ++p) data.push_back(static_cast<float>(rec[p]) / 255.0f);
    }
  }
  return Dataset("cifar10:" + dir.filename().string(), 10, {3, kCifarSide, kCifarSide},
                 std::move(data), std::move(labels));
}

void write_cifar10_batch(const Dataset& ds, const fs::path& file) {
  if (!(ds.image_shape() == ImageShape{3, kCifarSide, kCifarSide})) {
    throw ShapeError("CIFAR-10 records are 3x32x32, dataset has " + to_string(ds.image_shape()));
  }
  std::vector<uint8_t> bytes;
  bytes.reserve(ds.size() * kCifarRecord);
  for (size_t i = 0; i < ds.size(); ++i) {
    if (ds.label(i) > 9) throw ShapeError("CIFAR-10 labels must be in [0,9]");
    bytes.push_back(static_cast<uint8_t>(ds.label(i)));
    for (float v : ds.image(i)) bytes.push_back(quantize(v));
  }
  write_file(file, bytes);
}

// ---------------------------------------------------------------------------

namespace {
constexpr float kBlobBright = 0.9f;
constexpr float kBlobDark = 0.1f;
constexpr double kBlobSigma = 0.1;
}  // namespace

Dataset synth_blobs(size_t n, size_t num_classes, ImageShape shape, uint64_t seed) {
  if (num_classes < 2) throw ConfigError("synth_blobs needs at least 2 classes");
  if (shape.numel() == 0) throw ShapeError("synth_blobs image shape has a zero dimension");
  if (shape.numel() < num_classes) {
    throw ShapeError("synth_blobs image " + to_string(shape) + " has fewer pixels than the " +
                     std::to_string(num_classes) + " classes");
  }
  if (n < num_classes) {
    throw ConfigError("synth_blobs needs n >= num_classes (" + std::to_string(n) + " < " +
                      std::to_string(num_classes) + ")");
  }
  const size_t per = shape.numel();
  std::vector<float> data(n * per);
  std::vector<int> labels(n);
  for (size_t i = 0; i < n; ++i) {
    const size_t k = i % num_classes;
    labels[i] = static_cast<int>(k);
    Rng rng(seed, i, "synth");
    float* img = data.data() + i * per;
    for (size_t p = 0; p < per; ++p) {
      const double base = (p % num_classes == k) ? kBlobBright : kBlobDark;
      img[p] = std::clamp(static_cast<float>(base + kBlobSigma * rng.normal()), 0.0f, 1.0f);
    }
  }
  return Dataset("synth_blobs", num_classes, shape, std::move(data), std::move(labels));
}

std::vector<size_t> epoch_order(size_t n, std::optional<uint64_t> shuffle_seed) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  if (shuffle_seed && n > 1) {
    Rng rng(*shuffle_seed, 0, "shuffle");
    for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  }
  return order;
}

std::vector<std::vector<size_t>> batch_indices(size_t n, size_t batch_size,
                                               std::optional<uint64_t> shuffle_seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  const auto order = epoch_order(n, shuffle_seed);
  std::vector<std::vector<size_t>> batches;
  for (size_t start = 0; start < n; start += batch_size) {
    const size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<ImageBatch> batch_iter(const Dataset& ds, size_t batch_size,
                                   std::optional<uint64_t> shuffle_seed) {
  std::vector<ImageBatch> out;
  for (const auto& idx : batch_indices(ds.size(), batch_size, shuffle_seed)) {
    out.push_back(ds.gather(idx));
  }
  return out;
}

}  // namespace advsec
