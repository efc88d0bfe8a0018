#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advsec/tensor.hpp"

namespace advsec {

struct ImageShape {
  size_t channels = 1;
  size_t height = 1;
  size_t width = 1;

  size_t numel() const { return channels * height * width; }
  Shape batched(size_t n) const { return {n, channels, height, width}; }
  bool operator==(const ImageShape&) const = default;
};

std::string to_string(const ImageShape& s);

// (N,C,H,W) images in [0,1] with one label per sample.
struct ImageBatch {
  Tensor images;
  std::vector<int> labels;

  size_t size() const { return labels.size(); }
  ImageShape image_shape() const;
  // Rows [begin, end) as a new batch.
  ImageBatch slice(size_t begin, size_t end) const;
};

// Throws ShapeError if the batch breaks its invariants (range, labels, N >= 1).
void validate_batch(const ImageBatch& batch, size_t num_classes);

ImageBatch concat(std::span<const ImageBatch> parts);

// Read-only, index-addressable labelled image collection.
class Dataset {
 public:
  Dataset(std::string name, size_t num_classes, ImageShape shape, std::vector<float> pixels,
          std::vector<int> labels);

  const std::string& name() const { return name_; }
  size_t num_classes() const { return num_classes_; }
  size_t size() const { return labels_.size(); }
  const ImageShape& image_shape() const { return shape_; }

  std::span<const float> image(size_t index) const;
  int label(size_t index) const { return labels_.at(index); }
  std::span<const int> labels() const { return labels_; }

  ImageBatch gather(std::span<const size_t> indices) const;
  ImageBatch range(size_t begin, size_t end) const;
  ImageBatch all() const { return range(0, size()); }
  Dataset subset(size_t begin, size_t end) const;

 private:
  std::string name_;
  size_t num_classes_;
  ImageShape shape_;
  std::vector<float> pixels_;
  std::vector<int> labels_;
};

// IDX image/label pair (MNIST layout). Pixels are mapped to [0,1] by /255.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);
void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

// Every regular file in `dir` (sorted by name) is read as a CIFAR-10 binary
// batch of 3073-byte records.
Dataset load_cifar10(const std::filesystem::path& dir);
void write_cifar10_batch(const Dataset& ds, const std::filesystem::path& file);

// Class k is noise (sigma 0.1) around a template that lights every pixel whose
// flat index is congruent to k modulo num_classes. Sample i has label i mod K.
Dataset synth_blobs(size_t n, size_t num_classes, ImageShape shape, uint64_t seed);

// Index order of one pass: identity without a seed, Fisher-Yates otherwise.
std::vector<size_t> epoch_order(size_t n, std::optional<uint64_t> shuffle_seed);

std::vector<std::vector<size_t>> batch_indices(size_t n, size_t batch_size,
                                               std::optional<uint64_t> shuffle_seed);

std::vector<ImageBatch> batch_iter(const Dataset& ds, size_t batch_size,
                                   std::optional<uint64_t> shuffle_seed);

}  // namespace advsec
