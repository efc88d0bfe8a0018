#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace advsec {

using Shape = std::vector<size_t>;

size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major float32 array. Plain value type; gradient bookkeeping lives
// on a Tape (see autodiff.hpp), not inside the tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t dim(size_t axis) const { return shape_.at(axis); }
  size_t numel() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  float& operator[](size_t i) { return data_[i]; }
  float operator[](size_t i) const { return data_[i]; }

  // Value of a one-element tensor.
  float item() const;

  Tensor reshaped(Shape shape) const;

  // Bitwise equality of shape and payload.
  bool bitwise_equal(const Tensor& other) const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

}  // namespace advsec
