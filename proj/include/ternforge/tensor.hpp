#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "ternforge/error.hpp"

namespace ternforge {

// Logical dimensions of a dense row-major tensor. Every dim is >= 1.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t numel() const noexcept;
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }

  bool operator==(const Shape&) const = default;

 private:
  std::vector<std::size_t> dims_;
};

std::string to_string(const Shape& shape);

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_.numel(), T{}) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw Error(Errc::kShapeMismatch, "buffer of " + std::to_string(data_.size()) +
                                            " elements for shape " + to_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Row r of a tensor viewed as [numel / last_dim, last_dim].
  std::span<T> row(std::size_t r) {
    const std::size_t w = shape_[shape_.rank() - 1];
    return std::span<T>(data_).subspan(r * w, w);
  }
  std::span<const T> row(std::size_t r) const {
    const std::size_t w = shape_[shape_.rank() - 1];
    return std::span<const T>(data_).subspan(r * w, w);
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using F32Tensor = Tensor<float>;
using I8Tensor = Tensor<std::int8_t>;

// Longest supported integer reduction: 127 * 1 * 2^16 stays below 2^31.
inline constexpr std::size_t kMaxReductionLength = std::size_t{1} << 16;

// Integer multiply-accumulate results before dequantization.
class I32Accumulator {
 public:
  I32Accumulator(Shape shape, std::size_t reduction_length);

  const Shape& shape() const noexcept { return values_.shape(); }
  std::size_t reduction_length() const noexcept { return reduction_length_; }
  std::span<std::int32_t> data() noexcept { return values_.data(); }
  std::span<const std::int32_t> data() const noexcept { return values_.data(); }
  std::int32_t& operator[](std::size_t i) { return values_[i]; }
  std::int32_t operator[](std::size_t i) const { return values_[i]; }

  bool operator==(const I32Accumulator& other) const { return values_ == other.values_; }

 private:
  Tensor<std::int32_t> values_;
  std::size_t reduction_length_;
};

// Number of trailing axes a reduction collapses: 1 reduces the feature axis of
// [tokens, dim], 2 reduces the spatial grid of [C, H, W].
struct TrailingAxes {
  std::size_t count = 1;
};

float reduce_abs_mean(std::span<const float> values);
float reduce_abs_mean(const F32Tensor& t);

// Output shape is the leading (unreduced) dims, or [1] when everything is reduced.
F32Tensor reduce_abs_max(const F32Tensor& t, TrailingAxes axes = {});

bool all_finite(std::span<const float> values) noexcept;

}  // namespace ternforge
