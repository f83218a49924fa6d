#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "birr/errors.hpp"

namespace birr {

// (batch, height, width, channels). Parameter tensors reuse the same four
// slots: conv kernels are (kh, kw, in, out), vectors are (1, 1, 1, C).
struct Shape {
  std::size_t n = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;

  std::size_t size() const { return n * h * w * c; }
  std::array<std::size_t, 4> dims() const { return {n, h, w, c}; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

// Dense rank-4 array, NHWC row-major. T is float in production; the double
// instantiation exists for finite-difference gradient checks.
template <typename T>
class TensorT {
 public:
  using value_type = T;

  TensorT() = default;
  explicit TensorT(Shape shape, T fill = T(0))
      : shape_(shape), data_(shape.size(), fill) {}
  TensorT(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_.str());
    }
  }

  static TensorT vector(std::size_t channels, T fill = T(0)) {
    return TensorT(Shape{1, 1, 1, channels}, fill);
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  std::size_t offset(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return ((n * shape_.h + h) * shape_.w + w) * shape_.c + c;
  }
  T& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return data_[offset(n, h, w, c)];
  }
  T at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return data_[offset(n, h, w, c)];
  }
  T* ptr(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
    return data_.data() + offset(n, h, w, c);
  }
  const T* ptr(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
    return data_.data() + offset(n, h, w, c);
  }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  TensorT<U> cast() const {
    return TensorT<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  // Items [first, first + count) along the batch dimension.
  TensorT slice_batch(std::size_t first, std::size_t count) const;

  friend bool operator==(const TensorT&, const TensorT&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
TensorT<T> TensorT<T>::slice_batch(std::size_t first, std::size_t count) const {
  if (first + count > shape_.n) {
    throw DimensionError("batch slice [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") out of range for " +
                         shape_.str());
  }
  const std::size_t item = shape_.h * shape_.w * shape_.c;
  std::vector<T> out(data_.begin() + static_cast<std::ptrdiff_t>(first * item),
                     data_.begin() + static_cast<std::ptrdiff_t>((first + count) * item));
  return TensorT(Shape{count, shape_.h, shape_.w, shape_.c}, std::move(out));
}

using Tensor = TensorT<float>;

// Stacks single-item tensors of identical shape along the batch dimension.
template <typename T>
TensorT<T> stack_batch(std::span<const TensorT<T>> items);

}  // namespace birr
