#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "crossalign/error.hpp"

namespace crossalign::nn {

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

/// Dense row-major tensor. Rank-2 tensors double as matrices; a rank-1
/// tensor of length n behaves as an n x 1 matrix.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T{0}) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
      n *= d;
    }
    data_.assign(n, fill);
    cols_ = shape_.size() <= 1 ? 1 : n / shape_[0];
  }

  static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor vector(std::size_t n) { return Tensor({n}); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept { return cols_; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T{0}); }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  Tensor& operator+=(const Tensor& other) {
    if (!same_shape(other)) {
      throw ShapeError("cannot add " + shape_string(other.shape_) + " into " + shape_string(shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
  std::size_t cols_ = 0;
};

/// Copy of `src` with rows extended by zeros up to `rows`.
template <typename T>
Tensor<T> pad_rows(const Tensor<T>& src, std::size_t rows) {
  if (rows < src.rows()) throw ShapeError("pad_rows cannot shrink a tensor");
  Tensor<T> out({rows, src.cols()});
  std::copy(src.data(), src.data() + src.size(), out.data());
  return out;
}

}  // namespace crossalign::nn
