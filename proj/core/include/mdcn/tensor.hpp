#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mdcn {

// (batch, channels, frames, rows, columns). Weights reuse the same layout as
// (out_ch, in_ch, kt, kh, kw).
struct Shape5 {
  int n = 0;
  int c = 0;
  int d = 0;
  int h = 0;
  int w = 0;

  std::int64_t volume() const {
    return static_cast<std::int64_t>(n) * c * d * h * w;
  }
  // Elements in one (n, c) slice.
  std::int64_t plane() const { return static_cast<std::int64_t>(d) * h * w; }
  bool valid() const { return n >= 1 && c >= 1 && d >= 1 && h >= 1 && w >= 1; }
  std::string str() const;

  bool operator==(const Shape5&) const = default;
};

// Dense row-major 5-D array, w fastest. A default-constructed tensor is empty
// and stands for "absent".
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape5 shape, T fill = T{});
  Tensor(Shape5 shape, std::vector<T> values);

  const Shape5& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  std::int64_t offset(int n, int c, int d, int h, int w) const {
    return (((static_cast<std::int64_t>(n) * shape_.c + c) * shape_.d + d) * shape_.h + h) *
               shape_.w +
           w;
  }
  T& at(int n, int c, int d, int h, int w) { return data_[offset(n, c, d, h, w)]; }
  const T& at(int n, int c, int d, int h, int w) const { return data_[offset(n, c, d, h, w)]; }

  // Start of the (n, c) slice.
  T* slice(int n, int c) { return data_.data() + offset(n, c, 0, 0, 0); }
  const T* slice(int n, int c) const { return data_.data() + offset(n, c, 0, 0, 0); }

  void fill(T value);

  bool operator==(const Tensor&) const = default;

 private:
  Shape5 shape_{};
  std::vector<T> data_;
};

using VideoTensor = Tensor<float>;

// Small dense row-major 2-D array for pooled features and fc weights.
template <typename T>
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  T& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  T* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const T* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }

  bool operator==(const Matrix&) const = default;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& src) {
  if (src.empty()) return {};
  std::vector<To> out(src.values().begin(), src.values().end());
  return Tensor<To>(src.shape(), std::move(out));
}

template <typename To, typename From>
Matrix<To> matrix_cast(const Matrix<From>& src) {
  Matrix<To> out;
  out.rows = src.rows;
  out.cols = src.cols;
  out.data.assign(src.data.begin(), src.data.end());
  return out;
}

// Stacks single-sample tensors (n == 1) along the batch axis.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> samples);

}  // namespace mdcn
