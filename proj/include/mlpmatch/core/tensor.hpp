#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "mlpmatch/core/error.hpp"

namespace mlpmatch {

// Dense row-major tensor. Activations and weights use NCHW order; labels and
// masks drop the channel axis. Value semantics, contiguous storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(numel(shape_)), T(0));
  }

  Tensor(std::vector<int> shape, T fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(numel(shape_)), fill);
  }

  static std::int64_t numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ContractError("tensor shape has negative dimension");
      n *= d;
    }
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 4-D accessor (n, c, h, w).
  T& at(int n, int c, int h, int w) {
    return data_[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at(int n, int c, int h, int w) const {
    return const_cast<Tensor*>(this)->at(n, c, h, w);
  }

  // 3-D accessor (c, h, w).
  T& at3(int c, int h, int w) {
    return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * shape_[1] + h) * shape_[2] + w)];
  }
  const T& at3(int c, int h, int w) const {
    return const_cast<Tensor*>(this)->at3(c, h, w);
  }

  // 2-D accessor (h, w).
  T& at2(int h, int w) {
    return data_[static_cast<std::size_t>(static_cast<std::int64_t>(h) * shape_[1] + w)];
  }
  const T& at2(int h, int w) const { return const_cast<Tensor*>(this)->at2(h, w); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
bool tensors_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ContractError("max_abs_diff: shape mismatch");
  T m = T(0);
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const T d = std::abs(a[i] - b[i]);
    if (d > m) m = d;
  }
  return m;
}

// Convert element type, e.g. float samples into a double-precision pipeline.
template <typename To, typename From>
Tensor<To> cast_tensor(const Tensor<From>& src) {
  Tensor<To> out(src.shape());
  for (std::int64_t i = 0; i < src.size(); ++i) out[i] = static_cast<To>(src[i]);
  return out;
}

}  // namespace mlpmatch
