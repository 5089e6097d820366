#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <vector>

#include "cmwm/rng.hpp"

namespace cmwm {

/// Dense row-major tensor of rank 0..3. Training code instantiates T=double
/// (so finite-difference checks are meaningful) or T=float for release runs.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel_of(shape_)), T(0));
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<T> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    if (static_cast<int64_t>(values.size()) != numel_of(t.shape_))
      throw std::invalid_argument("tensor: data length does not match shape");
    t.data_ = std::move(values);
    return t;
  }

  static Tensor randn(std::vector<int> shape, SplitRng& rng, T stddev = T(1)) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<T>(rng.gaussian()) * stddev;
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  const T& at(int i, int j) const {
    return data_[static_cast<size_t>(i) * shape_[1] + j];
  }
  T& at(int i, int j, int k) {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }

  T* row(int i) { return data_.data() + static_cast<size_t>(i) * shape_.back(); }
  const T* row(int i) const {
    return data_.data() + static_cast<size_t>(i) * shape_.back();
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out = Tensor<U>::from(shape_, std::vector<U>(data_.begin(), data_.end()));
    return out;
  }

  static int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

/// out[m,n] += a[m,k] @ b[k,n]
template <typename T>
void matmul_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  for (int i = 0; i < m; ++i) {
    const T* arow = a.row(i);
    T* orow = out.row(i);
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b.row(p);
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: shape mismatch");
  Tensor<T> out({a.dim(0), b.dim(1)});
  matmul_acc(a, b, out);
  return out;
}

/// out[m,n] += a[k,m]^T @ b[k,n]
template <typename T>
void matmul_at_b_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  const int k = a.dim(0), m = a.dim(1), n = b.dim(1);
  for (int p = 0; p < k; ++p) {
    const T* arow = a.row(p);
    const T* brow = b.row(p);
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* orow = out.row(i);
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

/// out[m,k] += a[m,n] @ b[k,n]^T
template <typename T>
void matmul_a_bt_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  const int m = a.dim(0), n = a.dim(1), k = b.dim(0);
  for (int i = 0; i < m; ++i) {
    const T* arow = a.row(i);
    T* orow = out.row(i);
    for (int p = 0; p < k; ++p) {
      const T* brow = b.row(p);
      T acc = T(0);
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      orow[p] += acc;
    }
  }
}

}  // namespace cmwm
