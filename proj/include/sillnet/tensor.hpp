#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sillnet {

// Dense row-major n-d array. Rank stays small in practice (1..4); everything
// the pipeline moves around -- images [3,H,W], feature grids [C,H,W], batches
// [N,C,H,W], logit matrices [N,M] -- is one of these.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, T(0));
  }

  TensorT(std::initializer_list<int> shape) : TensorT(std::vector<int>(shape)) {}

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(int i, int j) { return data_[idx2(i, j)]; }
  const T& operator()(int i, int j) const { return data_[idx2(i, j)]; }

  T& operator()(int i, int j, int k) { return data_[idx3(i, j, k)]; }
  const T& operator()(int i, int j, int k) const { return data_[idx3(i, j, k)]; }

  T& operator()(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
  const T& operator()(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  // In-place axpy-style helpers; shapes must already agree.
  void add_scaled(const TensorT& o, T a) {
    check_same_shape(o, "add_scaled");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * o.data_[i];
  }
  void scale(T a) {
    for (auto& v : data_) v *= a;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  typename std::vector<T>::iterator begin() { return data_.begin(); }
  typename std::vector<T>::iterator end() { return data_.end(); }
  typename std::vector<T>::const_iterator begin() const { return data_.begin(); }
  typename std::vector<T>::const_iterator end() const { return data_.end(); }

 private:
  void check_same_shape(const TensorT& o, const char* who) const {
    if (!same_shape(o)) throw std::invalid_argument(std::string(who) + ": shape mismatch");
  }
  std::size_t idx2(int i, int j) const {
    return static_cast<std::size_t>(i) * shape_[1] + j;
  }
  std::size_t idx3(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t idx4(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;

template <typename T>
bool all_finite(const TensorT<T>& t) {
  for (const T& v : t)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename T>
bool bit_equal(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace sillnet
