#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "detnet/errors.hpp"
#include "detnet/rng.hpp"

namespace detnet {

// Dense N-dimensional array, row-major, layout [batch, channel, (time,)
// height, width] by convention. Value type: copying copies the data.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(checked_size(shape_)), T(0));
  }

  TensorT(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    DETNET_CHECK_T(checked_size(shape_) == static_cast<std::int64_t>(data_.size()),
                   shape_error,
                   "tensor data length " << data_.size()
                       << " does not match shape product " << checked_size(shape_));
  }

  static TensorT full(std::vector<int> shape, T value) {
    TensorT t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
  }

  static TensorT scalar(T value) { return TensorT({1}, {value}); }

  static TensorT uniform(std::vector<int> shape, Rng& rng, double lo, double hi) {
    TensorT t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  static TensorT randn(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
    TensorT t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<T>(rng.normal() * stddev);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  // Reinterpret with a new shape of identical element count.
  TensorT reshaped(std::vector<int> new_shape) const {
    DETNET_CHECK_T(checked_size(new_shape) == size(), shape_error,
                   "reshape " << shape_str(shape_) << " -> " << shape_str(new_shape)
                              << " changes element count");
    return TensorT(std::move(new_shape), data_);
  }

  void fill(T value) {
    for (auto& v : data_) v = value;
  }

  template <typename U>
  TensorT<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return TensorT<U>(shape_, std::move(out));
  }

  static std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(s[i]);
    }
    return out + "]";
  }

  std::string shape_str() const { return shape_str(shape_); }

 private:
  static std::int64_t checked_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
      DETNET_CHECK_T(e >= 1, shape_error,
                     "tensor extent must be >= 1, got " << e << " in " << shape_str(shape));
      n *= e;
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace detnet
