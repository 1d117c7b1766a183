#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

#include "cycleseg/core/shape.hpp"

namespace cycleseg {

/// Dense row-major tensor with shared storage. Copies are shallow; use
/// clone() for an independent buffer. Rank and dtype are fixed at
/// construction.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        buf_(std::make_shared<std::vector<T>>(static_cast<size_t>(shape_.numel()), T(0))) {}

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.buf_->begin(), t.buf_->end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    if (shape.numel() != static_cast<int64_t>(values.size()))
      throw std::invalid_argument("Tensor::from: value count " + std::to_string(values.size()) +
                                  " does not match shape " + shape.str());
    Tensor t;
    t.shape_ = std::move(shape);
    t.buf_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  bool defined() const { return buf_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int64_t numel() const { return defined() ? static_cast<int64_t>(buf_->size()) : 0; }

  T* data() { return buf_->data(); }
  const T* data() const { return buf_->data(); }

  T& operator[](int64_t i) { return (*buf_)[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return (*buf_)[static_cast<size_t>(i)]; }

  // Indexed accessors for the common ranks.
  T& at(int64_t i, int64_t j) { return (*buf_)[static_cast<size_t>(i * shape_[1] + j)]; }
  const T& at(int64_t i, int64_t j) const { return (*buf_)[static_cast<size_t>(i * shape_[1] + j)]; }
  T& at(int64_t i, int64_t j, int64_t k) {
    return (*buf_)[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  const T& at(int64_t i, int64_t j, int64_t k) const {
    return (*buf_)[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  T& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return (*buf_)[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  const T& at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return (*buf_)[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  Tensor clone() const {
    if (!defined()) return Tensor();
    Tensor t;
    t.shape_ = shape_;
    t.buf_ = std::make_shared<std::vector<T>>(*buf_);
    return t;
  }

  /// Same storage viewed under a different shape with equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape.numel() != shape_.numel())
      throw std::invalid_argument("Tensor::reshaped: numel mismatch " + shape_.str() + " -> " +
                                  shape.str());
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  void fill(T value) { std::fill(buf_->begin(), buf_->end(), value); }

  bool all_finite() const {
    for (const T& v : *buf_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool shares_storage(const Tensor& o) const { return buf_ == o.buf_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> buf_;
};

template <typename T>
inline bool shares_storage(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shares_storage(b);
}

template <typename T>
inline T max_abs(const Tensor<T>& a) {
  T m = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i]));
  return m;
}

template <typename T>
inline T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("max_abs_diff: shape mismatch " + a.shape().str() + " vs " +
                                b.shape().str());
  T m = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
inline bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<size_t>(a.numel())) == 0;
}

}  // namespace cycleseg
