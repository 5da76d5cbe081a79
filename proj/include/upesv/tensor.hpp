// Minimal dense row-major tensor. Hot math goes through Eigen maps over the
// flat storage; everything else is explicit loops.
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "upesv/common.hpp"

namespace upesv {

using Shape = std::vector<int64_t>;

template <class S>
class Tensor {
 public:
  using Scalar = S;
  template <class T>
  using MatMap =
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  template <class T>
  using ConstMatMap = Eigen::Map<
      const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), S(0));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const S& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  S& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  const S& at(int64_t i, int64_t j) const {
    return data_[static_cast<size_t>(i * shape_[1] + j)];
  }
  S& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(
        ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const S& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(
        ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(S(0)); }

  Tensor reshaped(Shape shape) const {
    require<ShapeError>(count(shape) == numel(), "reshape changes element count");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // 2-D Eigen view; rows*cols must cover the whole buffer.
  MatMap<S> mat(int64_t rows, int64_t cols) {
    require<ShapeError>(rows * cols == numel(), "mat() view size mismatch");
    return MatMap<S>(data_.data(), rows, cols);
  }
  ConstMatMap<S> mat(int64_t rows, int64_t cols) const {
    require<ShapeError>(rows * cols == numel(), "mat() view size mismatch");
    return ConstMatMap<S>(data_.data(), rows, cols);
  }
  MatMap<S> mat2d() { return mat(shape_.at(0), shape_.at(1)); }
  ConstMatMap<S> mat2d() const { return mat(shape_.at(0), shape_.at(1)); }

  bool all_finite() const {
    for (S v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  double squared_norm() const {
    double acc = 0;
    for (S v : data_) acc += static_cast<double>(v) * static_cast<double>(v);
    return acc;
  }

  static int64_t count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), int64_t{1},
                           [](int64_t a, int64_t b) { return a * b; });
  }

 private:
  Shape shape_;
  std::vector<S> data_;
};

template <class S, class T>
Tensor<T> cast(const Tensor<S>& x) {
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = static_cast<T>(x[i]);
  return out;
}

}  // namespace upesv
