// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "srt/error.hpp"

namespace srt {

// Dense row-major tensor (last axis fastest). The scalar type S selects the
// precision mode: float for production runs, double for verification runs.
// Every kernel below is pure and uses a fixed summation order, so identical
// inputs give bitwise-identical outputs within one build configuration.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), S(0)) {}

  Tensor(std::vector<std::size_t> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw DimError("tensor: data size " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<S> data() { return data_; }
  std::span<const S> data() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  // 2-D accessors; most model kernels view tensors as matrices.
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? (shape_.empty() ? 0 : 1) : shape_[1]; }
  S& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const S& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
  }

  static std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<S> data_;
};

namespace detail {

// Debug-build guard: kernels must not manufacture NaN/Inf from finite inputs.
template <typename S>
inline void check_finite(const Tensor<S>& t) {
#ifndef NDEBUG
  for (S v : t.data()) assert(std::isfinite(static_cast<double>(v)));
#else
  (void)t;
#endif
}

}  // namespace detail

// C = A * B for 2-D tensors. i-k-j loop order: contiguous writes, and the
// k-sum for every output entry still runs left to right (deterministic).
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimError("matmul: need 2-D operands, got " + Tensor<S>::shape_str(a.shape()) + " x " +
                   Tensor<S>::shape_str(b.shape()));
  }
  if (a.shape()[1] != b.shape()[0]) {
    throw DimError("matmul: inner extents differ: " + Tensor<S>::shape_str(a.shape()) + " x " +
                   Tensor<S>::shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<S> c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const S aik = a.at(i, kk);
      const S* brow = &b.at(kk, 0);
      S* crow = &c.at(i, 0);
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  detail::check_finite(c);
  return c;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> y = x;
  for (S& v : y.data()) v = v > S(0) ? v : S(0);
  return y;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Tensor<S> y = x;
  for (S& v : y.data()) v = S(1) / (S(1) + std::exp(-v));
  detail::check_finite(y);
  return y;
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  Tensor<S> y = x;
  for (S& v : y.data()) v = std::tanh(v);
  detail::check_finite(y);
  return y;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) {
    throw DimError("add: shapes differ: " + Tensor<S>::shape_str(a.shape()) + " vs " +
                   Tensor<S>::shape_str(b.shape()));
  }
  Tensor<S> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

// The one allowed broadcast: add a bias vector to every row of a matrix.
template <typename S>
Tensor<S> add_row_bias(const Tensor<S>& m, const Tensor<S>& bias) {
  if (m.rank() != 2 || bias.rank() != 1 || m.shape()[1] != bias.shape()[0]) {
    throw DimError("add_row_bias: incompatible shapes " + Tensor<S>::shape_str(m.shape()) +
                   " + " + Tensor<S>::shape_str(bias.shape()));
  }
  Tensor<S> c = m;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) c.at(i, j) += bias[j];
  return c;
}

}  // namespace srt
