// Copyright (c) 2026, the desklm authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor templated on scalar, with Eigen map views.

#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "desklm/common.hpp"

namespace desklm {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

template <typename S>
struct Tensor {
  using Scalar = S;
  using MatrixMap =
      Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap =
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using VectorMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
  using ConstVectorMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

  Shape shape;
  std::vector<S> data;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, S fill = S(0))
      : shape(std::move(s)), data(static_cast<std::size_t>(numel_of(shape)), fill) {}
  Tensor(Shape s, std::vector<S> values) : shape(std::move(s)), data(std::move(values)) {
    if (numel_of(shape) != static_cast<std::int64_t>(data.size())) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
  }

  static Tensor scalar(S v) { return Tensor({1}, std::vector<S>{v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t ndim() const { return static_cast<std::int64_t>(shape.size()); }
  std::int64_t dim(std::int64_t i) const { return shape[static_cast<std::size_t>(i)]; }

  // 2-D accessors; a 1-D tensor is viewed as a single row.
  std::int64_t rows() const { return shape.size() >= 2 ? shape[0] : 1; }
  std::int64_t cols() const {
    if (shape.empty()) return 0;
    return shape.size() >= 2 ? shape[1] : shape[0];
  }

  S& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
  S at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * cols() + c)];
  }
  S& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  S operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  MatrixMap mat() { return MatrixMap(data.data(), rows(), cols()); }
  ConstMatrixMap mat() const { return ConstMatrixMap(data.data(), rows(), cols()); }
  VectorMap vec() { return VectorMap(data.data(), numel()); }
  ConstVectorMap vec() const { return ConstVectorMap(data.data(), numel()); }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(S(0)); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool all_finite() const {
    for (S v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.requires_grad = requires_grad;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

// Seeded i.i.d. normal init.
template <typename S>
Tensor<S> randn(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<S> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<S>(rng.gaussian() * stddev);
  return t;
}

template <typename S>
std::uint64_t tensor_checksum(const Tensor<S>& t) {
  return checksum(t.data);
}

}  // namespace desklm
