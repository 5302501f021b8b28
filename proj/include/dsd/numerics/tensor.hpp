// Copyright 2026 The dsd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dsd/errors.hpp"

namespace dsd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of f64 values. A rank-0 tensor holds one scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, v); }

  /// Builds a rows x cols matrix from nested initializer lists.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> data;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  /// Row count of a matrix view: rank-1 tensors read as a single row.
  std::size_t rows() const noexcept {
    return rank() >= 2 ? shape_[0] : 1;
  }
  std::size_t cols() const noexcept {
    if (rank() == 0) return 1;
    return rank() == 1 ? shape_[0] : size() / shape_[0];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  double item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  bool all_finite() const noexcept {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_)
      if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dsd
