// Copyright (c) 2026 The dsprobe Authors
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
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsprobe/error.hpp"

namespace dsprobe {

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 4;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major array. Rank 0 is a scalar holding one element.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : shape_{0} {}

  explicit BasicTensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(numel(shape_), fill) {
    check_rank();
  }

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank();
    if (data_.size() != numel(shape_)) {
      throw ShapeError("tensor: shape " + shape_str(shape_) + " needs " +
                       std::to_string(numel(shape_)) + " values, got " +
                       std::to_string(data_.size()));
    }
  }

  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Scalar value of a one-element tensor.
  T item() const {
    if (data_.size() != 1) {
      throw ShapeError("item: tensor " + shape_str(shape_) + " is not a scalar");
    }
    return data_[0];
  }

  BasicTensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size()) {
      throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  /// Contiguous slice along the leading axis, [begin, end).
  BasicTensor rows(std::size_t begin, std::size_t end) const {
    if (rank() == 0 || begin > end || end > shape_[0]) {
      throw ShapeError("rows: range out of bounds for " + shape_str(shape_));
    }
    const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
    Shape s = shape_;
    s[0] = end - begin;
    return BasicTensor(std::move(s),
                       std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                      data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
  }

  /// Gathers the given leading-axis rows in order.
  BasicTensor gather_rows(std::span<const std::size_t> index) const {
    if (rank() == 0) throw ShapeError("gather_rows: scalar tensor");
    const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
    Shape s = shape_;
    s[0] = index.size();
    std::vector<T> out(index.size() * stride);
    for (std::size_t r = 0; r < index.size(); ++r) {
      if (index[r] >= shape_[0]) throw ShapeError("gather_rows: index out of range");
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(index[r] * stride), stride,
                  out.begin() + static_cast<std::ptrdiff_t>(r * stride));
    }
    return BasicTensor(std::move(s), std::move(out));
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>) {
      return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    } else {
      return true;
    }
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_rank() const {
    if (shape_.size() > kMaxRank) {
      throw ShapeError("tensor: rank " + std::to_string(shape_.size()) + " exceeds " +
                       std::to_string(kMaxRank));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;
using LabelTensor = BasicTensor<std::uint32_t>;

}  // namespace dsprobe
