/**
 * Copyright 2026 The DSG Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dsg/error.hpp"

namespace dsg {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major n-d array, batch-first. Storage is an Eigen column array so
/// whole-tensor arithmetic can be written as Eigen expressions on `array()`.
template <typename Scalar_>
class BasicTensor {
 public:
  using Scalar = Scalar_;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape) : shape_(std::move(shape)) {
    check_shape();
    data_ = Array::Zero(shape_size(shape_));
  }

  BasicTensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_)) {
      throw_invalid("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                    shape_string(shape_));
    }
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values)
      : BasicTensor(std::move(shape), Array(Eigen::Map<const Array>(values.begin(), Index(values.size())))) {}

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  static BasicTensor constant(Shape shape, Scalar value) {
    BasicTensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static BasicTensor from_vector(Shape shape, const std::vector<Scalar>& values) {
    return BasicTensor(std::move(shape), Eigen::Map<const Array>(values.data(), Index(values.size())));
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return Index(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(std::size_t(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Element of a rank-4 [B,C,H,W] tensor.
  Scalar& at(Index b, Index c, Index h, Index w) {
    return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar at(Index b, Index c, Index h, Index w) const {
    return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  /// Element of a rank-2 tensor.
  Scalar& at(Index r, Index c) { return data_[r * shape_[1] + c]; }
  Scalar at(Index r, Index c) const { return data_[r * shape_[1] + c]; }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw_invalid("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  /// Rows [begin, end) along the leading axis.
  BasicTensor slice_batch(Index begin, Index end) const {
    if (rank() < 1 || begin < 0 || end > shape_[0] || begin > end) throw_invalid("slice_batch out of range");
    const Index row = size() / std::max<Index>(shape_[0], 1);
    Shape s = shape_;
    s[0] = end - begin;
    return BasicTensor(std::move(s), data_.segment(begin * row, (end - begin) * row));
  }

  bool all_finite() const { return data_.isFinite().all(); }

  /// Bit-exact equality of shape and contents.
  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    if (a.shape_ != b.shape_) return false;
    for (Index i = 0; i < a.size(); ++i) {
      if (a.data_[i] != b.data_[i]) return false;
    }
    return true;
  }

 private:
  void check_shape() const {
    for (Index d : shape_) {
      if (d <= 0) throw_invalid("tensor extents must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  Array data_;
};

using Tensor = BasicTensor<double>;

/// Concatenate along the leading axis; trailing extents must agree.
template <typename Scalar>
BasicTensor<Scalar> concat_batch(const std::vector<BasicTensor<Scalar>>& parts) {
  if (parts.empty()) throw_invalid("concat_batch of nothing");
  Shape s = parts.front().shape();
  Index total = 0, len = 0;
  for (const auto& p : parts) {
    if (p.rank() != Index(s.size()) || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1)) {
      throw_invalid("concat_batch trailing shape mismatch");
    }
    total += p.dim(0);
    len += p.size();
  }
  s[0] = total;
  typename BasicTensor<Scalar>::Array data(len);
  Index at = 0;
  for (const auto& p : parts) {
    data.segment(at, p.size()) = p.array();
    at += p.size();
  }
  return BasicTensor<Scalar>(std::move(s), std::move(data));
}

/// Throws kNumerical when `t` holds a NaN or Inf. `where` names the producer.
template <typename Scalar>
void require_finite(const BasicTensor<Scalar>& t, const char* where) {
  if (!t.all_finite()) throw_numerical(std::string(where) + ": non-finite value in output");
}

}  // namespace dsg
