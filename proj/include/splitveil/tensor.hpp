// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace splitveil {

// Dense row-major tensor of 64-bit floats. All model math in this project is
// double precision; the wire format narrows to f32 at the protocol boundary
// only.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int64_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor from_vector(std::vector<double> values);

  int64_t numel() const;
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;

  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  // Reinterprets the buffer under a new shape with identical element count.
  Tensor reshaped(std::vector<int64_t> new_shape) const;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

// Throws std::invalid_argument naming `what` plus both shapes when they
// differ.
void check_same_shape(const Tensor& a, const Tensor& b, const std::string& what);

}  // namespace splitveil
