// SPDX-License-Identifier: Apache-2.0
#include "splitveil/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace splitveil {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimension must be positive, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("tensor shape " + shape_to_string(shape) + " does not match buffer of " +
                                std::to_string(data.size()) + " elements");
  }
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
  int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::from_vector(std::vector<double> values) {
  int64_t n = static_cast<int64_t>(values.size());
  return Tensor({n}, std::move(values));
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {
int64_t flat_index(const std::vector<int64_t>& shape, std::initializer_list<int64_t> idx) {
  if (idx.size() != shape.size()) {
    throw std::invalid_argument("index rank " + std::to_string(idx.size()) + " does not match tensor rank " +
                                std::to_string(shape.size()));
  }
  int64_t flat = 0;
  size_t axis = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= shape[axis]) {
      throw std::out_of_range("index " + std::to_string(i) + " out of range for axis " + std::to_string(axis) +
                              " with extent " + std::to_string(shape[axis]));
    }
    flat = flat * shape[axis] + i;
    ++axis;
  }
  return flat;
}
}  // namespace

double& Tensor::at(std::initializer_list<int64_t> idx) { return data[static_cast<size_t>(flat_index(shape, idx))]; }

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return data[static_cast<size_t>(flat_index(shape, idx))];
}

Tensor Tensor::reshaped(std::vector<int64_t> new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw std::invalid_argument("cannot reshape " + shape_to_string(shape) + " to " + shape_to_string(new_shape));
  }
  Tensor out;
  out.shape = std::move(new_shape);
  out.data = data;
  return out;
}

void check_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(what + ": shape mismatch between " + shape_to_string(a.shape) + " and " +
                                shape_to_string(b.shape));
  }
}

}  // namespace splitveil
