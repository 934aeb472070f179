// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splitveil/tensor.hpp"

namespace splitveil {

using ValueId = int32_t;

struct ConvAttrs {
  int64_t stride = 1;
  int64_t padding = 0;
};

// Define-by-run reverse-mode tape. A Graph is built per forward pass and
// discarded afterwards; nodes store their forward values so the reverse walk
// never recomputes. backward() accumulates gradients on the tape, vjp() runs
// a read-only reverse pass with caller-owned buffers and is safe to call from
// several threads on one tape (Jacobian rows).
class Graph {
 public:
  ValueId leaf(Tensor value, bool requires_grad, std::string label = "");

  const Tensor& value(ValueId id) const;
  bool requires_grad(ValueId id) const;

  ValueId add(ValueId a, ValueId b);
  ValueId sub(ValueId a, ValueId b);
  ValueId mul(ValueId a, ValueId b);
  ValueId div(ValueId a, ValueId b);
  ValueId scale(ValueId a, double factor);
  // Adds a tensor that is not part of the graph (e.g. a drawn noise sample);
  // gradients pass through unchanged.
  ValueId add_constant(ValueId a, Tensor offset);
  // [N, d...] + [d...] with the row broadcast over the batch axis.
  ValueId add_rowwise(ValueId batch, ValueId row);
  ValueId relu(ValueId a);
  // 2*sigmoid(x) - 1, bounded to (-1, 1) to match normalized image range.
  ValueId sigmoid_output(ValueId a);
  ValueId sqrt_floor(ValueId a, double floor);
  ValueId reshape(ValueId a, std::vector<int64_t> new_shape);
  ValueId sum(ValueId a);
  ValueId mean(ValueId a);
  ValueId mean_abs(ValueId a);
  ValueId gather_rows(ValueId a, std::vector<int64_t> rows);
  // [N, d] -> [N, N] matrix of pairwise Euclidean distances.
  ValueId pairwise_distance(ValueId a);
  // Subtracts row means, column means and adds the grand mean of an [N, N]
  // matrix (the centering step of distance correlation).
  ValueId double_center(ValueId a);

  ValueId conv2d(ValueId x, ValueId w, ValueId b, ConvAttrs attrs);
  ValueId conv_transpose2d(ValueId x, ValueId w, ValueId b, ConvAttrs attrs);
  ValueId linear(ValueId x, ValueId w, ValueId b);
  ValueId avg_pool2d(ValueId x, int64_t window);

  // Mean over the batch of -log softmax(logits)[label], stabilized by
  // max-subtraction.
  ValueId softmax_cross_entropy(ValueId logits, std::vector<int64_t> labels);
  ValueId mse_to_const(ValueId a, Tensor target);

  // Reverse pass from a scalar loss; rejects non-scalar losses and aborts on
  // the first non-finite gradient, naming the offending node.
  void backward(ValueId loss);
  bool has_grad(ValueId id) const;
  const Tensor& grad(ValueId id) const;

  // Gradient of <seed, value(output)> w.r.t. wrt. Read-only; thread-safe.
  Tensor vjp(ValueId output, const Tensor& seed, ValueId wrt) const;

  // One reverse pass from a scalar root; returns the gradient for each listed
  // value (zeros when the root does not reach it). Read-only on the tape.
  std::vector<Tensor> gradients(ValueId root, const std::vector<ValueId>& wrt) const;

  size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    kLeaf,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kScale,
    kAddConst,
    kAddRow,
    kRelu,
    kSigmoidOut,
    kSqrtFloor,
    kReshape,
    kSum,
    kMean,
    kMeanAbs,
    kGatherRows,
    kPairwiseDist,
    kDoubleCenter,
    kConv2d,
    kConvTranspose2d,
    kLinear,
    kAvgPool2d,
    kSoftmaxCE,
    kMseToConst,
  };

  struct Node {
    Op op = Op::kLeaf;
    ValueId a = -1, b = -1, c = -1;
    Tensor value;
    bool requires_grad = false;
    ConvAttrs conv;
    int64_t window = 0;
    double scalar = 0.0;
    std::vector<int64_t> indices;
    Tensor aux;
    std::string label;
  };

  ValueId push(Node node);
  const Node& node(ValueId id) const;
  void check_id(ValueId id) const;
  // Accumulates input gradients of `n` given its output gradient.
  void propagate(const Node& n, const Tensor& gout, std::vector<Tensor>& grads) const;
  void reverse_from(ValueId root, const Tensor& seed, std::vector<Tensor>& grads) const;
  static void accumulate(Tensor& slot, const std::vector<int64_t>& shape, const std::vector<double>& contrib);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

}  // namespace splitveil
