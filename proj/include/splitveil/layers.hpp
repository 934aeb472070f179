// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "splitveil/autodiff.hpp"
#include "splitveil/rng.hpp"
#include "splitveil/tensor.hpp"

namespace splitveil {

enum class LayerKind { kConv2d, kConvTranspose2d, kLinear, kRelu, kAvgPool2d, kSigmoidOutput };

std::string layer_kind_name(LayerKind kind);
std::optional<LayerKind> layer_kind_from_name(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  int64_t in_channels = 0;   // conv / conv_transpose
  int64_t out_channels = 0;  // conv / conv_transpose
  int64_t kernel = 0;
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t pool_window = 0;  // avg_pool2d
  int64_t in_features = 0;  // linear; 0 = inferred from the incoming shape
  int64_t out_features = 0;

  static LayerSpec conv2d(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride = 1, int64_t padding = 0);
  static LayerSpec conv_transpose2d(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride = 1,
                                    int64_t padding = 0);
  static LayerSpec linear(int64_t out_features, int64_t in_features = 0);
  static LayerSpec relu();
  static LayerSpec avg_pool2d(int64_t window);
  static LayerSpec sigmoid_output();

  bool has_params() const;
  std::string describe() const;
};

// Per-layer trainable tensors; empty for parameter-free kinds.
struct LayerParams {
  Tensor weight;
  Tensor bias;
};

// Output shape of a layer on a batched input [N, ...]; throws with the layer
// name and both shapes on mismatch.
std::vector<int64_t> layer_output_shape(const LayerSpec& spec, const std::vector<int64_t>& input_shape,
                                        const std::string& layer_name = "");

// Shapes of the trainable tensors given the incoming activation shape (the
// linear layer infers its fan-in from it).
struct LayerParamShapes {
  std::vector<int64_t> weight;
  std::vector<int64_t> bias;
};
LayerParamShapes layer_param_shapes(const LayerSpec& spec, const std::vector<int64_t>& input_shape);

// Kaiming-uniform fan-in initialization; parameter-free layers return empty
// params.
LayerParams init_layer_params(const LayerSpec& spec, const std::vector<int64_t>& input_shape, Rng& rng);

// Records the layer on the graph. Parameter ids are ignored for
// parameter-free kinds (pass -1).
ValueId apply_layer(Graph& g, const LayerSpec& spec, ValueId x, ValueId weight, ValueId bias);

// Pure forward (no gradient tracking). Validates shapes the same way the
// graph path does.
Tensor layer_forward(const LayerSpec& spec, const Tensor& input, const LayerParams& params);

}  // namespace splitveil
