// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "splitveil/layers.hpp"

namespace splitveil {

// Named parameter tensors, keyed "layer<i>.weight" / "layer<i>.bias" with the
// layer index taken over the full (unsplit) layer list.
struct ModelParams {
  std::map<std::string, Tensor> tensors;

  bool operator==(const ModelParams& other) const {
    if (tensors.size() != other.tensors.size()) return false;
    auto it = other.tensors.begin();
    for (const auto& [k, v] : tensors) {
      if (it->first != k || it->second.shape != v.shape || it->second.data != v.data) return false;
      ++it;
    }
    return true;
  }
};

// FNV-1a over names, shapes and raw values; used to assert that attacks never
// mutate defense parameters.
uint64_t params_fingerprint(const ModelParams& params);

struct SplitModelSpec {
  std::vector<LayerSpec> layers;
  // Number of layers on the client: layers [0, split_point) form the bottom
  // model. 1 <= split_point < layers.size().
  int64_t split_point = 1;
  // Shape of one input sample, e.g. {162, 4, 4} or {3, 32, 32}.
  std::vector<int64_t> input_shape;
};

// An executable stack of layers holding its own parameters.
class SequentialModel {
 public:
  SequentialModel() = default;
  SequentialModel(std::vector<LayerSpec> layers, std::vector<std::string> names, ModelParams params);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<std::string>& names() const { return names_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  std::vector<int64_t> output_shape(const std::vector<int64_t>& input_shape) const;

  // Pure forward on a [N, ...] batch.
  Tensor forward(const Tensor& input) const;

  // Records the forward pass on a graph. When train_params is set the
  // parameters are registered as gradient leaves and their (name, id) pairs
  // are appended to param_ids.
  ValueId forward_graph(Graph& g, ValueId x, bool train_params,
                        std::vector<std::pair<std::string, ValueId>>* param_ids = nullptr) const;

 private:
  std::vector<LayerSpec> layers_;
  std::vector<std::string> names_;  // "layer<i>", global indices
  ModelParams params_;
};

struct SplitModel {
  SequentialModel bottom;
  SequentialModel top;
  SplitModelSpec spec;
};

// Initializes parameters (Kaiming-uniform fan-in, seeded) and splits the
// layer stack at the split point, shape-checking the whole chain. A layer
// whose input does not match is rejected naming the layer and both shapes.
SplitModel build_split_model(const SplitModelSpec& spec, uint64_t seed);

// Reference split architectures. `frequency_input` selects the
// coefficient-tensor front (3*|X_h| channels at [H/8, W/8]) versus the raw
// image front (stride-2 convolution). The defaults keep the smashed data at
// least as wide as the bottom input so the calibration Jacobian has full
// column rank.
SplitModelSpec default_split_spec(const std::vector<int64_t>& input_shape, int64_t num_classes, bool frequency_input,
                                  int64_t bottom_channels = 0, int64_t top_channels = 64);

// Transposed-convolution decoder mapping smashed data [C, h, w] back to an
// image [3, H, W] in (-1, 1); requires H/h to be a power of two.
std::vector<LayerSpec> default_decoder_spec(const std::vector<int64_t>& z_shape,
                                            const std::vector<int64_t>& image_shape);

// Binary parameter persistence: magic "SVPM", version byte, tensor count,
// then per tensor name, rank, dims and little-endian f64 data. Round trips
// are bit-exact.
void save_params(const ModelParams& params, const std::string& path);
ModelParams load_params(const std::string& path);

// Rejects tensors whose shapes disagree with the model's own parameters.
void validate_params_for(const SequentialModel& model, const ModelParams& loaded);

}  // namespace splitveil
