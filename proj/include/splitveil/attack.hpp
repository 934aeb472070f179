// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splitveil/defense.hpp"

namespace splitveil {

struct AttackConfig {
  int64_t epochs = 40;
  int64_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  uint64_t seed = 1;
  // Empty = transposed-convolution decoder derived from the smashed-data and
  // image shapes.
  std::vector<LayerSpec> decoder;
};

struct AttackReport {
  double mean_mse = 0.0;
  std::vector<double> per_image_mse;
  double train_mse_final = 0.0;  // mean reconstruction loss over the last training epoch
  uint64_t seed = 0;
  std::string grid_png;
};

// Trains the inverse network on auxiliary pairs (x, z-tilde), drawing fresh
// defense noise every step. The attacker works from a copy of the client
// pipeline and never touches the victim's parameters.
SequentialModel train_inverse_network(const DeployedDefense& defense, const std::vector<Sample>& aux,
                                      const AttackConfig& config, double* train_mse_final = nullptr);

// Reconstructs every victim test input from freshly perturbed smashed data
// and reports image-space MSE; optionally exports a raw-vs-reconstruction
// grid PNG.
AttackReport run_attack(const SequentialModel& decoder, const DeployedDefense& defense,
                        const std::vector<Sample>& victim_test, uint64_t noise_seed,
                        const std::string& grid_png_path = "");

}  // namespace splitveil
