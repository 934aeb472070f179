// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "splitveil/calibration.hpp"
#include "splitveil/datasets.hpp"
#include "splitveil/models.hpp"

namespace splitveil {

enum class DefenseKind { kNone, kInfodecom, kNopeek, kShredder, kDfilDef, kFsinfoGuard };

std::string defense_kind_name(DefenseKind kind);
std::optional<DefenseKind> defense_kind_from_name(const std::string& name);

struct TrainConfig {
  DefenseKind defense = DefenseKind::kInfodecom;

  // Dataset.
  std::string dataset = "synthetic";  // "synthetic" | "cifar10"
  std::string cifar_dir;
  int64_t synthetic_n = 1200;
  int64_t num_classes = 4;
  int64_t image_dim = 8;
  int64_t max_train = 10000;  // cifar10 subset caps
  int64_t max_test = 2000;

  // Frequency front. InfoDecom always decomposes; baselines run on the raw
  // image unless input_mode overrides (used to compare degenerate
  // configurations on an identical representation).
  int64_t retained = 54;
  std::string input_mode = "auto";  // "auto" | "frequency" | "image"

  // Defense hyperparameters.
  double lambda = 10.0;
  double fsinfo = -1.0;
  double dfil = 0.5;
  double nopeek_alpha = 0.7;
  double shredder_coeff = 1.0;
  bool force_sigma_zero = false;  // ablation: w/o calibrated noise

  // Optimization.
  int64_t epochs = 30;
  int64_t batch_size = 64;
  double lr = 3e-4;
  double weight_decay = 0.01;
  int64_t calib_samples = 8;
  int jacobian_threads = 1;
  uint64_t seed = 1;

  // Model.
  int64_t bottom_channels = 0;  // 0 = per-front default
  int64_t top_channels = 64;

  bool uses_frequency_input() const;
  bool uses_calibrated_noise() const;  // infodecom / dfil_def / fsinfo_guard
  PrivacyBudget budget() const;
};

struct EpochStats {
  int64_t epoch = 0;
  double loss_ce = 0.0;
  double loss_cl = 0.0;
  double loss_total = 0.0;
  double sigma = 0.0;
  bool degenerate_rank = false;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double accuracy = 0.0;
  double final_sigma = 0.0;
  double wall_seconds = 0.0;
  uint64_t seed = 0;
};

// Everything the client owns after training: the frequency mask, the split
// model, the frozen noise scale and (for Shredder) the learned noise tensor.
struct DeployedDefense {
  DefenseKind kind = DefenseKind::kNone;
  bool frequency_input = false;
  std::vector<int> retained;
  SplitModel model;
  double sigma = 0.0;
  Tensor shredder_delta;  // numel 0 unless kind == kShredder
  int64_t num_classes = 0;
  int64_t image_height = 0;
  int64_t image_width = 0;

  std::vector<int64_t> bottom_input_shape() const;  // per sample, no batch
  std::vector<int64_t> smashed_shape() const;       // per sample, no batch
};

struct TrainOutcome {
  DeployedDefense deployed;
  TrainReport report;
};

// Builds the dataset named by the config (synthetic or CIFAR-10 subset).
DatasetSplit build_dataset(const TrainConfig& config);

// Trains the configured defense end to end. Dispatches to the InfoDecom
// two-loss pipeline or a baseline recipe; aborts with epoch/step context if
// the loss diverges.
TrainOutcome train_defense(const TrainConfig& config, const DatasetSplit& data);

// Client-side representation: decomposes to coefficient channels or passes
// the image through, matching the deployed pipeline.
Tensor bottom_input_for(const DeployedDefense& defense, const Tensor& image_batch);

// Full client pipeline: bottom input -> bottom model -> perturbation
// (calibrated Gaussian noise or Shredder's fixed delta).
Tensor smashed_for(const DeployedDefense& defense, const Tensor& image_batch, uint64_t noise_seed);

// Top-1 accuracy of the deployed pipeline over a test set; noise is drawn
// fresh per batch from streams derived from noise_seed.
double evaluate_utility(const DeployedDefense& defense, const std::vector<Sample>& test_set, uint64_t noise_seed);

}  // namespace splitveil
