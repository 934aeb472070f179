// SPDX-License-Identifier: Apache-2.0
#include "splitveil/defense.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "splitveil/frequency.hpp"
#include "splitveil/losses.hpp"
#include "splitveil/optimizer.hpp"
#include "splitveil/rng.hpp"

namespace splitveil {

std::string defense_kind_name(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::kNone: return "none";
    case DefenseKind::kInfodecom: return "infodecom";
    case DefenseKind::kNopeek: return "nopeek";
    case DefenseKind::kShredder: return "shredder";
    case DefenseKind::kDfilDef: return "dfil_def";
    case DefenseKind::kFsinfoGuard: return "fsinfo_guard";
  }
  return "?";
}

std::optional<DefenseKind> defense_kind_from_name(const std::string& name) {
  for (DefenseKind k : {DefenseKind::kNone, DefenseKind::kInfodecom, DefenseKind::kNopeek, DefenseKind::kShredder,
                        DefenseKind::kDfilDef, DefenseKind::kFsinfoGuard}) {
    if (defense_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

bool TrainConfig::uses_frequency_input() const {
  if (input_mode == "frequency") return true;
  if (input_mode == "image") {
    if (defense == DefenseKind::kInfodecom) {
      throw std::invalid_argument("infodecom requires the frequency input pipeline");
    }
    return false;
  }
  if (input_mode != "auto") throw std::invalid_argument("unknown input_mode '" + input_mode + "'");
  return defense == DefenseKind::kInfodecom;
}

bool TrainConfig::uses_calibrated_noise() const {
  return defense == DefenseKind::kInfodecom || defense == DefenseKind::kDfilDef ||
         defense == DefenseKind::kFsinfoGuard;
}

PrivacyBudget TrainConfig::budget() const {
  if (defense == DefenseKind::kDfilDef) return {BudgetKind::kDfil, dfil};
  return {BudgetKind::kFsinfo, fsinfo};
}

std::vector<int64_t> DeployedDefense::bottom_input_shape() const { return model.spec.input_shape; }

std::vector<int64_t> DeployedDefense::smashed_shape() const {
  std::vector<int64_t> shape = model.spec.input_shape;
  shape.insert(shape.begin(), 1);
  shape = model.bottom.output_shape(shape);
  return {shape.begin() + 1, shape.end()};
}

DatasetSplit build_dataset(const TrainConfig& config) {
  if (config.dataset == "synthetic") {
    return synthetic_shapes(config.synthetic_n, config.num_classes, config.image_dim, config.seed);
  }
  if (config.dataset == "cifar10") {
    Cifar10Options options;
    options.max_train = config.max_train;
    options.max_test = config.max_test;
    options.seed = config.seed;
    return load_cifar10(config.cifar_dir, options);
  }
  throw std::invalid_argument("unknown dataset '" + config.dataset + "' (expected synthetic or cifar10)");
}

Tensor bottom_input_for(const DeployedDefense& defense, const Tensor& image_batch) {
  if (!defense.frequency_input) return image_batch;
  return decompose_batch(image_batch, defense.retained);
}

Tensor smashed_for(const DeployedDefense& defense, const Tensor& image_batch, uint64_t noise_seed) {
  Tensor z = defense.model.bottom.forward(bottom_input_for(defense, image_batch));
  if (defense.kind == DefenseKind::kShredder && defense.shredder_delta.numel() > 0) {
    const int64_t n = z.shape[0];
    const int64_t stride = defense.shredder_delta.numel();
    for (int64_t r = 0; r < n; ++r) {
      for (int64_t i = 0; i < stride; ++i) {
        z.data[static_cast<size_t>(r * stride + i)] += defense.shredder_delta.data[static_cast<size_t>(i)];
      }
    }
    return z;
  }
  return perturb(z, defense.sigma, noise_seed);
}

double evaluate_utility(const DeployedDefense& defense, const std::vector<Sample>& test_set, uint64_t noise_seed) {
  if (test_set.empty()) throw std::invalid_argument("evaluate_utility: empty test set");
  const int64_t n = static_cast<int64_t>(test_set.size());
  const int64_t chunk = 128;
  int64_t correct = 0;
  for (int64_t begin = 0, batch_idx = 0; begin < n; begin += chunk, ++batch_idx) {
    const int64_t end = std::min(n, begin + chunk);
    std::vector<int64_t> idx(static_cast<size_t>(end - begin));
    for (int64_t i = begin; i < end; ++i) idx[static_cast<size_t>(i - begin)] = i;
    Batch batch = stack_batch(test_set, idx);
    Tensor z = smashed_for(defense, batch.images, derive_seed(noise_seed, "eval.noise", static_cast<uint64_t>(batch_idx)));
    Tensor logits = defense.model.top.forward(z);
    const int64_t k = logits.shape[1];
    for (int64_t i = 0; i < end - begin; ++i) {
      const double* row = logits.data.data() + i * k;
      int64_t arg = 0;
      for (int64_t c = 1; c < k; ++c) {
        if (row[c] > row[arg]) arg = c;
      }
      if (arg == batch.labels[static_cast<size_t>(i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

namespace {

struct ParamRef {
  std::string name;
  ValueId id = -1;
  bool bottom = false;
};

std::vector<std::vector<int64_t>> make_batches(int64_t n, int64_t batch_size, Rng& rng) {
  std::vector<int64_t> order = rng.permutation(n);
  std::vector<std::vector<int64_t>> batches;
  for (int64_t begin = 0; begin < n; begin += batch_size) {
    const int64_t end = std::min(n, begin + batch_size);
    if (end - begin < 2) break;  // losses over pairs need at least 2 samples
    batches.emplace_back(order.begin() + begin, order.begin() + end);
  }
  return batches;
}

Tensor gaussian_like(const std::vector<int64_t>& shape, double sigma, uint64_t seed) {
  Tensor noise = Tensor::zeros(shape);
  if (sigma > 0.0) {
    Rng rng(seed);
    for (double& v : noise.data) v = rng.gaussian(0.0, sigma);
  }
  return noise;
}

}  // namespace

TrainOutcome train_defense(const TrainConfig& config, const DatasetSplit& data) {
  const auto t_start = std::chrono::steady_clock::now();
  if (config.epochs < 1 || config.batch_size < 2) {
    throw std::invalid_argument("train_defense: epochs must be >= 1 and batch_size >= 2");
  }
  if (data.train.size() < 2) throw std::invalid_argument("train_defense: need at least 2 training samples");

  const bool frequency = config.uses_frequency_input();

  DeployedDefense deployed;
  deployed.kind = config.defense;
  deployed.frequency_input = frequency;
  deployed.num_classes = data.num_classes;
  deployed.image_height = data.height;
  deployed.image_width = data.width;
  if (frequency) deployed.retained = default_retained_set(static_cast<int>(config.retained));

  std::vector<int64_t> input_shape;
  if (frequency) {
    input_shape = {3 * config.retained, data.height / 8, data.width / 8};
  } else {
    input_shape = {3, data.height, data.width};
  }
  SplitModelSpec spec = default_split_spec(input_shape, data.num_classes, frequency, config.bottom_channels,
                                           config.top_channels);
  deployed.model = build_split_model(spec, derive_seed(config.seed, "init.model"));

  // Shredder's learnable additive noise on the smashed data.
  const bool is_shredder = config.defense == DefenseKind::kShredder;
  Tensor delta;
  if (is_shredder) delta = Tensor::zeros(deployed.smashed_shape());

  AdamConfig adam_config;
  adam_config.lr = config.lr;
  adam_config.weight_decay = config.weight_decay;
  AdamState adam(adam_config);

  TrainReport report;
  report.seed = config.seed;

  const int64_t n_train = static_cast<int64_t>(data.train.size());
  Rng shuffle_rng(derive_seed(config.seed, "train.shuffle"));

  // Calibration inputs: the first samples of the train split, pushed through
  // the current frequency front.
  std::vector<Tensor> calib_inputs;
  if (config.uses_calibrated_noise() && !config.force_sigma_zero) {
    const int64_t n_calib = std::min<int64_t>(std::max<int64_t>(1, config.calib_samples), n_train);
    for (int64_t i = 0; i < n_calib; ++i) {
      std::vector<int64_t> one{i};
      Batch b = stack_batch(data.train, one);
      calib_inputs.push_back(bottom_input_for(deployed, b.images));
    }
  }

  double sigma_epoch = 0.0;
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;

    // Closed-form noise calibration against the frozen pipeline of this
    // moment, once per epoch before its batches.
    if (!calib_inputs.empty()) {
      PipelineForward bottom_fwd = [&deployed](Graph& g, ValueId x) {
        return deployed.model.bottom.forward_graph(g, x, false);
      };
      NoiseScale scale = calibrate(bottom_fwd, calib_inputs, config.budget(), epoch, config.jacobian_threads);
      sigma_epoch = scale.sigma;
      stats.sigma = scale.sigma;
      stats.degenerate_rank = scale.degenerate_rank;
    }

    std::vector<std::vector<int64_t>> batches = make_batches(n_train, config.batch_size, shuffle_rng);
    if (batches.empty()) throw std::invalid_argument("train_defense: batch size exceeds the training set");

    double sum_ce = 0.0, sum_cl = 0.0, sum_total = 0.0;
    for (size_t step = 0; step < batches.size(); ++step) {
      Batch batch = stack_batch(data.train, batches[step]);
      const int64_t bn = static_cast<int64_t>(batches[step].size());
      const uint64_t step_tag = static_cast<uint64_t>(epoch) * 1000003ULL + step;

      Graph g;
      ValueId x_in = g.leaf(bottom_input_for(deployed, batch.images), false, "bottom_input");
      std::vector<std::pair<std::string, ValueId>> bottom_ids, top_ids;
      ValueId z = deployed.model.bottom.forward_graph(g, x_in, true, &bottom_ids);

      ValueId delta_id = -1;
      ValueId z_tilde = z;
      if (is_shredder) {
        delta_id = g.leaf(delta, true, "shredder_delta");
        z_tilde = g.add_rowwise(z, delta_id);
      } else if (sigma_epoch > 0.0) {
        z_tilde = g.add_constant(
            z, gaussian_like(g.value(z).shape, sigma_epoch, derive_seed(config.seed, "train.noise", step_tag)));
      }

      ValueId logits = deployed.model.top.forward_graph(g, z_tilde, true, &top_ids);
      ValueId l_ce = cross_entropy_loss(g, logits, batch.labels);

      // The clustering regularizer acts on the unperturbed smashed data.
      ValueId l_cl = -1;
      if (config.defense == DefenseKind::kInfodecom && config.lambda != 0.0) {
        l_cl = clustering_loss(g, z, clustering_pairing(bn, derive_seed(config.seed, "train.lcl_perm", step_tag)));
      }

      ValueId objective = l_ce;
      if (config.defense == DefenseKind::kNopeek && config.nopeek_alpha != 0.0) {
        ValueId dcor = distance_correlation(g, batch.images, z);
        objective = g.add(l_ce, g.scale(dcor, config.nopeek_alpha));
      } else if (is_shredder && config.shredder_coeff != 0.0) {
        objective = g.sub(l_ce, g.scale(noise_norm_penalty(g, delta_id), config.shredder_coeff));
      }

      const double ce_value = g.value(l_ce).data[0];
      const double cl_value = l_cl >= 0 ? g.value(l_cl).data[0] : 0.0;
      const double total_value =
          g.value(objective).data[0] + (l_cl >= 0 ? config.lambda * cl_value : 0.0);
      if (!std::isfinite(total_value)) {
        throw std::runtime_error("training diverged (non-finite loss) at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step));
      }
      sum_ce += ce_value;
      sum_cl += cl_value;
      sum_total += total_value;

      // Gradients: the top model sees only the task objective; the bottom
      // model additionally receives lambda * dL_cl.
      std::vector<ValueId> all_ids;
      for (const auto& [name, id] : bottom_ids) all_ids.push_back(id);
      for (const auto& [name, id] : top_ids) all_ids.push_back(id);
      if (delta_id >= 0) all_ids.push_back(delta_id);
      std::vector<Tensor> task_grads = g.gradients(objective, all_ids);

      std::vector<Tensor> cl_grads;
      if (l_cl >= 0) {
        std::vector<ValueId> bottom_only;
        for (const auto& [name, id] : bottom_ids) bottom_only.push_back(id);
        cl_grads = g.gradients(l_cl, bottom_only);
      }

      size_t slot = 0;
      for (const auto& [name, id] : bottom_ids) {
        Tensor grad = std::move(task_grads[slot]);
        if (!cl_grads.empty()) {
          const Tensor& extra = cl_grads[slot];
          for (size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += config.lambda * extra.data[i];
        }
        if (!grad.all_finite()) {
          throw std::runtime_error("training diverged (non-finite gradient for " + name + ") at epoch " +
                                   std::to_string(epoch) + " step " + std::to_string(step));
        }
        adam.step_param(name, deployed.model.bottom.params().tensors[name], grad);
        ++slot;
      }
      for (const auto& [name, id] : top_ids) {
        adam.step_param(name, deployed.model.top.params().tensors[name], task_grads[slot]);
        ++slot;
      }
      if (delta_id >= 0) {
        adam.step_param("shredder.delta", delta, task_grads[slot]);
        ++slot;
      }
      adam.advance();
    }

    stats.loss_ce = sum_ce / static_cast<double>(batches.size());
    stats.loss_cl = sum_cl / static_cast<double>(batches.size());
    stats.loss_total = sum_total / static_cast<double>(batches.size());
    report.epochs.push_back(stats);
  }

  // Deployment freezes the final epoch's noise scale.
  deployed.sigma = config.force_sigma_zero ? 0.0 : (calib_inputs.empty() ? 0.0 : sigma_epoch);
  if (is_shredder) deployed.shredder_delta = std::move(delta);
  report.final_sigma = deployed.sigma;
  report.accuracy = data.test.empty()
                        ? 0.0
                        : evaluate_utility(deployed, data.test, derive_seed(config.seed, "eval.utility"));
  report.wall_seconds =
      std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() - t_start).count();
  return {std::move(deployed), std::move(report)};
}

}  // namespace splitveil
