// SPDX-License-Identifier: Apache-2.0
#include "splitveil/attack.hpp"

#include <cmath>
#include <stdexcept>

#include "splitveil/export.hpp"
#include "splitveil/losses.hpp"
#include "splitveil/optimizer.hpp"
#include "splitveil/rng.hpp"

namespace splitveil {

namespace {

SequentialModel build_decoder(const DeployedDefense& defense, const AttackConfig& config) {
  const std::vector<int64_t> z_shape = defense.smashed_shape();
  const std::vector<int64_t> image_shape{3, defense.image_height, defense.image_width};
  std::vector<LayerSpec> layers = config.decoder;
  if (layers.empty()) layers = default_decoder_spec(z_shape, image_shape);

  std::vector<int64_t> shape = z_shape;
  shape.insert(shape.begin(), 1);
  std::vector<std::string> names;
  ModelParams params;
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string name = "decoder" + std::to_string(i);
    names.push_back(name);
    Rng rng(derive_seed(config.seed, "attack.init.layer", static_cast<uint64_t>(i)));
    LayerParams p = init_layer_params(layers[i], shape, rng);
    shape = layer_output_shape(layers[i], shape, name);
    if (layers[i].has_params()) {
      params.tensors[name + ".weight"] = std::move(p.weight);
      params.tensors[name + ".bias"] = std::move(p.bias);
    }
  }
  const std::vector<int64_t> want{1, 3, defense.image_height, defense.image_width};
  if (shape != want) {
    throw std::invalid_argument("decoder output shape " + shape_to_string(shape) +
                                " does not match the reconstruction target " + shape_to_string(want));
  }
  return SequentialModel(std::move(layers), std::move(names), std::move(params));
}

std::vector<std::vector<int64_t>> make_batches(int64_t n, int64_t batch_size, Rng& rng) {
  std::vector<int64_t> order = rng.permutation(n);
  std::vector<std::vector<int64_t>> batches;
  for (int64_t begin = 0; begin < n; begin += batch_size) {
    const int64_t end = std::min(n, begin + batch_size);
    batches.emplace_back(order.begin() + begin, order.begin() + end);
  }
  return batches;
}

}  // namespace

SequentialModel train_inverse_network(const DeployedDefense& defense, const std::vector<Sample>& aux,
                                      const AttackConfig& config, double* train_mse_final) {
  if (aux.empty()) throw std::invalid_argument("train_inverse_network: empty auxiliary split");
  if (config.epochs < 1 || config.batch_size < 1) {
    throw std::invalid_argument("train_inverse_network: epochs and batch_size must be positive");
  }
  SequentialModel decoder = build_decoder(defense, config);

  AdamConfig adam_config;
  adam_config.lr = config.lr;
  adam_config.weight_decay = config.weight_decay;
  AdamState adam(adam_config);

  Rng shuffle_rng(derive_seed(config.seed, "attack.shuffle"));
  const int64_t n = static_cast<int64_t>(aux.size());
  double last_epoch_mse = 0.0;
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::vector<int64_t>> batches = make_batches(n, config.batch_size, shuffle_rng);
    double sum_loss = 0.0;
    for (size_t step = 0; step < batches.size(); ++step) {
      Batch batch = stack_batch(aux, batches[step]);
      const uint64_t step_tag = static_cast<uint64_t>(epoch) * 1000003ULL + step;
      // Fresh defense noise per step: the adversary sees new draws, never the
      // victim's stream.
      Tensor z_tilde = smashed_for(defense, batch.images, derive_seed(config.seed, "attack.noise", step_tag));

      Graph g;
      ValueId z_in = g.leaf(z_tilde, false, "attack_input");
      std::vector<std::pair<std::string, ValueId>> param_ids;
      ValueId recon = decoder.forward_graph(g, z_in, true, &param_ids);
      ValueId loss = g.mse_to_const(recon, batch.images);
      const double loss_value = g.value(loss).data[0];
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error("attack training diverged at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step));
      }
      sum_loss += loss_value;

      std::vector<ValueId> ids;
      for (const auto& [name, id] : param_ids) ids.push_back(id);
      std::vector<Tensor> grads = g.gradients(loss, ids);
      size_t slot = 0;
      for (const auto& [name, id] : param_ids) {
        adam.step_param(name, decoder.params().tensors[name], grads[slot]);
        ++slot;
      }
      adam.advance();
    }
    last_epoch_mse = sum_loss / static_cast<double>(batches.size());
  }
  if (train_mse_final) *train_mse_final = last_epoch_mse;
  return decoder;
}

AttackReport run_attack(const SequentialModel& decoder, const DeployedDefense& defense,
                        const std::vector<Sample>& victim_test, uint64_t noise_seed,
                        const std::string& grid_png_path) {
  if (victim_test.empty()) throw std::invalid_argument("run_attack: empty victim set");
  AttackReport report;
  report.seed = noise_seed;
  const int64_t n = static_cast<int64_t>(victim_test.size());
  const int64_t chunk = 64;
  std::vector<Tensor> grid_raw, grid_recon;
  const int64_t grid_cols = std::min<int64_t>(8, n);
  for (int64_t begin = 0, batch_idx = 0; begin < n; begin += chunk, ++batch_idx) {
    const int64_t end = std::min(n, begin + chunk);
    std::vector<int64_t> idx(static_cast<size_t>(end - begin));
    for (int64_t i = begin; i < end; ++i) idx[static_cast<size_t>(i - begin)] = i;
    Batch batch = stack_batch(victim_test, idx);
    Tensor z_tilde = smashed_for(defense, batch.images, derive_seed(noise_seed, "attack.eval.noise",
                                                                    static_cast<uint64_t>(batch_idx)));
    Tensor recon = decoder.forward(z_tilde);
    const int64_t per = batch.images.numel() / (end - begin);
    for (int64_t i = 0; i < end - begin; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < per; ++j) {
        const double d = recon.data[static_cast<size_t>(i * per + j)] -
                         batch.images.data[static_cast<size_t>(i * per + j)];
        s += d * d;
      }
      report.per_image_mse.push_back(s / static_cast<double>(per));
      if (static_cast<int64_t>(grid_raw.size()) < grid_cols) {
        std::vector<int64_t> img_shape(batch.images.shape.begin() + 1, batch.images.shape.end());
        Tensor raw(img_shape, std::vector<double>(batch.images.data.begin() + i * per,
                                                  batch.images.data.begin() + (i + 1) * per));
        Tensor rec(img_shape, std::vector<double>(recon.data.begin() + i * per, recon.data.begin() + (i + 1) * per));
        grid_raw.push_back(std::move(raw));
        grid_recon.push_back(std::move(rec));
      }
    }
  }
  double sum = 0.0;
  for (double v : report.per_image_mse) sum += v;
  report.mean_mse = sum / static_cast<double>(report.per_image_mse.size());
  if (!grid_png_path.empty()) {
    write_image_grid_png(grid_png_path, {grid_raw, grid_recon});
    report.grid_png = grid_png_path;
  }
  return report;
}

}  // namespace splitveil
