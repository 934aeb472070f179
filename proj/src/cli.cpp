// SPDX-License-Identifier: Apache-2.0
#include "splitveil/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "splitveil/attack.hpp"
#include "splitveil/config.hpp"
#include "splitveil/defense.hpp"
#include "splitveil/export.hpp"
#include "splitveil/protocol.hpp"

namespace splitveil {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- report plumbing -------------------------------------------------------

json table_to_json(const ConfigTable& table) {
  json root = json::object();
  for (const auto& [key, value] : table) {
    json* node = &root;
    std::string rest = key;
    size_t dot;
    while ((dot = rest.find('.')) != std::string::npos) {
      node = &(*node)[rest.substr(0, dot)];
      rest = rest.substr(dot + 1);
    }
    json leaf;
    switch (value.kind) {
      case ConfigValue::Kind::kString: leaf = value.str; break;
      case ConfigValue::Kind::kBool: leaf = value.boolean; break;
      case ConfigValue::Kind::kNumber: leaf = value.num; break;
      case ConfigValue::Kind::kArray: {
        leaf = json::array();
        for (const auto& v : value.array) {
          if (v.kind == ConfigValue::Kind::kString) leaf.push_back(v.str);
          else if (v.kind == ConfigValue::Kind::kBool) leaf.push_back(v.boolean);
          else leaf.push_back(v.num);
        }
        break;
      }
    }
    (*node)[rest] = std::move(leaf);
  }
  return root;
}

// The echo recorded next to results: everything that affects them. The output
// directory does not, and pinning it would break bit-exact re-runs, so it is
// dropped.
ConfigTable echo_table(const RunConfig& config) {
  ConfigTable t = table_from_config(config);
  t.erase("run.out_dir");
  return t;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

json train_results_json(const TrainReport& report) {
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"loss_ce", e.loss_ce},
                      {"loss_cl", e.loss_cl},
                      {"loss_total", e.loss_total},
                      {"sigma", e.sigma},
                      {"degenerate_rank", e.degenerate_rank}});
  }
  return json{{"accuracy", report.accuracy},
              {"final_sigma", report.final_sigma},
              {"seed", report.seed},
              {"epochs", std::move(epochs)}};
}

void write_train_artifacts(const fs::path& dir, const RunConfig& config, const TrainOutcome& outcome) {
  fs::create_directories(dir);
  save_run_config_echo(config, dir);

  json report{{"config", table_to_json(echo_table(config))},
              {"results", train_results_json(outcome.report)},
              {"timing", {{"wall_seconds", outcome.report.wall_seconds}}}};
  write_text(dir / "report.json", report.dump(2) + "\n");

  std::ostringstream jsonl;
  for (const auto& e : outcome.report.epochs) {
    jsonl << json{{"epoch", e.epoch},
                  {"loss_ce", e.loss_ce},
                  {"loss_cl", e.loss_cl},
                  {"loss_total", e.loss_total},
                  {"sigma", e.sigma}}
                 .dump()
          << "\n";
  }
  write_text(dir / "epochs.jsonl", jsonl.str());

  if (outcome.deployed.kind == DefenseKind::kInfodecom || outcome.deployed.kind == DefenseKind::kDfilDef ||
      outcome.deployed.kind == DefenseKind::kFsinfoGuard) {
    std::vector<std::vector<std::string>> rows;
    const std::string kind = outcome.deployed.kind == DefenseKind::kDfilDef ? "dfil" : "fsinfo";
    const double target = outcome.deployed.kind == DefenseKind::kDfilDef ? config.train.dfil : config.train.fsinfo;
    for (const auto& e : outcome.report.epochs) {
      rows.push_back({std::to_string(e.epoch), kind, format_double(target), format_double(e.sigma),
                      e.degenerate_rank ? "1" : "0"});
    }
    write_csv((dir / "calibration.csv").string(), {"epoch", "budget_kind", "target", "sigma", "rank_warning"}, rows);
  }

  save_params(outcome.deployed.model.bottom.params(), (dir / "bottom.svpm").string());
  save_params(outcome.deployed.model.top.params(), (dir / "top.svpm").string());
  if (outcome.deployed.shredder_delta.numel() > 0) {
    ModelParams delta;
    delta.tensors["delta"] = outcome.deployed.shredder_delta;
    save_params(delta, (dir / "shredder_delta.svpm").string());
  }
}

void save_run_config_echo(const RunConfig& config, const fs::path& dir);

// ---- run loading -----------------------------------------------------------

struct LoadedRun {
  RunConfig config;
  DeployedDefense deployed;
};

double read_final_sigma(const fs::path& dir) {
  std::ifstream f(dir / "report.json");
  if (!f) throw std::runtime_error("run directory " + dir.string() + " has no report.json");
  json report = json::parse(f);
  return report.at("results").at("final_sigma").get<double>();
}

LoadedRun load_run(const std::string& run_dir) {
  const fs::path dir(run_dir);
  LoadedRun run;
  run.config = load_run_config((dir / "resolved_config.toml").string());
  const TrainConfig& tc = run.config.train;

  DeployedDefense& deployed = run.deployed;
  deployed.kind = tc.defense;
  deployed.frequency_input = tc.uses_frequency_input();
  deployed.num_classes = tc.dataset == "cifar10" ? 10 : tc.num_classes;
  deployed.image_height = tc.dataset == "cifar10" ? 32 : tc.image_dim;
  deployed.image_width = deployed.image_height;
  if (deployed.frequency_input) deployed.retained = default_retained_set(static_cast<int>(tc.retained));

  std::vector<int64_t> input_shape =
      deployed.frequency_input
          ? std::vector<int64_t>{3 * tc.retained, deployed.image_height / 8, deployed.image_width / 8}
          : std::vector<int64_t>{3, deployed.image_height, deployed.image_width};
  SplitModelSpec spec = default_split_spec(input_shape, deployed.num_classes, deployed.frequency_input,
                                           tc.bottom_channels, tc.top_channels);
  deployed.model = build_split_model(spec, derive_seed(tc.seed, "init.model"));

  ModelParams bottom = load_params((dir / "bottom.svpm").string());
  validate_params_for(deployed.model.bottom, bottom);
  deployed.model.bottom.params() = std::move(bottom);
  ModelParams top = load_params((dir / "top.svpm").string());
  validate_params_for(deployed.model.top, top);
  deployed.model.top.params() = std::move(top);

  deployed.sigma = read_final_sigma(dir);
  if (fs::exists(dir / "shredder_delta.svpm")) {
    ModelParams delta = load_params((dir / "shredder_delta.svpm").string());
    deployed.shredder_delta = delta.tensors.at("delta");
  }
  return run;
}

void save_run_config_echo(const RunConfig& config, const fs::path& dir) {
  write_text(dir / "resolved_config.toml", serialize_toml(echo_table(config)));
}

// ---- sweep -----------------------------------------------------------------

struct SweepCell {
  TrainConfig train;
  std::string label;  // hyperparameter tuple for the CSV
};

std::vector<SweepCell> expand_grid(const RunConfig& config, DefenseKind kind) {
  auto it = config.sweep_grids.find(defense_kind_name(kind));
  SweepGrid grid;
  if (it != config.sweep_grids.end()) grid = it->second;
  auto or_default = [](std::vector<double> v, double d) { return v.empty() ? std::vector<double>{d} : v; };
  std::vector<int64_t> retained =
      grid.retained.empty() ? std::vector<int64_t>{config.train.retained} : grid.retained;
  std::vector<double> lambda = or_default(grid.lambda, config.train.lambda);
  std::vector<double> fsinfo = or_default(grid.fsinfo, config.train.fsinfo);
  std::vector<double> dfil = or_default(grid.dfil, config.train.dfil);
  std::vector<double> alpha = or_default(grid.nopeek_alpha, config.train.nopeek_alpha);
  std::vector<double> coeff = or_default(grid.shredder_coeff, config.train.shredder_coeff);

  // Only the axes a defense actually reads vary; the rest stay at base values.
  switch (kind) {
    case DefenseKind::kNone:
      retained = {config.train.retained};
      [[fallthrough]];
    case DefenseKind::kNopeek:
      lambda = {config.train.lambda};
      fsinfo = {config.train.fsinfo};
      dfil = {config.train.dfil};
      coeff = {config.train.shredder_coeff};
      if (kind == DefenseKind::kNone) alpha = {config.train.nopeek_alpha};
      retained = {config.train.retained};
      break;
    case DefenseKind::kShredder:
      lambda = {config.train.lambda};
      fsinfo = {config.train.fsinfo};
      dfil = {config.train.dfil};
      alpha = {config.train.nopeek_alpha};
      retained = {config.train.retained};
      break;
    case DefenseKind::kDfilDef:
      lambda = {config.train.lambda};
      fsinfo = {config.train.fsinfo};
      alpha = {config.train.nopeek_alpha};
      coeff = {config.train.shredder_coeff};
      retained = {config.train.retained};
      break;
    case DefenseKind::kFsinfoGuard:
      lambda = {config.train.lambda};
      dfil = {config.train.dfil};
      alpha = {config.train.nopeek_alpha};
      coeff = {config.train.shredder_coeff};
      retained = {config.train.retained};
      break;
    case DefenseKind::kInfodecom:
      dfil = {config.train.dfil};
      alpha = {config.train.nopeek_alpha};
      coeff = {config.train.shredder_coeff};
      break;
  }

  std::vector<SweepCell> cells;
  for (int64_t r : retained) {
    for (double l : lambda) {
      for (double f : fsinfo) {
        for (double d : dfil) {
          for (double a : alpha) {
            for (double s : coeff) {
              SweepCell cell;
              cell.train = config.train;
              cell.train.defense = kind;
              cell.train.input_mode = "auto";
              cell.train.retained = r;
              cell.train.lambda = l;
              cell.train.fsinfo = f;
              cell.train.dfil = d;
              cell.train.nopeek_alpha = a;
              cell.train.shredder_coeff = s;
              cells.push_back(std::move(cell));
            }
          }
        }
      }
    }
  }
  return cells;
}

struct CellResult {
  std::string defense;
  TrainConfig train;
  uint64_t seed = 0;
  double sigma = 0.0;
  double accuracy = 0.0;
  double attack_mse = 0.0;
  bool ok = false;
  std::string error;
};

CellResult run_cell(const TrainConfig& base, const AttackConfig& attack_base, uint64_t seed) {
  CellResult result;
  result.defense = defense_kind_name(base.defense);
  result.train = base;
  result.seed = seed;
  try {
    TrainConfig tc = base;
    tc.seed = seed;
    DatasetSplit data = build_dataset(tc);
    TrainOutcome outcome = train_defense(tc, data);
    AttackConfig ac = attack_base;
    ac.seed = derive_seed(seed, "sweep.attack");
    SequentialModel decoder = train_inverse_network(outcome.deployed, data.aux, ac);
    AttackReport attack = run_attack(decoder, outcome.deployed, data.test, derive_seed(seed, "sweep.attack.eval"));
    result.sigma = outcome.report.final_sigma;
    result.accuracy = outcome.report.accuracy;
    result.attack_mse = attack.mean_mse;
    result.ok = true;
  } catch (const std::exception& e) {
    result.ok = false;
    result.error = e.what();
  }
  return result;
}

// ---- subcommand bodies -----------------------------------------------------

fs::path resolve_out_dir(const std::string& flag_value, const RunConfig& config) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("SPLITVEIL_OUT_DIR")) {
    if (*env) return env;
  }
  return config.out_dir;
}

int cmd_train(const RunConfig& config, const std::string& out_dir_flag) {
  const fs::path dir = resolve_out_dir(out_dir_flag, config);
  DatasetSplit data = build_dataset(config.train);
  TrainOutcome outcome = train_defense(config.train, data);
  write_train_artifacts(dir, config, outcome);
  std::cout << "defense " << defense_kind_name(config.train.defense) << " accuracy "
            << format_double(outcome.report.accuracy) << " sigma " << format_double(outcome.report.final_sigma)
            << " report " << (dir / "report.json").string() << "\n";
  return 0;
}

int cmd_attack(const std::string& run_dir, const RunConfig& overrides, bool have_config,
               const std::string& out_dir_flag) {
  const auto t_start = std::chrono::steady_clock::now();
  LoadedRun run = load_run(run_dir);
  RunConfig config = run.config;
  if (have_config) config.attack = overrides.attack;

  DatasetSplit data = build_dataset(config.train);
  const uint64_t victim_fp_before =
      params_fingerprint(run.deployed.model.bottom.params()) ^ params_fingerprint(run.deployed.model.top.params());

  double train_mse_final = 0.0;
  SequentialModel decoder = train_inverse_network(run.deployed, data.aux, config.attack, &train_mse_final);

  const fs::path dir = out_dir_flag.empty() ? fs::path(run_dir) / "attack" : fs::path(out_dir_flag);
  fs::create_directories(dir);
  AttackReport report = run_attack(decoder, run.deployed, data.test, derive_seed(config.attack.seed, "attack.report"),
                                   (dir / "grid.png").string());
  report.train_mse_final = train_mse_final;

  const uint64_t victim_fp_after =
      params_fingerprint(run.deployed.model.bottom.params()) ^ params_fingerprint(run.deployed.model.top.params());
  if (victim_fp_before != victim_fp_after) {
    throw std::logic_error("attack mutated the defense parameters");
  }

  save_run_config_echo(config, dir);
  ModelParams decoder_params = decoder.params();
  save_params(decoder_params, (dir / "decoder.svpm").string());
  json out{{"config", table_to_json(echo_table(config))},
           {"results",
            {{"mean_mse", report.mean_mse},
             {"per_image_mse", report.per_image_mse},
             {"train_mse_final", report.train_mse_final},
             {"seed", config.attack.seed},
             {"grid_png", "grid.png"}}},
           {"timing",
            {{"wall_seconds", std::chrono::duration_cast<std::chrono::duration<double>>(
                                  std::chrono::steady_clock::now() - t_start)
                                  .count()}}}};
  write_text(dir / "attack_report.json", out.dump(2) + "\n");
  std::cout << "attack mean_mse " << format_double(report.mean_mse) << " report "
            << (dir / "attack_report.json").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& run_dir, uint64_t seed_override, bool have_seed) {
  LoadedRun run = load_run(run_dir);
  DatasetSplit data = build_dataset(run.config.train);
  const uint64_t seed = have_seed ? seed_override : derive_seed(run.config.train.seed, "eval.utility");
  const double acc = evaluate_utility(run.deployed, data.test, seed);
  std::cout << "accuracy " << format_double(acc) << "\n";
  return 0;
}

int cmd_calibrate(const std::string& run_dir, std::optional<double> fsinfo, std::optional<double> dfil,
                  int64_t samples) {
  if (fsinfo.has_value() == dfil.has_value()) {
    throw std::runtime_error("calibrate needs exactly one of --fsinfo or --dfil");
  }
  PrivacyBudget budget = fsinfo ? PrivacyBudget{BudgetKind::kFsinfo, *fsinfo} : PrivacyBudget{BudgetKind::kDfil, *dfil};
  NoiseScale scale;
  if (run_dir.empty()) {
    // Identity probe: the bottom pipeline passes its input through, J = I.
    Tensor probe = Tensor::zeros({1, 4});
    PipelineForward identity = [](Graph& g, ValueId x) { return g.scale(x, 1.0); };
    scale = calibrate(identity, {probe}, budget);
  } else {
    LoadedRun run = load_run(run_dir);
    DatasetSplit data = build_dataset(run.config.train);
    const int64_t n = std::min<int64_t>(std::max<int64_t>(samples, 1), static_cast<int64_t>(data.train.size()));
    std::vector<Tensor> calib;
    for (int64_t i = 0; i < n; ++i) {
      Batch b = stack_batch(data.train, {i});
      calib.push_back(bottom_input_for(run.deployed, b.images));
    }
    PipelineForward bottom = [&run](Graph& g, ValueId x) {
      return run.deployed.model.bottom.forward_graph(g, x, false);
    };
    scale = calibrate(bottom, calib, budget, -1, run.config.train.jacobian_threads);
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", scale.sigma);
  std::cout << "sigma " << buf << "\n";
  std::cout << "epoch,budget_kind,target,sigma,rank_warning\n";
  std::cout << scale.epoch << "," << budget_kind_name(budget.kind) << "," << format_double(budget.target) << ","
            << format_double(scale.sigma) << "," << (scale.degenerate_rank ? "1" : "0") << "\n";
  return 0;
}

std::pair<std::string, uint16_t> split_host_port(const std::string& addr, uint16_t fallback_port) {
  const size_t colon = addr.rfind(':');
  if (colon == std::string::npos) return {addr, fallback_port};
  return {addr.substr(0, colon), static_cast<uint16_t>(std::stoi(addr.substr(colon + 1)))};
}

int cmd_serve(const std::string& run_dir, const std::string& bind) {
  LoadedRun run = load_run(run_dir);
  auto [host, port] = split_host_port(bind, run.config.port);
  InferenceServer server(run.deployed.model.top, run.deployed.num_classes);
  server.start(host, port);
  std::cout << "listening on " << host << ":" << server.port() << "\n" << std::flush;
  // Serves until the process is terminated.
  while (true) std::this_thread::sleep_for(std::chrono::seconds(3600));
  return 0;
}

int cmd_infer(const std::string& run_dir, const std::string& server, int64_t index, uint64_t noise_seed) {
  LoadedRun run = load_run(run_dir);
  DatasetSplit data = build_dataset(run.config.train);
  if (index < 0 || index >= static_cast<int64_t>(data.test.size())) {
    throw std::runtime_error("sample index " + std::to_string(index) + " outside the test split of " +
                             std::to_string(data.test.size()));
  }
  auto [host, port] = split_host_port(server, run.config.port);
  InferResult result = client_infer(run.deployed, data.test[static_cast<size_t>(index)].image, host, port, noise_seed);
  std::cout << "label " << result.label << " (true " << data.test[static_cast<size_t>(index)].label << ") logits";
  for (double v : result.logits) std::cout << " " << format_double(v);
  std::cout << "\n";
  return 0;
}

int cmd_sweep(const RunConfig& config, const std::string& out_dir_flag, int jobs_flag) {
  const fs::path dir = resolve_out_dir(out_dir_flag, config);
  fs::create_directories(dir);
  save_run_config_echo(config, dir);

  std::vector<DefenseKind> defenses = config.sweep_defenses;
  if (defenses.empty()) defenses = {config.train.defense};
  std::vector<uint64_t> seeds = config.sweep_seeds;
  if (seeds.empty()) seeds = {config.train.seed};

  struct Pending {
    TrainConfig train;
    uint64_t seed;
  };
  std::vector<Pending> pending;
  for (DefenseKind kind : defenses) {
    for (const SweepCell& cell : expand_grid(config, kind)) {
      for (uint64_t seed : seeds) pending.push_back({cell.train, seed});
    }
  }
  if (pending.empty()) throw std::runtime_error("sweep grid is empty");

  const int jobs = std::max(1, jobs_flag > 0 ? jobs_flag : config.sweep_jobs);
  std::vector<CellResult> results(pending.size());
  for (size_t begin = 0; begin < pending.size(); begin += static_cast<size_t>(jobs)) {
    const size_t end = std::min(pending.size(), begin + static_cast<size_t>(jobs));
    std::vector<std::future<CellResult>> futures;
    for (size_t i = begin; i < end; ++i) {
      futures.push_back(std::async(std::launch::async, run_cell, pending[i].train, config.attack, pending[i].seed));
    }
    for (size_t i = begin; i < end; ++i) {
      results[i] = futures[i - begin].get();
      const CellResult& r = results[i];
      std::cout << "cell " << (i + 1) << "/" << pending.size() << " " << r.defense << " seed " << r.seed << " "
                << (r.ok ? "accuracy " + format_double(r.accuracy) + " mse " + format_double(r.attack_mse)
                         : "FAILED: " + r.error)
                << "\n"
                << std::flush;
    }
  }

  std::vector<std::vector<std::string>> rows;
  std::vector<ScatterPoint> points;
  for (const CellResult& r : results) {
    rows.push_back({r.defense, std::to_string(r.train.retained), format_double(r.train.lambda),
                    format_double(r.train.fsinfo), format_double(r.train.dfil), format_double(r.train.nopeek_alpha),
                    format_double(r.train.shredder_coeff), std::to_string(r.seed),
                    r.ok ? format_double(r.sigma) : "", r.ok ? format_double(r.accuracy) : "",
                    r.ok ? format_double(r.attack_mse) : "", r.ok ? "ok" : "failed", r.error});
    if (r.ok) points.push_back({r.attack_mse, r.accuracy, r.defense});
  }
  write_csv((dir / "sweep.csv").string(),
            {"defense", "retained", "lambda", "fsinfo", "dfil", "nopeek_alpha", "shredder_coeff", "seed", "sigma",
             "accuracy", "attack_mse", "status", "error"},
            rows);
  write_scatter_svg((dir / "sweep.svg").string(), points, "MSE", "Accuracy", "Utility-privacy trade-off");
  std::cout << "sweep complete: " << rows.size() << " cells, table " << (dir / "sweep.csv").string() << "\n";
  return 0;
}

int cmd_ablation(const RunConfig& config, const std::string& out_dir_flag) {
  const fs::path dir = resolve_out_dir(out_dir_flag, config);
  fs::create_directories(dir);
  RunConfig base = config;
  base.train.defense = DefenseKind::kInfodecom;
  base.train.input_mode = "auto";

  struct Variant {
    std::string name;
    TrainConfig train;
  };
  std::vector<Variant> variants;
  variants.push_back({"full", base.train});
  {
    TrainConfig v = base.train;
    v.retained = 64;
    variants.push_back({"no_visual_removal", v});
  }
  {
    TrainConfig v = base.train;
    v.lambda = 0.0;
    variants.push_back({"no_clustering_loss", v});
  }
  {
    TrainConfig v = base.train;
    v.force_sigma_zero = true;
    variants.push_back({"no_calibrated_noise", v});
  }

  std::vector<std::vector<std::string>> rows;
  for (const Variant& variant : variants) {
    CellResult r = run_cell(variant.train, config.attack, variant.train.seed);
    rows.push_back({variant.name, r.ok ? format_double(r.accuracy) : "", r.ok ? format_double(r.attack_mse) : "",
                    r.ok ? format_double(r.sigma) : "", r.ok ? "ok" : "failed", r.error});
    std::cout << variant.name << " " << (r.ok ? "accuracy " + format_double(r.accuracy) + " mse " +
                                                    format_double(r.attack_mse) + " sigma " + format_double(r.sigma)
                                              : "FAILED: " + r.error)
              << "\n";
  }
  write_csv((dir / "ablation.csv").string(), {"variant", "accuracy", "attack_mse", "sigma", "status", "error"}, rows);
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"split-inference privacy toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, run_dir, bind = "", server = "127.0.0.1:7701";
  bool have_seed = false, have_defense = false, have_lambda = false, have_retained = false, have_fsinfo = false,
       have_dfil = false;
  uint64_t seed = 0;
  std::string defense_name;
  double lambda_flag = 0.0, fsinfo_flag = 0.0, dfil_flag = 0.0;
  int64_t retained_flag = 0, index = 0, calib_count = 8;
  int jobs = 0;
  uint64_t infer_noise_seed = 7;
  std::optional<double> calib_fsinfo, calib_dfil;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", config_path, "TOML configuration file");
    if (needs_config) opt->required();
    cmd->add_option("--seed", seed, "run seed")->each([&](const std::string&) { have_seed = true; });
    cmd->add_option("--out-dir", out_dir, "output directory (default: $SPLITVEIL_OUT_DIR or config)");
  };

  CLI::App* train = app.add_subcommand("train", "train a defense and write its run directory");
  add_common(train, true);
  train->add_option("--defense", defense_name, "defense kind")->each([&](const std::string&) { have_defense = true; });
  train->add_option("--lambda", lambda_flag, "clustering loss weight")
      ->each([&](const std::string&) { have_lambda = true; });
  train->add_option("--retained", retained_flag, "retained coefficient count |X_h|")
      ->each([&](const std::string&) { have_retained = true; });
  train->add_option("--fsinfo", fsinfo_flag, "FSInfo budget")->each([&](const std::string&) { have_fsinfo = true; });
  train->add_option("--dfil", dfil_flag, "dFIL budget")->each([&](const std::string&) { have_dfil = true; });

  CLI::App* attack = app.add_subcommand("attack", "train the inverse network against a saved run");
  attack->add_option("--run-dir", run_dir, "defense run directory")->required();
  add_common(attack, false);

  CLI::App* evalc = app.add_subcommand("eval", "evaluate utility of a saved run");
  evalc->add_option("--run-dir", run_dir, "defense run directory")->required();
  evalc->add_option("--seed", seed, "noise seed")->each([&](const std::string&) { have_seed = true; });

  CLI::App* calib = app.add_subcommand("calibrate", "closed-form noise scale for a budget");
  calib->add_option("--run-dir", run_dir, "defense run directory (identity probe when omitted)");
  calib->add_option("--fsinfo", [&calib_fsinfo](const std::vector<std::string>& vals) {
    calib_fsinfo = std::stod(vals[0]);
    return true;
  }, "FSInfo budget");
  calib->add_option("--dfil", [&calib_dfil](const std::vector<std::string>& vals) {
    calib_dfil = std::stod(vals[0]);
    return true;
  }, "dFIL budget");
  calib->add_option("--count", calib_count, "calibration sample count");

  CLI::App* serve = app.add_subcommand("serve", "run the top-model inference server");
  serve->add_option("--run-dir", run_dir, "defense run directory")->required();
  serve->add_option("--bind", bind, "host:port to bind");

  CLI::App* infer = app.add_subcommand("infer", "client-side inference against a server");
  infer->add_option("--run-dir", run_dir, "defense run directory")->required();
  infer->add_option("--server", server, "server host:port");
  infer->add_option("--index", index, "test sample index");
  infer->add_option("--noise-seed", infer_noise_seed, "perturbation seed");

  CLI::App* sweep = app.add_subcommand("sweep", "run a hyperparameter grid and emit the trade-off table");
  add_common(sweep, true);
  sweep->add_option("--jobs", jobs, "parallel cells");

  CLI::App* ablation = app.add_subcommand("ablation", "run the four-variant component ablation");
  add_common(ablation, true);

  std::vector<const char*> argv;
  argv.push_back("splitveil");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      return app.exit(e);
    }
    app.exit(e);
    return 2;
  }

  try {
    RunConfig config;
    const bool config_loaded = !config_path.empty();
    if (config_loaded) config = load_run_config(config_path);
    if (have_seed) {
      config.train.seed = seed;
      config.attack.seed = seed;
    }
    if (have_defense) {
      auto kind = defense_kind_from_name(defense_name);
      if (!kind) throw std::runtime_error("unknown defense '" + defense_name + "'");
      config.train.defense = *kind;
    }
    if (have_lambda) config.train.lambda = lambda_flag;
    if (have_retained) config.train.retained = retained_flag;
    if (have_fsinfo) config.train.fsinfo = fsinfo_flag;
    if (have_dfil) config.train.dfil = dfil_flag;

    if (train->parsed()) return cmd_train(config, out_dir);
    if (attack->parsed()) return cmd_attack(run_dir, config, config_loaded, out_dir);
    if (evalc->parsed()) return cmd_eval(run_dir, seed, have_seed);
    if (calib->parsed()) return cmd_calibrate(run_dir, calib_fsinfo, calib_dfil, calib_count);
    if (serve->parsed()) return cmd_serve(run_dir, bind.empty() ? "127.0.0.1:7701" : bind);
    if (infer->parsed()) return cmd_infer(run_dir, server, index, infer_noise_seed);
    if (sweep->parsed()) return cmd_sweep(config, out_dir, jobs);
    if (ablation->parsed()) return cmd_ablation(config, out_dir);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args);
}

}  // namespace splitveil
