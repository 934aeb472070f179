// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "splitveil/attack.hpp"
#include "splitveil/defense.hpp"

namespace splitveil {

// Minimal TOML subset: [section] headers, key = value lines, # comments.
// Values are strings, numbers, booleans or flat arrays of those.
struct ConfigValue {
  enum class Kind { kString, kNumber, kBool, kArray };
  Kind kind = Kind::kString;
  std::string str;
  double num = 0.0;
  bool boolean = false;
  std::vector<ConfigValue> array;

  static ConfigValue of_string(std::string s);
  static ConfigValue of_number(double v);
  static ConfigValue of_bool(bool b);
  static ConfigValue of_numbers(const std::vector<double>& vs);
  static ConfigValue of_strings(const std::vector<std::string>& vs);
};

// Keys are flattened "section.key" paths.
using ConfigTable = std::map<std::string, ConfigValue>;

ConfigTable parse_toml(const std::string& text);
ConfigTable parse_toml_file(const std::string& path);
std::string serialize_toml(const ConfigTable& table);

// Per-defense sweep grids; the cartesian product of the non-empty axes forms
// the cells.
struct SweepGrid {
  std::vector<int64_t> retained;
  std::vector<double> lambda;
  std::vector<double> fsinfo;
  std::vector<double> dfil;
  std::vector<double> nopeek_alpha;
  std::vector<double> shredder_coeff;
};

struct RunConfig {
  TrainConfig train;
  AttackConfig attack;
  std::string out_dir = "runs";

  std::vector<DefenseKind> sweep_defenses;
  std::vector<uint64_t> sweep_seeds;
  std::map<std::string, SweepGrid> sweep_grids;
  int sweep_jobs = 1;

  std::string bind_host = "127.0.0.1";
  uint16_t port = 7701;
  std::string server_host = "127.0.0.1";
};

// Builds the structured config, rejecting unknown keys by full path.
RunConfig config_from_table(const ConfigTable& table);

// Full echo: every field that affects results, serialized deterministically.
ConfigTable table_from_config(const RunConfig& config);

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& config, const std::string& path);

}  // namespace splitveil
