// SPDX-License-Identifier: Apache-2.0
#include "splitveil/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "splitveil/export.hpp"

namespace splitveil {

ConfigValue ConfigValue::of_string(std::string s) {
  ConfigValue v;
  v.kind = Kind::kString;
  v.str = std::move(s);
  return v;
}

ConfigValue ConfigValue::of_number(double n) {
  ConfigValue v;
  v.kind = Kind::kNumber;
  v.num = n;
  return v;
}

ConfigValue ConfigValue::of_bool(bool b) {
  ConfigValue v;
  v.kind = Kind::kBool;
  v.boolean = b;
  return v;
}

ConfigValue ConfigValue::of_numbers(const std::vector<double>& vs) {
  ConfigValue v;
  v.kind = Kind::kArray;
  for (double x : vs) v.array.push_back(of_number(x));
  return v;
}

ConfigValue ConfigValue::of_strings(const std::vector<std::string>& vs) {
  ConfigValue v;
  v.kind = Kind::kArray;
  for (const auto& s : vs) v.array.push_back(of_string(s));
  return v;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void parse_fail(int line, const std::string& msg) {
  throw std::runtime_error("config parse error on line " + std::to_string(line) + ": " + msg);
}

ConfigValue parse_scalar(const std::string& token, int line) {
  if (token.empty()) parse_fail(line, "empty value");
  if (token.front() == '"') {
    if (token.size() < 2 || token.back() != '"') parse_fail(line, "unterminated string");
    std::string out;
    for (size_t i = 1; i + 1 < token.size(); ++i) {
      char c = token[i];
      if (c == '\\') {
        if (i + 2 >= token.size() + 0 && i + 1 >= token.size() - 1) parse_fail(line, "dangling escape");
        ++i;
        switch (token[i]) {
          case 'n': out.push_back('\n'); break;
          case 't': out.push_back('\t'); break;
          case '"': out.push_back('"'); break;
          case '\\': out.push_back('\\'); break;
          default: parse_fail(line, std::string("unknown escape \\") + token[i]);
        }
      } else {
        out.push_back(c);
      }
    }
    return ConfigValue::of_string(out);
  }
  if (token == "true") return ConfigValue::of_bool(true);
  if (token == "false") return ConfigValue::of_bool(false);
  try {
    size_t used = 0;
    const double v = std::stod(token, &used);
    if (used != token.size()) parse_fail(line, "trailing characters after number '" + token + "'");
    return ConfigValue::of_number(v);
  } catch (const std::invalid_argument&) {
    parse_fail(line, "cannot parse value '" + token + "'");
  } catch (const std::out_of_range&) {
    parse_fail(line, "number out of range '" + token + "'");
  }
}

// Splits an array body on commas at depth 0 (strings may contain commas).
std::vector<std::string> split_array_items(const std::string& body, int line) {
  std::vector<std::string> items;
  std::string cur;
  bool in_str = false;
  for (size_t i = 0; i < body.size(); ++i) {
    const char c = body[i];
    if (in_str) {
      cur.push_back(c);
      if (c == '\\' && i + 1 < body.size()) {
        cur.push_back(body[++i]);
      } else if (c == '"') {
        in_str = false;
      }
      continue;
    }
    if (c == '"') {
      in_str = true;
      cur.push_back(c);
    } else if (c == ',') {
      items.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (in_str) parse_fail(line, "unterminated string in array");
  const std::string last = trim(cur);
  if (!last.empty()) items.push_back(last);
  return items;
}

}  // namespace

ConfigTable parse_toml(const std::string& text) {
  ConfigTable table;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    // Strip comments outside strings.
    std::string line;
    bool in_str = false;
    for (size_t i = 0; i < raw.size(); ++i) {
      const char c = raw[i];
      if (c == '"' && (i == 0 || raw[i - 1] != '\\')) in_str = !in_str;
      if (c == '#' && !in_str) break;
      line.push_back(c);
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') parse_fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) parse_fail(line_no, "empty section name");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) parse_fail(line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) parse_fail(line_no, "empty key");
    const std::string full_key = section.empty() ? key : section + "." + key;
    if (table.count(full_key)) parse_fail(line_no, "duplicate key '" + full_key + "'");
    if (!value.empty() && value.front() == '[') {
      if (value.back() != ']') parse_fail(line_no, "unterminated array");
      ConfigValue arr;
      arr.kind = ConfigValue::Kind::kArray;
      for (const std::string& item : split_array_items(value.substr(1, value.size() - 2), line_no)) {
        arr.array.push_back(parse_scalar(item, line_no));
      }
      table[full_key] = std::move(arr);
    } else {
      table[full_key] = parse_scalar(value, line_no);
    }
  }
  return table;
}

ConfigTable parse_toml_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_toml(buf.str());
}

namespace {

std::string scalar_to_toml(const ConfigValue& v) {
  switch (v.kind) {
    case ConfigValue::Kind::kString: {
      std::string out = "\"";
      for (char c : v.str) {
        if (c == '"' || c == '\\') out.push_back('\\');
        if (c == '\n') { out += "\\n"; continue; }
        out.push_back(c);
      }
      out += "\"";
      return out;
    }
    case ConfigValue::Kind::kBool:
      return v.boolean ? "true" : "false";
    case ConfigValue::Kind::kNumber: {
      if (std::floor(v.num) == v.num && std::fabs(v.num) < 9.007199254740992e15) {
        return std::to_string(static_cast<long long>(v.num));
      }
      return format_double(v.num);
    }
    case ConfigValue::Kind::kArray:
      break;
  }
  throw std::logic_error("scalar_to_toml called on an array");
}

}  // namespace

std::string serialize_toml(const ConfigTable& table) {
  // Group keys by section; std::map already sorts deterministically.
  std::map<std::string, std::vector<std::pair<std::string, const ConfigValue*>>> sections;
  for (const auto& [key, value] : table) {
    const size_t dot = key.rfind('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string leaf = dot == std::string::npos ? key : key.substr(dot + 1);
    sections[section].emplace_back(leaf, &value);
  }
  std::ostringstream out;
  bool first = true;
  for (const auto& [section, entries] : sections) {
    if (!first) out << "\n";
    first = false;
    if (!section.empty()) out << "[" << section << "]\n";
    for (const auto& [key, value] : entries) {
      out << key << " = ";
      if (value->kind == ConfigValue::Kind::kArray) {
        out << "[";
        for (size_t i = 0; i < value->array.size(); ++i) {
          if (i) out << ", ";
          out << scalar_to_toml(value->array[i]);
        }
        out << "]";
      } else {
        out << scalar_to_toml(*value);
      }
      out << "\n";
    }
  }
  return out.str();
}

namespace {

class TableReader {
 public:
  explicit TableReader(const ConfigTable& table) : table_(table) {}

  bool has(const std::string& key) {
    touch(key);
    return table_.count(key) > 0;
  }

  std::string get_string(const std::string& key, const std::string& fallback) {
    touch(key);
    auto it = table_.find(key);
    if (it == table_.end()) return fallback;
    if (it->second.kind != ConfigValue::Kind::kString) fail(key, "a string");
    return it->second.str;
  }

  double get_number(const std::string& key, double fallback) {
    touch(key);
    auto it = table_.find(key);
    if (it == table_.end()) return fallback;
    if (it->second.kind != ConfigValue::Kind::kNumber) fail(key, "a number");
    return it->second.num;
  }

  int64_t get_int(const std::string& key, int64_t fallback) {
    const double v = get_number(key, static_cast<double>(fallback));
    if (std::floor(v) != v) fail(key, "an integer");
    return static_cast<int64_t>(v);
  }

  bool get_bool(const std::string& key, bool fallback) {
    touch(key);
    auto it = table_.find(key);
    if (it == table_.end()) return fallback;
    if (it->second.kind != ConfigValue::Kind::kBool) fail(key, "a boolean");
    return it->second.boolean;
  }

  std::vector<double> get_numbers(const std::string& key) {
    touch(key);
    auto it = table_.find(key);
    if (it == table_.end()) return {};
    if (it->second.kind == ConfigValue::Kind::kNumber) return {it->second.num};
    if (it->second.kind != ConfigValue::Kind::kArray) fail(key, "an array of numbers");
    std::vector<double> out;
    for (const auto& v : it->second.array) {
      if (v.kind != ConfigValue::Kind::kNumber) fail(key, "an array of numbers");
      out.push_back(v.num);
    }
    return out;
  }

  std::vector<std::string> get_strings(const std::string& key) {
    touch(key);
    auto it = table_.find(key);
    if (it == table_.end()) return {};
    if (it->second.kind == ConfigValue::Kind::kString) return {it->second.str};
    if (it->second.kind != ConfigValue::Kind::kArray) fail(key, "an array of strings");
    std::vector<std::string> out;
    for (const auto& v : it->second.array) {
      if (v.kind != ConfigValue::Kind::kString) fail(key, "an array of strings");
      out.push_back(v.str);
    }
    return out;
  }

  void reject_unknown() const {
    std::vector<std::string> unknown;
    for (const auto& [key, value] : table_) {
      (void)value;
      if (!seen_.count(key)) unknown.push_back(key);
    }
    if (!unknown.empty()) {
      std::string msg = "unknown config key(s):";
      for (const auto& k : unknown) msg += " " + k;
      throw std::runtime_error(msg);
    }
  }

 private:
  void touch(const std::string& key) { seen_.insert(key); }
  [[noreturn]] void fail(const std::string& key, const std::string& want) {
    throw std::runtime_error("config key '" + key + "' must be " + want);
  }

  const ConfigTable& table_;
  std::set<std::string> seen_;
};

std::vector<int64_t> to_ints(const std::vector<double>& vs, const std::string& key) {
  std::vector<int64_t> out;
  for (double v : vs) {
    if (std::floor(v) != v) throw std::runtime_error("config key '" + key + "' must hold integers");
    out.push_back(static_cast<int64_t>(v));
  }
  return out;
}

}  // namespace

RunConfig config_from_table(const ConfigTable& table) {
  TableReader r(table);
  RunConfig c;

  const std::string defense = r.get_string("run.defense", defense_kind_name(c.train.defense));
  auto kind = defense_kind_from_name(defense);
  if (!kind) throw std::runtime_error("unknown defense '" + defense + "'");
  c.train.defense = *kind;
  c.train.seed = static_cast<uint64_t>(r.get_int("run.seed", static_cast<int64_t>(c.train.seed)));
  c.out_dir = r.get_string("run.out_dir", c.out_dir);

  c.train.dataset = r.get_string("dataset.kind", c.train.dataset);
  c.train.cifar_dir = r.get_string("dataset.cifar_dir", c.train.cifar_dir);
  c.train.synthetic_n = r.get_int("dataset.synthetic_n", c.train.synthetic_n);
  c.train.num_classes = r.get_int("dataset.classes", c.train.num_classes);
  c.train.image_dim = r.get_int("dataset.dim", c.train.image_dim);
  c.train.max_train = r.get_int("dataset.max_train", c.train.max_train);
  c.train.max_test = r.get_int("dataset.max_test", c.train.max_test);

  c.train.bottom_channels = r.get_int("model.bottom_channels", c.train.bottom_channels);
  c.train.top_channels = r.get_int("model.top_channels", c.train.top_channels);

  c.train.epochs = r.get_int("train.epochs", c.train.epochs);
  c.train.batch_size = r.get_int("train.batch_size", c.train.batch_size);
  c.train.lr = r.get_number("train.lr", c.train.lr);
  c.train.weight_decay = r.get_number("train.weight_decay", c.train.weight_decay);
  c.train.calib_samples = r.get_int("train.calib_samples", c.train.calib_samples);
  c.train.jacobian_threads = static_cast<int>(r.get_int("train.jacobian_threads", c.train.jacobian_threads));

  c.train.retained = r.get_int("defense.retained", c.train.retained);
  c.train.lambda = r.get_number("defense.lambda", c.train.lambda);
  c.train.fsinfo = r.get_number("defense.fsinfo", c.train.fsinfo);
  c.train.dfil = r.get_number("defense.dfil", c.train.dfil);
  c.train.nopeek_alpha = r.get_number("defense.nopeek_alpha", c.train.nopeek_alpha);
  c.train.shredder_coeff = r.get_number("defense.shredder_coeff", c.train.shredder_coeff);
  c.train.force_sigma_zero = r.get_bool("defense.force_sigma_zero", c.train.force_sigma_zero);
  c.train.input_mode = r.get_string("defense.input_mode", c.train.input_mode);

  c.attack.epochs = r.get_int("attack.epochs", c.attack.epochs);
  c.attack.batch_size = r.get_int("attack.batch_size", c.attack.batch_size);
  c.attack.lr = r.get_number("attack.lr", c.attack.lr);
  c.attack.weight_decay = r.get_number("attack.weight_decay", c.attack.weight_decay);
  c.attack.seed = static_cast<uint64_t>(r.get_int("attack.seed", static_cast<int64_t>(c.train.seed)));

  for (const std::string& name : r.get_strings("sweep.defenses")) {
    auto k = defense_kind_from_name(name);
    if (!k) throw std::runtime_error("unknown sweep defense '" + name + "'");
    c.sweep_defenses.push_back(*k);
  }
  for (double s : r.get_numbers("sweep.seeds")) c.sweep_seeds.push_back(static_cast<uint64_t>(s));
  c.sweep_jobs = static_cast<int>(r.get_int("sweep.jobs", c.sweep_jobs));
  for (DefenseKind k : {DefenseKind::kNone, DefenseKind::kInfodecom, DefenseKind::kNopeek, DefenseKind::kShredder,
                        DefenseKind::kDfilDef, DefenseKind::kFsinfoGuard}) {
    const std::string prefix = "sweep." + defense_kind_name(k) + ".";
    SweepGrid grid;
    grid.retained = to_ints(r.get_numbers(prefix + "retained"), prefix + "retained");
    grid.lambda = r.get_numbers(prefix + "lambda");
    grid.fsinfo = r.get_numbers(prefix + "fsinfo");
    grid.dfil = r.get_numbers(prefix + "dfil");
    grid.nopeek_alpha = r.get_numbers(prefix + "nopeek_alpha");
    grid.shredder_coeff = r.get_numbers(prefix + "shredder_coeff");
    if (!grid.retained.empty() || !grid.lambda.empty() || !grid.fsinfo.empty() || !grid.dfil.empty() ||
        !grid.nopeek_alpha.empty() || !grid.shredder_coeff.empty()) {
      c.sweep_grids[defense_kind_name(k)] = std::move(grid);
    }
  }

  c.bind_host = r.get_string("protocol.bind", c.bind_host);
  c.port = static_cast<uint16_t>(r.get_int("protocol.port", c.port));
  c.server_host = r.get_string("protocol.server", c.server_host);

  r.reject_unknown();
  return c;
}

ConfigTable table_from_config(const RunConfig& c) {
  ConfigTable t;
  t["run.defense"] = ConfigValue::of_string(defense_kind_name(c.train.defense));
  t["run.seed"] = ConfigValue::of_number(static_cast<double>(c.train.seed));
  t["run.out_dir"] = ConfigValue::of_string(c.out_dir);

  t["dataset.kind"] = ConfigValue::of_string(c.train.dataset);
  t["dataset.cifar_dir"] = ConfigValue::of_string(c.train.cifar_dir);
  t["dataset.synthetic_n"] = ConfigValue::of_number(static_cast<double>(c.train.synthetic_n));
  t["dataset.classes"] = ConfigValue::of_number(static_cast<double>(c.train.num_classes));
  t["dataset.dim"] = ConfigValue::of_number(static_cast<double>(c.train.image_dim));
  t["dataset.max_train"] = ConfigValue::of_number(static_cast<double>(c.train.max_train));
  t["dataset.max_test"] = ConfigValue::of_number(static_cast<double>(c.train.max_test));

  t["model.bottom_channels"] = ConfigValue::of_number(static_cast<double>(c.train.bottom_channels));
  t["model.top_channels"] = ConfigValue::of_number(static_cast<double>(c.train.top_channels));

  t["train.epochs"] = ConfigValue::of_number(static_cast<double>(c.train.epochs));
  t["train.batch_size"] = ConfigValue::of_number(static_cast<double>(c.train.batch_size));
  t["train.lr"] = ConfigValue::of_number(c.train.lr);
  t["train.weight_decay"] = ConfigValue::of_number(c.train.weight_decay);
  t["train.calib_samples"] = ConfigValue::of_number(static_cast<double>(c.train.calib_samples));
  t["train.jacobian_threads"] = ConfigValue::of_number(c.train.jacobian_threads);

  t["defense.retained"] = ConfigValue::of_number(static_cast<double>(c.train.retained));
  t["defense.lambda"] = ConfigValue::of_number(c.train.lambda);
  t["defense.fsinfo"] = ConfigValue::of_number(c.train.fsinfo);
  t["defense.dfil"] = ConfigValue::of_number(c.train.dfil);
  t["defense.nopeek_alpha"] = ConfigValue::of_number(c.train.nopeek_alpha);
  t["defense.shredder_coeff"] = ConfigValue::of_number(c.train.shredder_coeff);
  t["defense.force_sigma_zero"] = ConfigValue::of_bool(c.train.force_sigma_zero);
  t["defense.input_mode"] = ConfigValue::of_string(c.train.input_mode);

  t["attack.epochs"] = ConfigValue::of_number(static_cast<double>(c.attack.epochs));
  t["attack.batch_size"] = ConfigValue::of_number(static_cast<double>(c.attack.batch_size));
  t["attack.lr"] = ConfigValue::of_number(c.attack.lr);
  t["attack.weight_decay"] = ConfigValue::of_number(c.attack.weight_decay);
  t["attack.seed"] = ConfigValue::of_number(static_cast<double>(c.attack.seed));

  if (!c.sweep_defenses.empty()) {
    std::vector<std::string> names;
    for (DefenseKind k : c.sweep_defenses) names.push_back(defense_kind_name(k));
    t["sweep.defenses"] = ConfigValue::of_strings(names);
  }
  if (!c.sweep_seeds.empty()) {
    std::vector<double> seeds;
    for (uint64_t s : c.sweep_seeds) seeds.push_back(static_cast<double>(s));
    t["sweep.seeds"] = ConfigValue::of_numbers(seeds);
  }
  t["sweep.jobs"] = ConfigValue::of_number(c.sweep_jobs);
  for (const auto& [name, grid] : c.sweep_grids) {
    const std::string prefix = "sweep." + name + ".";
    if (!grid.retained.empty()) {
      std::vector<double> vs(grid.retained.begin(), grid.retained.end());
      t[prefix + "retained"] = ConfigValue::of_numbers(vs);
    }
    if (!grid.lambda.empty()) t[prefix + "lambda"] = ConfigValue::of_numbers(grid.lambda);
    if (!grid.fsinfo.empty()) t[prefix + "fsinfo"] = ConfigValue::of_numbers(grid.fsinfo);
    if (!grid.dfil.empty()) t[prefix + "dfil"] = ConfigValue::of_numbers(grid.dfil);
    if (!grid.nopeek_alpha.empty()) t[prefix + "nopeek_alpha"] = ConfigValue::of_numbers(grid.nopeek_alpha);
    if (!grid.shredder_coeff.empty()) t[prefix + "shredder_coeff"] = ConfigValue::of_numbers(grid.shredder_coeff);
  }

  t["protocol.bind"] = ConfigValue::of_string(c.bind_host);
  t["protocol.port"] = ConfigValue::of_number(c.port);
  t["protocol.server"] = ConfigValue::of_string(c.server_host);
  return t;
}

RunConfig load_run_config(const std::string& path) { return config_from_table(parse_toml_file(path)); }

void save_run_config(const RunConfig& config, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << serialize_toml(table_from_config(config));
  if (!f) throw std::runtime_error("failed writing " + path);
}

}  // namespace splitveil
