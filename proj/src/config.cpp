#include "dyngate/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dyngate/error.hpp"

namespace dyngate {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ValidationError("empty list element");
    out.push_back(item);
  }
  return out;
}

int64_t parse_int(const std::string& key, const std::string& v) {
  size_t used = 0;
  int64_t out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty())
    throw ValidationError("key '" + key + "': '" + v + "' is not an integer");
  return out;
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
  size_t used = 0;
  uint64_t out = 0;
  try {
    if (!v.empty() && v[0] == '-') used = 0;
    else out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty())
    throw ValidationError("key '" + key + "': '" + v +
                          "' is not an unsigned integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty())
    throw ValidationError("key '" + key + "': '" + v + "' is not a number");
  return out;
}

}  // namespace

Settings Settings::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return from_text(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

Settings Settings::from_text(const std::string& text) {
  Settings s;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(line_no) +
                       ": expected key=value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ParseError("config line " + std::to_string(line_no) +
                       ": empty key");
    if (s.values_.count(key))
      throw ParseError("config line " + std::to_string(line_no) +
                       ": duplicate key '" + key + "'");
    s.values_[key] = value;
  }
  return s;
}

void Settings::set(const std::string& key, const std::string& value) {
  if (trim(key).empty()) throw ValidationError("empty settings key");
  values_[trim(key)] = trim(value);
}

void Settings::apply_assignment(const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw ValidationError("override '" + kv + "' is not key=value");
  set(kv.substr(0, eq), kv.substr(eq + 1));
}

bool Settings::has(const std::string& key) const {
  return values_.count(key) != 0;
}

std::string Settings::get_string(const std::string& key,
                                 const std::string& dflt) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? dflt : it->second;
}

int64_t Settings::get_int(const std::string& key, int64_t dflt) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? dflt : parse_int(key, it->second);
}

uint64_t Settings::get_uint(const std::string& key, uint64_t dflt) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? dflt : parse_uint(key, it->second);
}

double Settings::get_double(const std::string& key, double dflt) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? dflt : parse_double(key, it->second);
}

bool Settings::get_bool(const std::string& key, bool dflt) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError("key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<int> Settings::get_int_list(const std::string& key,
                                        std::vector<int> dflt) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  std::vector<int> out;
  try {
    for (const std::string& item : split_csv(it->second))
      out.push_back(static_cast<int>(parse_int(key, item)));
  } catch (const ValidationError&) {
    throw ValidationError("key '" + key + "': '" + it->second +
                          "' is not a comma-separated integer list");
  }
  return out;
}

std::vector<std::string> Settings::get_string_list(
    const std::string& key, std::vector<std::string> dflt) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  if (trim(it->second).empty()) return {};
  try {
    return split_csv(it->second);
  } catch (const ValidationError&) {
    throw ValidationError("key '" + key + "': '" + it->second +
                          "' is not a comma-separated list");
  }
}

void Settings::check_consumed() const {
  std::string unknown;
  for (const auto& [key, value] : values_) {
    if (consumed_.count(key)) continue;
    if (!unknown.empty()) unknown += ", ";
    unknown += key;
  }
  if (!unknown.empty())
    throw ValidationError("unknown config keys: " + unknown);
}

kernels::Backend parse_backend(const std::string& name) {
  if (name == "serial") return kernels::Backend::serial;
  if (name == "openmp") return kernels::Backend::openmp;
  throw ValidationError("unknown kernel backend '" + name +
                        "' (known: openmp, serial)");
}

RunSettings load_run_settings(const Settings& s) {
  RunSettings run;
  run.manifest = s.get_string("manifest", run.manifest);
  run.out_dir = s.get_string("out_dir", run.out_dir);
  run.source = s.get_string("source", run.source);
  run.targets = s.get_string_list("targets", run.targets);
  run.embeddings = s.get_string("embeddings", run.embeddings);

  if (s.has("seed")) {
    run.seed = s.get_uint("seed", run.seed);
  } else {
    s.get_uint("seed", 0);  // mark consumed
    if (const char* env = std::getenv("DYNGATE_SEED"))
      run.seed = parse_uint("DYNGATE_SEED", env);
  }

  TrainConfig& tc = run.train;
  tc.epochs = static_cast<int>(s.get_int("train.epochs", tc.epochs));
  tc.batch = static_cast<int>(s.get_int("train.batch", tc.batch));
  tc.lr = s.get_double("train.lr", tc.lr);
  tc.weight_decay = s.get_double("train.weight_decay", tc.weight_decay);
  tc.momentum = s.get_double("train.momentum", tc.momentum);
  tc.force_open = s.get_bool("train.force_open", tc.force_open);
  tc.schedule.target_rate =
      s.get_double("schedule.target_rate", tc.schedule.target_rate);
  tc.schedule.alpha = s.get_double("schedule.alpha", tc.schedule.alpha);
  tc.schedule.lambda_b = s.get_double("schedule.lambda", tc.schedule.lambda_b);

  NetworkConfig& nc = run.net;
  nc.widths = s.get_int_list("net.widths", nc.widths);
  nc.blocks_per_stage = static_cast<int>(
      s.get_int("net.blocks_per_stage", nc.blocks_per_stage));
  nc.classes = static_cast<int>(s.get_int("net.classes", nc.classes));
  nc.variant = parse_variant(
      s.get_string("net.variant", variant_name(nc.variant)));
  nc.prompt_tokens = static_cast<int>(
      s.get_int("prompt.tokens", nc.prompt_tokens));
  nc.fusion.slots = static_cast<int>(s.get_int("net.slots", nc.fusion.slots));
  nc.fusion.d = static_cast<int>(s.get_int("net.slot_dim", nc.fusion.d));
  nc.fusion.d_text = static_cast<int>(
      s.get_int("net.text_dim", nc.fusion.d_text));
  nc.fusion.iters = static_cast<int>(s.get_int("net.iters", nc.fusion.iters));
  nc.fusion.softmax_over_queries =
      s.get_bool("net.softmax_over_queries", nc.fusion.softmax_over_queries);
  nc.gate.threshold = s.get_double("net.threshold", nc.gate.threshold);
  nc.gate.tau = s.get_double("net.tau", nc.gate.tau);
  nc.gate.base_grid = static_cast<int>(
      s.get_int("net.base_grid", nc.gate.base_grid));
  nc.gate_bias_init = s.get_double("net.gate_bias", nc.gate_bias_init);

  run.backend = parse_backend(s.get_string("kernel.backend", "openmp"));

  s.check_consumed();
  tc.validate();
  nc.validate();
  return run;
}

}  // namespace dyngate
