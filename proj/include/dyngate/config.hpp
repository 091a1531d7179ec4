#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dyngate/kernels.hpp"
#include "dyngate/net.hpp"
#include "dyngate/trainer.hpp"

namespace dyngate {

// key=value settings with '#' comments and dotted key names. Reading a key
// marks it as known; check_consumed() then rejects leftovers, so a typoed
// key fails the run instead of silently falling back to a default.
class Settings {
 public:
  Settings() = default;
  static Settings from_file(const std::string& path);
  static Settings from_text(const std::string& text);

  // Overrides or adds one key (CLI layering on top of the file).
  void set(const std::string& key, const std::string& value);
  // Parses a "key=value" assignment and applies it.
  void apply_assignment(const std::string& kv);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& dflt) const;
  int64_t get_int(const std::string& key, int64_t dflt) const;
  uint64_t get_uint(const std::string& key, uint64_t dflt) const;
  double get_double(const std::string& key, double dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;
  std::vector<int> get_int_list(const std::string& key,
                                std::vector<int> dflt) const;
  std::vector<std::string> get_string_list(
      const std::string& key, std::vector<std::string> dflt) const;

  // Throws ValidationError naming every key that was never read.
  void check_consumed() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

// One training/eval run, assembled from Settings with documented defaults.
struct RunSettings {
  std::string manifest;  // dataset manifest (required by the train command)
  std::string out_dir = "runs/out";
  std::string source = "photo";
  std::vector<std::string> targets = {"cartoon", "night", "sketch"};
  std::string embeddings;  // optional prompt embedding table file
  uint64_t seed = 1;
  NetworkConfig net;
  TrainConfig train;
  kernels::Backend backend = kernels::Backend::openmp;
};

// Consumes the run keys and rejects everything left over. When no seed key
// is present, the DYNGATE_SEED environment variable supplies one.
RunSettings load_run_settings(const Settings& s);

kernels::Backend parse_backend(const std::string& name);

}  // namespace dyngate
