#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "dyngate/tensor.hpp"

namespace dyngate {

// Deterministic stand-in for a frozen text encoder: scene names expand
// through a fixed prompt template and hash into unit-norm token embeddings.

struct PromptConfig {
  int d_text = 32;  // embedding width, >= 8
  int tokens = 8;   // rows per prompt, >= 1
  uint64_t seed = 0;
};

// "an image taken in {scene}"; empty scene name is rejected.
std::string expand_template(const std::string& scene_name);

// Whitespace-split tokens hashed into pseudo-random unit vectors, truncated
// or padded to `tokens` rows. Pure function of (text, d_text, tokens, seed).
Tensor embed_text(const std::string& text, int d_text, int tokens,
                  uint64_t seed);

// One record per line: scene name, tab, tokens*d_text reals (row-major).
// '#' starts a comment line. Rows are re-normalized; zero rows are rejected.
std::map<std::string, Tensor> load_embeddings(const std::string& path,
                                              int tokens, int d_text);

// Scene -> embedding cache with optional file-loaded overrides.
class PromptTable {
 public:
  explicit PromptTable(PromptConfig cfg = {});

  const PromptConfig& config() const { return cfg_; }
  // Embedding of the expanded template for a scene (cached).
  const Tensor& embedding(const std::string& scene_name);
  // Embedding of the bare template, used when unknown scenes are allowed.
  const Tensor& fallback_embedding();
  // Replaces the generated embedding for a scene (e.g. precomputed vectors).
  void set_override(const std::string& scene_name, Tensor embedding);

 private:
  PromptConfig cfg_;
  std::map<std::string, Tensor> cache_;
  Tensor fallback_;
};

}  // namespace dyngate
