#include "dyngate/prompt.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "dyngate/error.hpp"
#include "dyngate/rng.hpp"

namespace dyngate {
namespace {

void check_dims(int d_text, int tokens) {
  if (d_text < 8) {
    throw ValidationError("prompt d_text must be >= 8, got " +
                          std::to_string(d_text));
  }
  if (tokens < 1) {
    throw ValidationError("prompt token count must be >= 1, got " +
                          std::to_string(tokens));
  }
}

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

// Unit vector drawn from a stream seeded by the token text alone, so the
// same token embeds identically in any position or prompt.
void write_token_row(double* row, int d_text, uint64_t seed,
                     const std::string& token) {
  RngStream rng(derive_seed(seed, token));
  while (true) {
    double sq = 0.0;
    for (int i = 0; i < d_text; ++i) {
      row[i] = rng.normal();
      sq += row[i] * row[i];
    }
    const double norm = std::sqrt(sq);
    if (norm > 1e-6) {
      for (int i = 0; i < d_text; ++i) row[i] /= norm;
      return;
    }
  }
}

}  // namespace

std::string expand_template(const std::string& scene_name) {
  if (scene_name.empty()) {
    throw ValidationError("scene name must be non-empty");
  }
  return "an image taken in " + scene_name;
}

Tensor embed_text(const std::string& text, int d_text, int tokens,
                  uint64_t seed) {
  check_dims(d_text, tokens);
  const std::vector<std::string> toks = split_ws(text);
  Tensor out({tokens, d_text});
  double* data = out.data();
  for (int t = 0; t < tokens; ++t) {
    if (t < static_cast<int>(toks.size())) {
      write_token_row(data + static_cast<size_t>(t) * d_text, d_text, seed,
                      toks[t]);
    } else {
      write_token_row(data + static_cast<size_t>(t) * d_text, d_text,
                      derive_seed(seed, "pad", static_cast<uint64_t>(t)),
                      "<pad>");
    }
  }
  return out;
}

std::map<std::string, Tensor> load_embeddings(const std::string& path,
                                              int tokens, int d_text) {
  check_dims(d_text, tokens);
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open embeddings file: " + path);
  std::map<std::string, Tensor> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto tab = line.find('\t', first);
    if (tab == std::string::npos) {
      throw ParseError("embeddings line " + std::to_string(line_no) +
                       ": missing tab after scene name");
    }
    const std::string name = line.substr(first, tab - first);
    if (name.empty()) {
      throw ParseError("embeddings line " + std::to_string(line_no) +
                       ": empty scene name");
    }
    std::istringstream vals(line.substr(tab + 1));
    std::vector<double> v;
    std::string field;
    while (vals >> field) {
      size_t used = 0;
      double x = 0.0;
      try {
        x = std::stod(field, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != field.size()) {
        throw ParseError("embeddings line " + std::to_string(line_no) +
                         ": bad number '" + field + "'");
      }
      v.push_back(x);
    }
    const size_t want = static_cast<size_t>(tokens) * d_text;
    if (v.size() != want) {
      throw FormatError("embeddings line " + std::to_string(line_no) +
                        ": expected " + std::to_string(want) + " values for " +
                        std::to_string(tokens) + "x" + std::to_string(d_text) +
                        ", got " + std::to_string(v.size()));
    }
    for (int t = 0; t < tokens; ++t) {
      double sq = 0.0;
      for (int i = 0; i < d_text; ++i) sq += v[t * d_text + i] * v[t * d_text + i];
      const double norm = std::sqrt(sq);
      if (norm < 1e-12) {
        throw FormatError("embeddings line " + std::to_string(line_no) +
                          ": row " + std::to_string(t) + " has zero norm");
      }
      for (int i = 0; i < d_text; ++i) v[t * d_text + i] /= norm;
    }
    if (out.count(name)) {
      throw FormatError("embeddings line " + std::to_string(line_no) +
                        ": duplicate scene '" + name + "'");
    }
    out.emplace(name, Tensor({tokens, d_text}, v));
  }
  return out;
}

PromptTable::PromptTable(PromptConfig cfg) : cfg_(cfg) {
  check_dims(cfg_.d_text, cfg_.tokens);
}

const Tensor& PromptTable::embedding(const std::string& scene_name) {
  auto it = cache_.find(scene_name);
  if (it != cache_.end()) return it->second;
  Tensor e = embed_text(expand_template(scene_name), cfg_.d_text, cfg_.tokens,
                        cfg_.seed);
  return cache_.emplace(scene_name, std::move(e)).first->second;
}

const Tensor& PromptTable::fallback_embedding() {
  if (!fallback_.defined()) {
    fallback_ = embed_text("an image taken in", cfg_.d_text, cfg_.tokens,
                           cfg_.seed);
  }
  return fallback_;
}

void PromptTable::set_override(const std::string& scene_name,
                               Tensor embedding) {
  if (embedding.rank() != 2 || embedding.dim(0) != cfg_.tokens ||
      embedding.dim(1) != cfg_.d_text) {
    throw ValidationError("override embedding for '" + scene_name +
                          "' must have shape [" + std::to_string(cfg_.tokens) +
                          ", " + std::to_string(cfg_.d_text) + "], got " +
                          shape_str(embedding.shape()));
  }
  cache_[scene_name] = std::move(embedding);
}

}  // namespace dyngate
