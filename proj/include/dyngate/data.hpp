#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dyngate/tensor.hpp"

namespace dyngate {

// Deterministic multi-domain shape dataset. Sample `index` renders archetype
// `index % classes` with geometry drawn from (seed, index) alone, then gets
// styled by a domain preset with per-sample parameters drawn from
// (seed, index, domain): the same sample shows the same shape in every
// domain, in that domain's rendering style.

struct DomainDataset {
  std::string domain;
  std::string split;
  int classes = 0;
  int channels = 3, h = 32, w = 32;
  uint64_t seed = 0;
  int64_t index_offset = 0;  // global index of the first sample
  std::vector<int> labels;
  std::vector<double> pixels;  // n * channels * h * w, values in [0,1]

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  const double* image(int64_t i) const;
  // Images gathered into an [B, channels, h, w] batch.
  Tensor batch(const std::vector<int64_t>& ids) const;
};

// Known style presets, sorted.
const std::vector<std::string>& style_presets();

// Antialiased class-shape coverage mask for one sample, style-free.
Tensor shape_mask(uint64_t seed, int64_t index, int classes, int h = 32,
                  int w = 32);

DomainDataset generate_domain(const std::string& preset, int classes,
                              int64_t n, uint64_t seed,
                              const std::string& split,
                              int64_t index_offset = 0);

void save_dataset(const std::string& path, const DomainDataset& d);
DomainDataset load_dataset(const std::string& path);

struct ManifestEntry {
  std::string domain, split, path;
};
bool operator==(const ManifestEntry& a, const ManifestEntry& b);

void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace dyngate
