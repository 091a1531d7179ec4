#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dyngate/fusion.hpp"
#include "dyngate/gate.hpp"
#include "dyngate/ops.hpp"
#include "dyngate/prompt.hpp"
#include "dyngate/tensor.hpp"

namespace dyngate {

// Gated residual backbone. Each block computes
//   u = relu(norm1(conv1 x));  u' = u . channel_mask
//   v = norm2(conv2 u');       v' = v . spatial_mask
//   y = relu(v' + skip(x))
// where the masks come from prompt-conditioned slots and the skip is a 1x1
// conv when the width changes (never gated). Stages are separated by 2x2
// average pooling; a linear head reads the globally pooled features.

enum class Variant {
  base,     // no gating, prompt ignored
  dynamic,  // gates driven by the initial slots only
  normal,   // one cross-attention pass, no GRU refinement
  slot      // full iterative slot fusion
};
Variant parse_variant(const std::string& name);
const char* variant_name(Variant v);

struct NetworkConfig {
  std::vector<int> widths = {16, 32, 64, 128};  // stage widths, one pool apart
  int blocks_per_stage = 1;
  int in_channels = 3;
  int in_h = 32, in_w = 32;
  int classes = 4;
  int prompt_tokens = 8;
  FusionConfig fusion;        // slots=4, d=32, d_text=32, iters=3
  GateConfig gate;            // threshold=0.5, tau=1.0, base_grid=8
  Variant variant = Variant::slot;
  double gate_bias_init = 0.8813735870195429;  // logit(sqrt(0.5))

  void validate() const;
};

// Deterministic MAC accounting over the backbone convolutions (head and
// fusion excluded). Counts are exact integers; ratio = gated / dense.
struct MacReport {
  int64_t dense = 0;
  int64_t gated = 0;
  double ratio = 1.0;
};

struct CheckpointMeta {
  int64_t epoch = 0;
  double p = 1.0;
};

class DynamicNet {
 public:
  DynamicNet(NetworkConfig cfg, uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  uint64_t seed() const { return seed_; }
  bool gated() const { return cfg_.variant != Variant::base; }
  int num_blocks() const { return static_cast<int>(blocks_.size()); }

  // Learnable parameters and non-learnable buffers (norm running stats),
  // keyed by stable names; iteration order is the map order.
  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  std::map<std::string, Tensor>& buffers() { return buffers_; }

  // Scene registry backing prompt lookup. Unregistered scenes fall back to
  // the bare template prompt unless strict resolution is requested.
  void register_scene(const std::string& name);
  const std::vector<std::string>& scenes() const { return scenes_; }
  PromptTable& prompts() { return prompts_; }

  struct ForwardHooks {
    // Replaces the computed mask of a block (entries may be undefined).
    std::vector<Tensor> force_channel, force_spatial;
    // Skips fusion and gating entirely: the static ungated path.
    bool force_open = false;
    // Uses the relaxed mask values in the forward pass (no straight-through).
    bool soft_gates = false;
    // Frozen per-block gumbel noise, indexed like the blocks.
    const std::vector<Tensor>* noise_channel = nullptr;
    const std::vector<Tensor>* noise_spatial = nullptr;
    // Adds delta to one channel of u after the first activation.
    int perturb_block = -1;
    int perturb_channel = -1;
    double perturb_delta = 0.0;
  };

  struct ForwardResult {
    Tensor logits;  // [N, classes]
    // Applied masks in block order, channel then spatial per block.
    // Empty for the base variant and the forced-open path.
    std::vector<GateMask> masks;
    // Scalar graph tensors: mean of each soft mask (train mode only),
    // ordered like `masks`. Feed these to the bound loss.
    std::vector<Tensor> soft_densities;
  };

  // Train mode samples gumbel gates from `gumbel` (required unless noise or
  // masks are forced); eval mode thresholds the logits deterministically.
  ForwardResult forward(const Tensor& images, const std::string& scene,
                        bool train, RngStream* gumbel = nullptr,
                        const ForwardHooks* hooks = nullptr,
                        bool strict_scene = false);

  // Masks in ForwardResult order ({} counts the dense network).
  MacReport count_macs(const std::vector<GateMask>& masks) const;

  void save_checkpoint(const std::string& path,
                       const CheckpointMeta& meta) const;
  static DynamicNet load_checkpoint(const std::string& path,
                                    CheckpointMeta* meta = nullptr);

  // Per-block geometry, exposed for tests and MAC oracles.
  struct BlockInfo {
    int in_c = 0, out_c = 0;  // widths
    int h = 0, w = 0;         // feature resolution
    int hg = 0, wg = 0;       // spatial gate grid
    bool has_skip = false;
  };
  const std::vector<BlockInfo>& block_info() const { return info_; }

 private:
  struct Block {
    Tensor conv1_w, conv1_b, norm1_g, norm1_b;
    Tensor conv2_w, conv2_b, norm2_g, norm2_b;
    Tensor skip_w;  // undefined when in_c == out_c
    NormState norm1_state, norm2_state;
    InitProj init;
    GateHead head;
    bool last_in_stage = false;
  };

  Tensor init_param(const std::string& name, Shape shape, double stddev,
                    double bias_fill, bool constant);
  void build();
  const Tensor& resolve_prompt(const std::string& scene, bool strict);

  NetworkConfig cfg_;
  uint64_t seed_ = 0;
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> buffers_;
  std::vector<Block> blocks_;
  std::vector<BlockInfo> info_;
  FusionParams fusion_;
  Tensor head_w_, head_b_;
  PromptTable prompts_;
  std::vector<std::string> scenes_;
};

}  // namespace dyngate
