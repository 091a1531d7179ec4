#pragma once

#include "dyngate/ops.hpp"
#include "dyngate/tensor.hpp"

namespace dyngate {

// Prompt-conditioned slot fusion: per-block feature maps seed a small set of
// slots that cross-attend to the prompt tokens and are refined by a GRU.

struct FusionConfig {
  int slots = 4;   // S
  int d = 32;      // slot width
  int d_text = 32; // prompt embedding width
  int iters = 3;   // T refinement steps, >= 0 (0 returns the initial slots)
  bool softmax_over_queries = false;  // default normalizes over prompt tokens
};

// Shared attention/GRU trunk, one instance for the whole network.
struct FusionParams {
  Tensor wq;      // [d, d]
  Tensor wk;      // [d_text, d]
  Tensor wv;      // [d_text, d]
  GruParams gru;  // width d
};

// Per-block adapter projecting pooled features to the initial slots.
struct InitProj {
  Tensor w;  // [C, S*d]
  Tensor b;  // [S*d]
};

// [N,C,H,W] -> GAP -> learned projection -> [N*S, d].
Tensor init_slots(const Tensor& feats, const InitProj& proj, int slots, int d);

// Scaled dot-product attention of slots (queries) against prompt tokens
// (keys): slots [N*S, d], prompt [P, d_text] -> [N*S, P]. The softmax
// normalizes over keys, or per-sample over the S query slots when
// cfg.softmax_over_queries is set.
Tensor attention_scores(const Tensor& slots, const Tensor& prompt,
                        const FusionParams& p, const FusionConfig& cfg);

// Weighted prompt-value aggregation: scores [N*S, P] -> [N*S, d].
Tensor attend(const Tensor& scores, const Tensor& prompt,
              const FusionParams& p);

// cfg.iters GRU refinements starting from the given slots.
Tensor fuse_from(const Tensor& slots0, const Tensor& prompt,
                 const FusionParams& p, const FusionConfig& cfg);

// init_slots followed by fuse_from.
Tensor fuse(const Tensor& feats, const Tensor& prompt, const InitProj& proj,
            const FusionParams& p, const FusionConfig& cfg);

}  // namespace dyngate
