#pragma once

#include <ostream>
#include <string>

#include "dyngate/rng.hpp"
#include "dyngate/tensor.hpp"

namespace dyngate {

// Binary gates over channels and spatial cells, driven by fused slots.
// Training uses the Gumbel-sigmoid relaxation with a straight-through
// forward; evaluation thresholds the logits deterministically.

struct GateConfig {
  double threshold = 0.5;  // eval binarization threshold on sigmoid(logit)
  double tau = 1.0;        // relaxation temperature, > 0
  int base_grid = 8;       // spatial gate grid edge (clamped to the stage)
};

enum class MaskKind { channel, spatial };
const char* mask_kind_name(MaskKind kind);

struct GateMask {
  MaskKind kind = MaskKind::channel;
  Tensor values;            // hard or soft gate values in [0,1]
  double density() const;   // mean of values
};

// Per-block gate head: two linear maps from the flattened fused slots.
struct GateHead {
  Tensor wc, bc;  // [S*d, C], [C]
  Tensor ws, bs;  // [S*d, Hg*Wg], [Hg*Wg]
  int hg = 0, wg = 0;
};

// fused [N*S, d] -> channel logits [N, C] and spatial logits [N, Hg, Wg].
std::pair<Tensor, Tensor> gate_logits(const Tensor& fused,
                                      const GateHead& head, int slots, int d);

// Eval path, no autodiff: sigmoid(logit) >= threshold -> 1 else 0.
Tensor binarize(const Tensor& logits, double threshold);

// Difference of two standard Gumbel draws per entry (logistic noise); the
// caller owns the stream, so identical streams reproduce identical noise.
Tensor sample_gumbel_diff(const Shape& shape, RngStream& rng);

struct GumbelGate {
  Tensor hard;  // straight-through binarized mask, used in the forward pass
  Tensor soft;  // relaxed mask, used for density regularization
};

// soft = sigmoid((logits + noise)/tau), hard = 1[soft >= 0.5] with identity
// backward. The noise-explicit form exists so checks can freeze the noise.
GumbelGate gumbel_gate_with_noise(const Tensor& logits, double tau,
                                  const Tensor& noise);
GumbelGate gumbel_gate(const Tensor& logits, double tau, RngStream& rng);

// Nearest-neighbor upsample of a [*, Hg, Wg] mask to the stage resolution.
// H and W must be equal integer multiples of the mask grid.
Tensor mask_for_stage(const Tensor& mask, int h, int w);

// One line: layer name, kind, density (6 decimals), then the mask values.
void dump_mask(std::ostream& os, const std::string& layer, const GateMask& m);

}  // namespace dyngate
