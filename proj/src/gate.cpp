#include "dyngate/gate.hpp"

#include <cmath>
#include <cstdio>

#include "dyngate/error.hpp"
#include "dyngate/ops.hpp"

namespace dyngate {

const char* mask_kind_name(MaskKind kind) {
  return kind == MaskKind::channel ? "channel" : "spatial";
}

double GateMask::density() const {
  if (!values.defined() || values.numel() == 0)
    throw ValidationError("gate mask density: empty mask");
  double s = 0.0;
  for (int64_t i = 0; i < values.numel(); ++i) s += values.data()[i];
  return s / static_cast<double>(values.numel());
}

std::pair<Tensor, Tensor> gate_logits(const Tensor& fused,
                                      const GateHead& head, int slots, int d) {
  if (slots < 1 || d < 1)
    throw ValidationError("gate_logits: slots and d must be positive");
  const int64_t sd = static_cast<int64_t>(slots) * d;
  if (fused.rank() != 2 || fused.dim(1) != d || fused.dim(0) % slots != 0)
    throw DimensionError("gate_logits: fused slots must be [N*" +
                         std::to_string(slots) + ", " + std::to_string(d) +
                         "], got " + shape_str(fused.shape()));
  if (head.wc.rank() != 2 || head.wc.dim(0) != sd || head.bc.rank() != 1 ||
      head.bc.dim(0) != head.wc.dim(1))
    throw DimensionError("gate_logits: channel head shapes wc=" +
                         shape_str(head.wc.shape()) + " bc=" +
                         shape_str(head.bc.shape()) + " (expected [" +
                         std::to_string(sd) + ",C],[C])");
  if (head.hg < 1 || head.wg < 1 || head.ws.rank() != 2 ||
      head.ws.dim(0) != sd ||
      head.ws.dim(1) != static_cast<int64_t>(head.hg) * head.wg ||
      head.bs.rank() != 1 || head.bs.dim(0) != head.ws.dim(1))
    throw DimensionError("gate_logits: spatial head shapes ws=" +
                         shape_str(head.ws.shape()) + " bs=" +
                         shape_str(head.bs.shape()) + " for grid " +
                         std::to_string(head.hg) + "x" +
                         std::to_string(head.wg));
  const int64_t n = fused.dim(0) / slots;
  const Tensor flat = reshape(fused, Shape{n, sd});
  Tensor ch = linear(flat, head.wc, head.bc);
  Tensor sp = reshape(linear(flat, head.ws, head.bs),
                      Shape{n, head.hg, head.wg});
  return {std::move(ch), std::move(sp)};
}

Tensor binarize(const Tensor& logits, double threshold) {
  if (!logits.defined()) throw ValidationError("binarize: undefined logits");
  if (threshold <= 0.0 || threshold >= 1.0)
    throw ValidationError("binarize: threshold must lie in (0,1), got " +
                          std::to_string(threshold));
  Tensor out(logits.shape());
  const double* in = logits.data();
  double* o = out.data();
  for (int64_t i = 0; i < logits.numel(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-in[i]));
    o[i] = p >= threshold ? 1.0 : 0.0;  // ties open the gate
  }
  return out;
}

Tensor sample_gumbel_diff(const Shape& shape, RngStream& rng) {
  Tensor out(shape);
  double* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) {
    const double g0 = rng.gumbel();
    const double g1 = rng.gumbel();
    o[i] = g1 - g0;
  }
  return out;
}

GumbelGate gumbel_gate_with_noise(const Tensor& logits, double tau,
                                  const Tensor& noise) {
  if (tau <= 0.0)
    throw ValidationError("gumbel gate: tau must be positive, got " +
                          std::to_string(tau));
  if (noise.shape() != logits.shape())
    throw DimensionError("gumbel gate: noise shape " +
                         shape_str(noise.shape()) + " does not match logits " +
                         shape_str(logits.shape()));
  GumbelGate g;
  g.soft = sigmoid(scale(add(logits, noise), 1.0 / tau));
  g.hard = straight_through(g.soft);
  return g;
}

GumbelGate gumbel_gate(const Tensor& logits, double tau, RngStream& rng) {
  return gumbel_gate_with_noise(logits, tau,
                                sample_gumbel_diff(logits.shape(), rng));
}

Tensor mask_for_stage(const Tensor& mask, int h, int w) {
  if (mask.rank() != 2 && mask.rank() != 3)
    throw DimensionError("mask_for_stage: mask must be [Hg,Wg] or [N,Hg,Wg], "
                         "got " + shape_str(mask.shape()));
  const int hg = static_cast<int>(mask.dim(mask.rank() - 2));
  const int wg = static_cast<int>(mask.dim(mask.rank() - 1));
  if (h < hg || w < wg || h % hg != 0 || w % wg != 0 || h / hg != w / wg)
    throw DimensionError("mask_for_stage: stage " + std::to_string(h) + "x" +
                         std::to_string(w) + " is not an equal multiple of "
                         "grid " + std::to_string(hg) + "x" +
                         std::to_string(wg));
  const int factor = h / hg;
  if (factor == 1) return mask;
  return nearest_upsample(mask, factor);
}

void dump_mask(std::ostream& os, const std::string& layer, const GateMask& m) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", m.density());
  os << layer << '\t' << mask_kind_name(m.kind) << '\t' << buf;
  for (int64_t i = 0; i < m.values.numel(); ++i) {
    std::snprintf(buf, sizeof buf, "%g", m.values.data()[i]);
    os << ' ' << buf;
  }
  os << '\n';
}

}  // namespace dyngate
