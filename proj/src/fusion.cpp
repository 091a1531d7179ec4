#include "dyngate/fusion.hpp"

#include <cmath>
#include <string>

#include "dyngate/error.hpp"

namespace dyngate {
namespace {

void check_param(const Tensor& t, int64_t d0, int64_t d1, const char* name) {
  if (t.rank() != 2 || t.dim(0) != d0 || t.dim(1) != d1)
    throw DimensionError(std::string("fusion: ") + name + " must be [" +
                         std::to_string(d0) + ", " + std::to_string(d1) +
                         "], got " + shape_str(t.shape()));
}

void check_prompt(const Tensor& prompt, const FusionConfig& cfg) {
  if (prompt.rank() != 2 || prompt.dim(1) != cfg.d_text)
    throw DimensionError("fusion: prompt must be [P, " +
                         std::to_string(cfg.d_text) + "], got " +
                         shape_str(prompt.shape()));
}

void check_cfg(const FusionConfig& cfg) {
  if (cfg.slots < 1 || cfg.d < 1 || cfg.d_text < 1 || cfg.iters < 0)
    throw ValidationError("fusion config: slots/d/d_text must be positive and "
                          "iters >= 0");
}

}  // namespace

Tensor init_slots(const Tensor& feats, const InitProj& proj, int slots,
                  int d) {
  if (slots < 1 || d < 1)
    throw ValidationError("init_slots: slots and d must be positive");
  if (feats.rank() != 4)
    throw DimensionError("init_slots: features must be [N,C,H,W], got " +
                         shape_str(feats.shape()));
  const int64_t n = feats.dim(0), c = feats.dim(1);
  const int64_t sd = static_cast<int64_t>(slots) * d;
  check_param(proj.w, c, sd, "init projection w");
  if (proj.b.rank() != 1 || proj.b.dim(0) != sd)
    throw DimensionError("init_slots: projection bias must be [" +
                         std::to_string(sd) + "], got " +
                         shape_str(proj.b.shape()));
  const Tensor pooled = global_avg_pool(feats);          // [N, C]
  const Tensor flat = linear(pooled, proj.w, proj.b);    // [N, S*d]
  return reshape(flat, Shape{n * slots, d});
}

Tensor attention_scores(const Tensor& slots, const Tensor& prompt,
                        const FusionParams& p, const FusionConfig& cfg) {
  check_cfg(cfg);
  check_prompt(prompt, cfg);
  if (slots.rank() != 2 || slots.dim(1) != cfg.d)
    throw DimensionError("fusion: slots must be [N*S, " +
                         std::to_string(cfg.d) + "], got " +
                         shape_str(slots.shape()));
  if (slots.dim(0) % cfg.slots != 0)
    throw DimensionError("fusion: slot row count " +
                         std::to_string(slots.dim(0)) +
                         " is not a multiple of S=" + std::to_string(cfg.slots));
  check_param(p.wq, cfg.d, cfg.d, "wq");
  check_param(p.wk, cfg.d_text, cfg.d, "wk");
  const Tensor q = matmul(slots, p.wq);                   // [N*S, d]
  const Tensor k = matmul(prompt, p.wk);                  // [P, d]
  const Tensor raw = matmul(q, transpose(k));             // [N*S, P]
  const Tensor scaled = scale(raw, 1.0 / std::sqrt(static_cast<double>(cfg.d)));
  if (!cfg.softmax_over_queries) return softmax(scaled, 1);
  // Per-sample competition between the S slots for each prompt token.
  const int64_t n = slots.dim(0) / cfg.slots;
  const Tensor grouped = reshape(scaled, Shape{n, cfg.slots, prompt.dim(0)});
  return reshape(softmax(grouped, 1), Shape{slots.dim(0), prompt.dim(0)});
}

Tensor attend(const Tensor& scores, const Tensor& prompt,
              const FusionParams& p) {
  if (scores.rank() != 2 || prompt.rank() != 2 ||
      scores.dim(1) != prompt.dim(0))
    throw DimensionError("fusion: scores " + shape_str(scores.shape()) +
                         " do not match prompt " + shape_str(prompt.shape()));
  if (p.wv.rank() != 2 || p.wv.dim(0) != prompt.dim(1))
    throw DimensionError("fusion: wv must be [" +
                         std::to_string(prompt.dim(1)) + ", d], got " +
                         shape_str(p.wv.shape()));
  return matmul(scores, matmul(prompt, p.wv));            // [N*S, d]
}

Tensor fuse_from(const Tensor& slots0, const Tensor& prompt,
                 const FusionParams& p, const FusionConfig& cfg) {
  check_cfg(cfg);
  Tensor slots = slots0;
  for (int t = 0; t < cfg.iters; ++t) {
    const Tensor upd = attend(attention_scores(slots, prompt, p, cfg), prompt,
                              p);
    slots = gru_cell(slots, upd, p.gru);
  }
  return slots;
}

Tensor fuse(const Tensor& feats, const Tensor& prompt, const InitProj& proj,
            const FusionParams& p, const FusionConfig& cfg) {
  check_cfg(cfg);
  return fuse_from(init_slots(feats, proj, cfg.slots, cfg.d), prompt, p, cfg);
}

}  // namespace dyngate
