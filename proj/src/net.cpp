#include "dyngate/net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "dyngate/error.hpp"
#include "dyngate/rng.hpp"

namespace dyngate {
namespace {

constexpr char kMagic[8] = {'D', 'Y', 'N', 'G', 'C', 'K', 'P', 'T'};
constexpr uint64_t kVersion = 1;

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_f64(std::ostream& os, double v) {
  write_u64(os, std::bit_cast<uint64_t>(v));
}

void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint64_t read_u64(std::istream& is, const char* what) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is)
    throw FormatError(std::string("checkpoint truncated while reading ") +
                      what);
  return v;
}

double read_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(read_u64(is, what));
}

std::string read_str(std::istream& is, const char* what) {
  const uint64_t n = read_u64(is, what);
  if (n > (1u << 20))
    throw FormatError(std::string("checkpoint string too long for ") + what);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is)
    throw FormatError(std::string("checkpoint truncated while reading ") +
                      what);
  return s;
}

int read_int(std::istream& is, const char* what) {
  const uint64_t v = read_u64(is, what);
  if (v > (1u << 30))
    throw FormatError(std::string("checkpoint field out of range: ") + what);
  return static_cast<int>(v);
}

// Per-sample standardization plus contrast-polarity canonicalization.
// Domain presets shift global brightness/contrast far outside the source
// statistics and may invert figure/ground polarity (dark scenes render a
// bright object on a dark field); removing the per-image first moments and
// orienting the contrast so the central region is the bright side keeps
// shape and texture cues while making unseen styles land in-range. Plain
// data prep: no autodiff, fixed serial order.
Tensor standardize_images(const Tensor& images) {
  const int64_t n = images.dim(0);
  const int64_t c = images.dim(1);
  const int64_t h = images.dim(2);
  const int64_t w = images.dim(3);
  const int64_t px = c * h * w;
  Tensor out(images.shape());
  const double* src = images.data();
  double* dst = out.data();
  for (int64_t i = 0; i < n; ++i) {
    const double* s = src + i * px;
    double mean = 0.0;
    for (int64_t j = 0; j < px; ++j) mean += s[j];
    mean /= static_cast<double>(px);
    double var = 0.0;
    for (int64_t j = 0; j < px; ++j) var += (s[j] - mean) * (s[j] - mean);
    var /= static_cast<double>(px);
    const double inv = 1.0 / std::sqrt(var + 1e-8);
    double* d = dst + i * px;
    for (int64_t j = 0; j < px; ++j) d[j] = (s[j] - mean) * inv;
    // center-vs-whole contrast: the whole image has mean zero, so a negative
    // central window means the figure is the dark side -> flip
    double center = 0.0;
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = h / 4; y < h - h / 4; ++y)
        for (int64_t x2 = w / 4; x2 < w - w / 4; ++x2)
          center += d[(ch * h + y) * w + x2];
    if (center < 0.0)
      for (int64_t j = 0; j < px; ++j) d[j] = -d[j];
  }
  return out;
}

}  // namespace

Variant parse_variant(const std::string& name) {
  if (name == "base") return Variant::base;
  if (name == "dynamic") return Variant::dynamic;
  if (name == "normal") return Variant::normal;
  if (name == "slot") return Variant::slot;
  throw ValidationError("unknown variant '" + name +
                        "' (expected base, dynamic, normal, or slot)");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::base: return "base";
    case Variant::dynamic: return "dynamic";
    case Variant::normal: return "normal";
    case Variant::slot: return "slot";
  }
  throw ValidationError("invalid variant value");
}

void NetworkConfig::validate() const {
  if (widths.empty())
    throw ValidationError("network: widths must not be empty");
  for (int w : widths)
    if (w < 1) throw ValidationError("network: widths must be positive");
  if (blocks_per_stage < 1)
    throw ValidationError("network: blocks_per_stage must be >= 1");
  if (in_channels < 1 || in_h < 1 || in_w < 1)
    throw ValidationError("network: input geometry must be positive");
  if (classes < 2)
    throw ValidationError("network: class count must be >= 2");
  if (prompt_tokens < 1)
    throw ValidationError("network: prompt_tokens must be >= 1");
  if (fusion.slots < 1 || fusion.d < 1 || fusion.d_text < 8 ||
      fusion.iters < 0)
    throw ValidationError("network: fusion config invalid (slots/d >= 1, "
                          "d_text >= 8, iters >= 0)");
  if (!(gate.threshold > 0.0) || !(gate.threshold < 1.0))
    throw ValidationError("network: gate threshold must lie in (0,1)");
  if (!(gate.tau > 0.0))
    throw ValidationError("network: gate tau must be positive");
  if (gate.base_grid < 1)
    throw ValidationError("network: gate base_grid must be >= 1");
  int h = in_h, w = in_w;
  for (size_t s = 0; s < widths.size(); ++s) {
    const int hg = std::min(gate.base_grid, h);
    const int wg = std::min(gate.base_grid, w);
    if (h % hg != 0 || w % wg != 0 || h / hg != w / wg)
      throw ValidationError("network: stage " + std::to_string(s) +
                            " resolution " + std::to_string(h) + "x" +
                            std::to_string(w) +
                            " is incompatible with gate grid " +
                            std::to_string(hg) + "x" + std::to_string(wg));
    if (s + 1 < widths.size()) {
      if (h % 2 != 0 || w % 2 != 0)
        throw ValidationError("network: stage " + std::to_string(s) +
                              " resolution " + std::to_string(h) + "x" +
                              std::to_string(w) + " cannot be pooled");
      h /= 2;
      w /= 2;
    }
  }
}

DynamicNet::DynamicNet(NetworkConfig cfg, uint64_t seed)
    : cfg_(std::move(cfg)),
      seed_(seed),
      prompts_({cfg_.fusion.d_text, cfg_.prompt_tokens,
                derive_seed(seed, "prompt")}) {
  cfg_.validate();
  build();
}

Tensor DynamicNet::init_param(const std::string& name, Shape shape,
                              double stddev, double bias_fill, bool constant) {
  Tensor t(std::move(shape), bias_fill);
  if (!constant) {
    RngStream rng(derive_seed(seed_, name));
    for (int64_t i = 0; i < t.numel(); ++i)
      t.data()[i] = rng.normal() * stddev;
  }
  params_.emplace(name, t);
  return t;
}

void DynamicNet::build() {
  const int stages = static_cast<int>(cfg_.widths.size());
  const int s_slots = cfg_.fusion.slots, d = cfg_.fusion.d;
  int h = cfg_.in_h, w = cfg_.in_w;
  int in_c = cfg_.in_channels;
  int idx = 0;
  for (int s = 0; s < stages; ++s) {
    for (int b = 0; b < cfg_.blocks_per_stage; ++b, ++idx) {
      const int out_c = cfg_.widths[s];
      const std::string pre = "block" + std::to_string(idx) + ".";
      Block blk;
      blk.conv1_w = init_param(pre + "conv1.w", {out_c, in_c, 3, 3},
                               std::sqrt(2.0 / (9.0 * in_c)), 0.0, false);
      blk.conv1_b = init_param(pre + "conv1.b", {out_c}, 0.0, 0.0, true);
      blk.norm1_g = init_param(pre + "norm1.g", {out_c}, 0.0, 1.0, true);
      blk.norm1_b = init_param(pre + "norm1.b", {out_c}, 0.0, 0.0, true);
      blk.conv2_w = init_param(pre + "conv2.w", {out_c, out_c, 3, 3},
                               std::sqrt(2.0 / (9.0 * out_c)), 0.0, false);
      blk.conv2_b = init_param(pre + "conv2.b", {out_c}, 0.0, 0.0, true);
      blk.norm2_g = init_param(pre + "norm2.g", {out_c}, 0.0, 1.0, true);
      blk.norm2_b = init_param(pre + "norm2.b", {out_c}, 0.0, 0.0, true);
      if (in_c != out_c)
        blk.skip_w = init_param(pre + "skip.w", {out_c, in_c},
                                std::sqrt(2.0 / in_c), 0.0, false);

      blk.norm1_state.running_mean = Tensor({out_c}, 0.0);
      blk.norm1_state.running_var = Tensor({out_c}, 1.0);
      blk.norm2_state.running_mean = Tensor({out_c}, 0.0);
      blk.norm2_state.running_var = Tensor({out_c}, 1.0);
      buffers_.emplace(pre + "norm1.rm", blk.norm1_state.running_mean);
      buffers_.emplace(pre + "norm1.rv", blk.norm1_state.running_var);
      buffers_.emplace(pre + "norm2.rm", blk.norm2_state.running_mean);
      buffers_.emplace(pre + "norm2.rv", blk.norm2_state.running_var);

      BlockInfo info;
      info.in_c = in_c;
      info.out_c = out_c;
      info.h = h;
      info.w = w;
      info.hg = std::min(cfg_.gate.base_grid, h);
      info.wg = std::min(cfg_.gate.base_grid, w);
      info.has_skip = in_c != out_c;

      if (gated()) {
        const int sd = s_slots * d;
        blk.init.w = init_param(pre + "init.w", {in_c, sd},
                                std::sqrt(2.0 / in_c), 0.0, false);
        blk.init.b = init_param(pre + "init.b", {sd}, 0.0, 0.0, true);
        blk.head.wc = init_param(pre + "gate.wc", {sd, out_c},
                                 std::sqrt(2.0 / sd), 0.0, false);
        blk.head.bc = init_param(pre + "gate.bc", {out_c}, 0.0,
                                 cfg_.gate_bias_init, true);
        blk.head.ws = init_param(pre + "gate.ws", {sd, info.hg * info.wg},
                                 std::sqrt(2.0 / sd), 0.0, false);
        blk.head.bs = init_param(pre + "gate.bs", {info.hg * info.wg}, 0.0,
                                 cfg_.gate_bias_init, true);
        blk.head.hg = info.hg;
        blk.head.wg = info.wg;
      }

      blk.last_in_stage = b + 1 == cfg_.blocks_per_stage;
      blocks_.push_back(std::move(blk));
      info_.push_back(info);
      in_c = out_c;
    }
    if (s + 1 < stages) {
      h /= 2;
      w /= 2;
    }
  }
  if (gated()) {
    fusion_.wq = init_param("fusion.wq", {d, d}, std::sqrt(2.0 / d), 0.0,
                            false);
    fusion_.wk = init_param("fusion.wk", {cfg_.fusion.d_text, d},
                            std::sqrt(2.0 / cfg_.fusion.d_text), 0.0, false);
    fusion_.wv = init_param("fusion.wv", {cfg_.fusion.d_text, d},
                            std::sqrt(2.0 / cfg_.fusion.d_text), 0.0, false);
    const std::pair<const char*, Tensor*> gru[] = {
        {"fusion.gru.wz", &fusion_.gru.wz}, {"fusion.gru.uz", &fusion_.gru.uz},
        {"fusion.gru.wr", &fusion_.gru.wr}, {"fusion.gru.ur", &fusion_.gru.ur},
        {"fusion.gru.wh", &fusion_.gru.wh}, {"fusion.gru.uh", &fusion_.gru.uh}};
    for (const auto& [name, slot] : gru)
      *slot = init_param(name, {d, d}, std::sqrt(2.0 / d), 0.0, false);
    fusion_.gru.bz = init_param("fusion.gru.bz", {d}, 0.0, 0.0, true);
    fusion_.gru.br = init_param("fusion.gru.br", {d}, 0.0, 0.0, true);
    fusion_.gru.bh = init_param("fusion.gru.bh", {d}, 0.0, 0.0, true);
  }
  const int c_last = cfg_.widths.back();
  head_w_ = init_param("head.w", {c_last, cfg_.classes},
                       std::sqrt(2.0 / c_last), 0.0, false);
  head_b_ = init_param("head.b", {cfg_.classes}, 0.0, 0.0, true);
}

void DynamicNet::register_scene(const std::string& name) {
  expand_template(name);  // validates non-empty
  if (std::find(scenes_.begin(), scenes_.end(), name) != scenes_.end())
    return;
  scenes_.push_back(name);
  prompts_.embedding(name);  // warm the cache
}

const Tensor& DynamicNet::resolve_prompt(const std::string& scene,
                                         bool strict) {
  if (std::find(scenes_.begin(), scenes_.end(), scene) != scenes_.end())
    return prompts_.embedding(scene);
  if (strict) {
    std::string known;
    for (const auto& s : scenes_) known += (known.empty() ? "" : ", ") + s;
    throw UnknownDomainError("unknown scene '" + scene + "' (known: " +
                             (known.empty() ? "<none>" : known) + ")");
  }
  return prompts_.fallback_embedding();
}

DynamicNet::ForwardResult DynamicNet::forward(const Tensor& images,
                                              const std::string& scene,
                                              bool train, RngStream* gumbel,
                                              const ForwardHooks* hooks,
                                              bool strict_scene) {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels ||
      images.dim(2) != cfg_.in_h || images.dim(3) != cfg_.in_w)
    throw DimensionError("forward: images must be [N," +
                         std::to_string(cfg_.in_channels) + "," +
                         std::to_string(cfg_.in_h) + "," +
                         std::to_string(cfg_.in_w) + "], got " +
                         shape_str(images.shape()));
  const int64_t n = images.dim(0);
  const bool open = hooks && hooks->force_open;
  const bool use_gates = gated() && !open;

  const Tensor* prompt = nullptr;
  if (use_gates) prompt = &resolve_prompt(scene, strict_scene);

  ForwardResult res;
  Tensor x = standardize_images(images);
  const int stages = static_cast<int>(cfg_.widths.size());
  int stage = 0;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    Block& blk = blocks_[i];
    const BlockInfo& info = info_[i];

    Tensor mask_c, mask_s;
    if (use_gates) {
      const Tensor* fc = hooks && i < hooks->force_channel.size() &&
                                 hooks->force_channel[i].defined()
                             ? &hooks->force_channel[i]
                             : nullptr;
      const Tensor* fs = hooks && i < hooks->force_spatial.size() &&
                                 hooks->force_spatial[i].defined()
                             ? &hooks->force_spatial[i]
                             : nullptr;
      if (fc && fs) {
        mask_c = *fc;
        mask_s = *fs;
      } else {
        Tensor fused;
        switch (cfg_.variant) {
          case Variant::slot:
            fused = fuse(x, *prompt, blk.init, fusion_, cfg_.fusion);
            break;
          case Variant::normal: {
            const Tensor s0 = init_slots(x, blk.init, cfg_.fusion.slots,
                                         cfg_.fusion.d);
            fused = attend(attention_scores(s0, *prompt, fusion_, cfg_.fusion),
                           *prompt, fusion_);
            break;
          }
          case Variant::dynamic:
            fused = init_slots(x, blk.init, cfg_.fusion.slots, cfg_.fusion.d);
            break;
          case Variant::base:
            throw ValidationError("forward: base variant cannot gate");
        }
        auto [ch_logits, sp_logits] =
            gate_logits(fused, blk.head, cfg_.fusion.slots, cfg_.fusion.d);
        if (train) {
          const Tensor noise_c =
              hooks && hooks->noise_channel
                  ? hooks->noise_channel->at(i)
                  : (gumbel ? sample_gumbel_diff(ch_logits.shape(), *gumbel)
                            : Tensor());
          const Tensor noise_s =
              hooks && hooks->noise_spatial
                  ? hooks->noise_spatial->at(i)
                  : (gumbel ? sample_gumbel_diff(sp_logits.shape(), *gumbel)
                            : Tensor());
          if (!noise_c.defined() || !noise_s.defined())
            throw ValidationError("forward: train mode needs a gumbel stream "
                                  "or frozen noise");
          const auto gc =
              gumbel_gate_with_noise(ch_logits, cfg_.gate.tau, noise_c);
          const auto gs =
              gumbel_gate_with_noise(sp_logits, cfg_.gate.tau, noise_s);
          const bool soft = hooks && hooks->soft_gates;
          mask_c = soft ? gc.soft : gc.hard;
          mask_s = soft ? gs.soft : gs.hard;
          res.soft_densities.push_back(mean_all(gc.soft));
          res.soft_densities.push_back(mean_all(gs.soft));
        } else {
          mask_c = binarize(ch_logits, cfg_.gate.threshold);
          mask_s = binarize(sp_logits, cfg_.gate.threshold);
        }
        if (fc) mask_c = *fc;
        if (fs) mask_s = *fs;
      }
      if (mask_c.rank() != 2 || mask_c.dim(0) != n ||
          mask_c.dim(1) != info.out_c || mask_s.rank() != 3 ||
          mask_s.dim(0) != n || mask_s.dim(1) != info.hg ||
          mask_s.dim(2) != info.wg)
        throw DimensionError("forward: block " + std::to_string(i) +
                             " mask shapes " + shape_str(mask_c.shape()) +
                             "/" + shape_str(mask_s.shape()) + " invalid");
      res.masks.push_back({MaskKind::channel, mask_c});
      res.masks.push_back({MaskKind::spatial, mask_s});
    }

    Tensor u = relu(channel_norm(conv2d(x, blk.conv1_w, blk.conv1_b),
                                 blk.norm1_g, blk.norm1_b, blk.norm1_state,
                                 train));
    if (hooks && hooks->perturb_block == static_cast<int>(i)) {
      if (hooks->perturb_channel < 0 || hooks->perturb_channel >= info.out_c)
        throw ValidationError("forward: perturb channel out of range");
      Tensor delta(u.shape());
      double* pd = delta.data();
      const int64_t hw = static_cast<int64_t>(info.h) * info.w;
      for (int64_t nb = 0; nb < n; ++nb)
        for (int64_t j = 0; j < hw; ++j)
          pd[(nb * info.out_c + hooks->perturb_channel) * hw + j] =
              hooks->perturb_delta;
      u = add(u, delta);
    }
    if (use_gates) u = mul_channel(u, mask_c);

    Tensor v = channel_norm(conv2d(u, blk.conv2_w, blk.conv2_b), blk.norm2_g,
                            blk.norm2_b, blk.norm2_state, train);
    if (use_gates)
      v = mul_spatial(v, mask_for_stage(mask_s, info.h, info.w));

    const Tensor skip = blk.skip_w.defined() ? conv1x1(x, blk.skip_w) : x;
    x = relu(add(v, skip));

    if (blk.last_in_stage && stage + 1 < stages) {
      x = avgpool2(x);
      ++stage;
    }
  }
  res.logits = linear(global_avg_pool(x), head_w_, head_b_);
  return res;
}

MacReport DynamicNet::count_macs(const std::vector<GateMask>& masks) const {
  MacReport rep;
  const bool dense_only = masks.empty();
  if (!dense_only && masks.size() != 2 * blocks_.size())
    throw ValidationError("count_macs: expected " +
                          std::to_string(2 * blocks_.size()) +
                          " masks (channel+spatial per block), got " +
                          std::to_string(masks.size()));
  int64_t samples = 1;
  if (!dense_only) {
    if (!masks[0].values.defined() || masks[0].values.rank() != 2)
      throw ValidationError("count_macs: channel masks must be [N,C]");
    samples = masks[0].values.dim(0);
  }
  double gated_acc = 0.0;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const BlockInfo& in = info_[i];
    const int64_t hw = static_cast<int64_t>(in.h) * in.w;
    const int64_t conv1 = 9LL * in.in_c * in.out_c * hw;
    const int64_t conv2 = 9LL * in.out_c * in.out_c * hw;
    const int64_t skip = in.has_skip
                             ? static_cast<int64_t>(in.in_c) * in.out_c * hw
                             : 0;
    rep.dense += conv1 + conv2 + skip;
    if (dense_only) {
      gated_acc += static_cast<double>(conv1 + conv2 + skip);
      continue;
    }
    const GateMask& mc = masks[2 * i];
    const GateMask& ms = masks[2 * i + 1];
    if (mc.kind != MaskKind::channel || ms.kind != MaskKind::spatial ||
        mc.values.rank() != 2 || mc.values.dim(0) != samples ||
        mc.values.dim(1) != in.out_c || ms.values.rank() != 3 ||
        ms.values.dim(0) != samples || ms.values.dim(1) != in.hg ||
        ms.values.dim(2) != in.wg)
      throw ValidationError("count_macs: block " + std::to_string(i) +
                            " mask kinds or shapes are wrong");
    const int64_t f2 = (in.h / in.hg) * static_cast<int64_t>(in.w / in.wg);
    const int64_t grid = static_cast<int64_t>(in.hg) * in.wg;
    for (int64_t nb = 0; nb < samples; ++nb) {
      double on_c = 0.0, on_g = 0.0;
      for (int64_t j = 0; j < in.out_c; ++j)
        on_c += mc.values.data()[nb * in.out_c + j];
      for (int64_t j = 0; j < grid; ++j)
        on_g += ms.values.data()[nb * grid + j];
      const double on_sp = on_g * static_cast<double>(f2);
      gated_acc += 9.0 * in.in_c * in.out_c * on_sp;          // conv1
      gated_acc += 9.0 * in.out_c * on_c * on_sp;             // conv2
      gated_acc += static_cast<double>(skip);
    }
  }
  rep.dense *= dense_only ? 1 : samples;
  rep.gated = static_cast<int64_t>(std::llround(gated_acc));
  rep.ratio = gated_acc / static_cast<double>(rep.dense);
  return rep;
}

void DynamicNet::save_checkpoint(const std::string& path,
                                 const CheckpointMeta& meta) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof kMagic);
  write_u64(os, kVersion);
  write_u64(os, cfg_.widths.size());
  for (int w : cfg_.widths) write_u64(os, static_cast<uint64_t>(w));
  write_u64(os, static_cast<uint64_t>(cfg_.blocks_per_stage));
  write_u64(os, static_cast<uint64_t>(cfg_.in_channels));
  write_u64(os, static_cast<uint64_t>(cfg_.in_h));
  write_u64(os, static_cast<uint64_t>(cfg_.in_w));
  write_u64(os, static_cast<uint64_t>(cfg_.classes));
  write_u64(os, static_cast<uint64_t>(cfg_.prompt_tokens));
  write_u64(os, static_cast<uint64_t>(cfg_.fusion.slots));
  write_u64(os, static_cast<uint64_t>(cfg_.fusion.d));
  write_u64(os, static_cast<uint64_t>(cfg_.fusion.d_text));
  write_u64(os, static_cast<uint64_t>(cfg_.fusion.iters));
  write_u64(os, cfg_.fusion.softmax_over_queries ? 1 : 0);
  write_f64(os, cfg_.gate.threshold);
  write_f64(os, cfg_.gate.tau);
  write_u64(os, static_cast<uint64_t>(cfg_.gate.base_grid));
  write_u64(os, static_cast<uint64_t>(cfg_.variant));
  write_f64(os, cfg_.gate_bias_init);
  write_u64(os, seed_);
  write_u64(os, scenes_.size());
  for (const auto& s : scenes_) write_str(os, s);
  write_u64(os, static_cast<uint64_t>(meta.epoch));
  write_f64(os, meta.p);
  write_u64(os, params_.size());
  for (const auto& [name, t] : params_) {
    write_str(os, name);
    save_tensor(os, t);
  }
  write_u64(os, buffers_.size());
  for (const auto& [name, t] : buffers_) {
    write_str(os, name);
    save_tensor(os, t);
  }
  if (!os) throw FormatError("checkpoint write failed: " + path);
}

DynamicNet DynamicNet::load_checkpoint(const std::string& path,
                                       CheckpointMeta* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint: " + path);
  char magic[8] = {};
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw FormatError("not a checkpoint file: " + path);
  const uint64_t version = read_u64(is, "version");
  if (version != kVersion)
    throw FormatError("checkpoint version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kVersion) +
                      ")");
  NetworkConfig cfg;
  cfg.widths.clear();
  const int nw = read_int(is, "width count");
  for (int i = 0; i < nw; ++i) cfg.widths.push_back(read_int(is, "width"));
  cfg.blocks_per_stage = read_int(is, "blocks_per_stage");
  cfg.in_channels = read_int(is, "in_channels");
  cfg.in_h = read_int(is, "in_h");
  cfg.in_w = read_int(is, "in_w");
  cfg.classes = read_int(is, "classes");
  cfg.prompt_tokens = read_int(is, "prompt_tokens");
  cfg.fusion.slots = read_int(is, "slots");
  cfg.fusion.d = read_int(is, "slot dim");
  cfg.fusion.d_text = read_int(is, "text dim");
  cfg.fusion.iters = read_int(is, "fusion iters");
  cfg.fusion.softmax_over_queries = read_u64(is, "softmax axis") != 0;
  cfg.gate.threshold = read_f64(is, "threshold");
  cfg.gate.tau = read_f64(is, "tau");
  cfg.gate.base_grid = read_int(is, "base_grid");
  const int variant = read_int(is, "variant");
  if (variant > 3) throw FormatError("checkpoint variant out of range");
  cfg.variant = static_cast<Variant>(variant);
  cfg.gate_bias_init = read_f64(is, "gate_bias_init");
  const uint64_t seed = read_u64(is, "seed");
  const int n_scenes = read_int(is, "scene count");
  std::vector<std::string> scenes;
  for (int i = 0; i < n_scenes; ++i)
    scenes.push_back(read_str(is, "scene name"));
  CheckpointMeta m;
  m.epoch = static_cast<int64_t>(read_u64(is, "epoch"));
  m.p = read_f64(is, "p");
  if (meta) *meta = m;

  DynamicNet net(cfg, seed);
  for (const auto& s : scenes) net.register_scene(s);
  for (auto* table : {&net.params_, &net.buffers_}) {
    const bool is_params = table == &net.params_;
    const char* what = is_params ? "parameter" : "buffer";
    const uint64_t count = read_u64(is, "table size");
    if (count != table->size())
      throw FormatError("checkpoint holds " + std::to_string(count) + " " +
                        what + "s, network expects " +
                        std::to_string(table->size()));
    for (uint64_t i = 0; i < count; ++i) {
      const std::string name = read_str(is, "entry name");
      auto it = table->find(name);
      if (it == table->end())
        throw FormatError(std::string("checkpoint has unknown ") + what +
                          " '" + name + "'");
      const Tensor stored = load_tensor(is);
      if (stored.shape() != it->second.shape())
        throw FormatError("checkpoint " + std::string(what) + " '" + name +
                          "' has shape " + shape_str(stored.shape()) +
                          ", expected " + shape_str(it->second.shape()));
      std::copy(stored.data(), stored.data() + stored.numel(),
                it->second.data());
    }
  }
  return net;
}

}  // namespace dyngate
