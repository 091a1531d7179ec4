#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dyngate/error.hpp"
#include "dyngate/gradcheck.hpp"
#include "dyngate/loss.hpp"
#include "dyngate/net.hpp"
#include "dyngate/ops.hpp"
#include "dyngate/rng.hpp"

using namespace dyngate;

namespace {

NetworkConfig small_cfg(Variant v) {
  NetworkConfig cfg;
  cfg.widths = {4, 6};
  cfg.in_channels = 3;
  cfg.in_h = cfg.in_w = 8;
  cfg.classes = 3;
  // Must cover the four template words plus the scene token; shorter
  // windows would truncate the scene away and collapse all prompts.
  cfg.prompt_tokens = 6;
  cfg.fusion.slots = 2;
  cfg.fusion.d = 4;
  cfg.fusion.d_text = 8;
  cfg.fusion.iters = 2;
  cfg.gate.base_grid = 4;
  cfg.variant = v;
  return cfg;
}

Tensor rand_images(int n, const NetworkConfig& cfg, uint64_t seed) {
  RngStream rng(seed);
  Tensor t({n, cfg.in_channels, cfg.in_h, cfg.in_w});
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(0.0, 1.0);
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

DynamicNet::ForwardHooks ones_masks(const DynamicNet& net, int n) {
  DynamicNet::ForwardHooks hooks;
  for (const auto& info : net.block_info()) {
    hooks.force_channel.push_back(Tensor({n, info.out_c}, 1.0));
    hooks.force_spatial.push_back(Tensor({n, info.hg, info.wg}, 1.0));
  }
  return hooks;
}

}  // namespace

TEST_SUITE("net") {

TEST_CASE("parameter registry and deterministic init") {
  DynamicNet net(small_cfg(Variant::slot), 17);
  auto& p = net.params();
  CHECK(p.count("block0.conv1.w") == 1);
  CHECK(p.count("block1.skip.w") == 1);
  CHECK(p.count("fusion.gru.uh") == 1);
  CHECK(p.count("block1.gate.ws") == 1);
  CHECK(p.count("head.w") == 1);
  CHECK(p.at("block0.conv1.w").shape() == Shape{4, 3, 3, 3});
  CHECK(p.at("block1.skip.w").shape() == Shape{6, 4});
  // Gate biases start at logit(sqrt(Td)) so gates begin mostly open.
  for (int64_t i = 0; i < p.at("block0.gate.bc").numel(); ++i)
    CHECK(p.at("block0.gate.bc").data()[i] ==
          doctest::Approx(0.8813735870195429).epsilon(1e-15));
  CHECK(p.at("block0.norm1.g").data()[0] == 1.0);
  CHECK(p.at("block0.conv1.b").data()[0] == 0.0);

  DynamicNet same(small_cfg(Variant::slot), 17);
  DynamicNet other(small_cfg(Variant::slot), 18);
  CHECK(bitwise_equal(p.at("block0.conv1.w"),
                      same.params().at("block0.conv1.w")));
  CHECK_FALSE(bitwise_equal(p.at("block0.conv1.w"),
                            other.params().at("block0.conv1.w")));

  DynamicNet base(small_cfg(Variant::base), 17);
  CHECK(base.params().count("fusion.wq") == 0);
  CHECK(base.params().count("block0.gate.wc") == 0);
  CHECK(base.params().count("block0.init.w") == 0);
  // Shared parameters are seeded per name: identical across variants.
  CHECK(bitwise_equal(p.at("block0.conv1.w"),
                      base.params().at("block0.conv1.w")));
  CHECK(bitwise_equal(p.at("head.w"), base.params().at("head.w")));
}

TEST_CASE("config validation") {
  NetworkConfig cfg = small_cfg(Variant::slot);
  cfg.widths.clear();
  CHECK_THROWS_AS(DynamicNet(cfg, 1), ValidationError);
  cfg = small_cfg(Variant::slot);
  cfg.classes = 1;
  CHECK_THROWS_AS(DynamicNet(cfg, 1), ValidationError);
  cfg = small_cfg(Variant::slot);
  cfg.in_h = 6;  // stage1 would be 3x3 with grid 4
  CHECK_THROWS_AS(DynamicNet(cfg, 1), ValidationError);
  cfg = small_cfg(Variant::slot);
  cfg.gate.tau = 0.0;
  CHECK_THROWS_AS(DynamicNet(cfg, 1), ValidationError);
  CHECK_THROWS_AS(parse_variant("fancy"), ValidationError);
  CHECK(parse_variant("slot") == Variant::slot);
  CHECK(std::string(variant_name(Variant::dynamic)) == "dynamic");
}

TEST_CASE("forward shapes and determinism") {
  DynamicNet net(small_cfg(Variant::slot), 21);
  net.register_scene("photo");
  const Tensor images = rand_images(2, net.config(), 5);

  NoGradGuard ng;
  auto r1 = net.forward(images, "photo", false);
  auto r2 = net.forward(images, "photo", false);
  REQUIRE(r1.logits.shape() == Shape{2, 3});
  CHECK(bitwise_equal(r1.logits, r2.logits));
  REQUIRE(r1.masks.size() == 4);  // channel+spatial per block
  CHECK(r1.masks[0].kind == MaskKind::channel);
  CHECK(r1.masks[1].kind == MaskKind::spatial);
  CHECK(r1.masks[0].values.shape() == Shape{2, 4});
  CHECK(r1.masks[1].values.shape() == Shape{2, 4, 4});
  CHECK(r1.soft_densities.empty());
  for (const auto& m : r1.masks)
    for (int64_t i = 0; i < m.values.numel(); ++i) {
      const double v = m.values.data()[i];
      CHECK((v == 0.0 || v == 1.0));
    }

  // Train mode with identical streams reproduces masks and logits.
  RngStream g1(900), g2(900);
  auto t1 = net.forward(images, "photo", true, &g1);
  auto t2 = net.forward(images, "photo", true, &g2);
  CHECK(bitwise_equal(t1.logits, t2.logits));
  REQUIRE(t1.soft_densities.size() == 4);
  for (size_t i = 0; i < t1.masks.size(); ++i)
    CHECK(bitwise_equal(t1.masks[i].values, t2.masks[i].values));
  for (const auto& d : t1.soft_densities) {
    CHECK(d.numel() == 1);
    CHECK(d.item() > 0.0);
    CHECK(d.item() < 1.0);
  }
}

TEST_CASE("all-ones masks reproduce the ungated path bitwise") {
  DynamicNet net(small_cfg(Variant::slot), 23);
  net.register_scene("photo");
  const Tensor images = rand_images(2, net.config(), 7);
  NoGradGuard ng;

  DynamicNet::ForwardHooks open;
  open.force_open = true;
  const auto ungated = net.forward(images, "photo", false, nullptr, &open);
  CHECK(ungated.masks.empty());

  const auto hooks = ones_masks(net, 2);
  const auto forced = net.forward(images, "photo", false, nullptr, &hooks);
  REQUIRE(forced.masks.size() == 4);
  CHECK(bitwise_equal(ungated.logits, forced.logits));
}

TEST_CASE("forced-open gated net matches the base variant bitwise") {
  DynamicNet gated(small_cfg(Variant::slot), 29);
  DynamicNet base(small_cfg(Variant::base), 29);
  const Tensor images = rand_images(2, gated.config(), 11);
  NoGradGuard ng;

  DynamicNet::ForwardHooks open;
  open.force_open = true;
  const auto a = gated.forward(images, "photo", false, nullptr, &open);
  const auto b = base.forward(images, "photo", false);
  CHECK(b.masks.empty());
  CHECK(bitwise_equal(a.logits, b.logits));
}

TEST_CASE("gated-off channels are local: perturbations cannot leak") {
  DynamicNet net(small_cfg(Variant::slot), 31);
  net.register_scene("photo");
  const Tensor images = rand_images(2, net.config(), 13);
  NoGradGuard ng;

  // Gate channel 2 of block 0 closed, everything else open.
  auto hooks = ones_masks(net, 2);
  for (int nb = 0; nb < 2; ++nb)
    hooks.force_channel[0].data()[nb * 4 + 2] = 0.0;
  const auto clean = net.forward(images, "photo", false, nullptr, &hooks);

  auto perturbed = hooks;
  perturbed.perturb_block = 0;
  perturbed.perturb_channel = 2;
  perturbed.perturb_delta = 1e6;
  const auto poked = net.forward(images, "photo", false, nullptr, &perturbed);
  CHECK(bitwise_equal(clean.logits, poked.logits));

  // Control: the same perturbation on an open channel must change logits.
  auto control = hooks;
  control.perturb_block = 0;
  control.perturb_channel = 1;
  control.perturb_delta = 1e6;
  const auto moved = net.forward(images, "photo", false, nullptr, &control);
  CHECK_FALSE(bitwise_equal(clean.logits, moved.logits));
}

TEST_CASE("mac counting matches the analytic density products") {
  DynamicNet net(small_cfg(Variant::slot), 37);
  // block0: 3->4 at 8x8 (skip), block1: 4->6 at 4x4 (skip).
  const auto dense = net.count_macs({});
  const int64_t b0 = 9 * 3 * 4 * 64 + 9 * 4 * 4 * 64 + 3 * 4 * 64;
  const int64_t b1 = 9 * 4 * 6 * 16 + 9 * 6 * 6 * 16 + 4 * 6 * 16;
  CHECK(dense.dense == b0 + b1);
  CHECK(dense.gated == dense.dense);
  CHECK(dense.ratio == 1.0);

  RngStream rng(71);
  std::vector<GateMask> masks;
  for (const auto& info : net.block_info()) {
    GateMask ch;
    ch.kind = MaskKind::channel;
    ch.values = Tensor({1, info.out_c});
    for (int64_t i = 0; i < ch.values.numel(); ++i)
      ch.values.data()[i] = rng.next_double() < 0.6 ? 1.0 : 0.0;
    GateMask sp;
    sp.kind = MaskKind::spatial;
    sp.values = Tensor({1, info.hg, info.wg});
    for (int64_t i = 0; i < sp.values.numel(); ++i)
      sp.values.data()[i] = rng.next_double() < 0.7 ? 1.0 : 0.0;
    masks.push_back(ch);
    masks.push_back(sp);
  }
  const auto rep = net.count_macs(masks);
  double analytic = 0.0;
  for (size_t i = 0; i < net.block_info().size(); ++i) {
    const auto& info = net.block_info()[i];
    const double dc = masks[2 * i].density();
    const double ds = masks[2 * i + 1].density();
    const double hw = info.h * info.w;
    analytic += 9.0 * info.in_c * info.out_c * hw * ds;
    analytic += 9.0 * info.out_c * info.out_c * hw * dc * ds;
    analytic += info.in_c * info.out_c * hw;  // skip, never gated
  }
  CHECK(std::abs(rep.ratio - analytic / dense.dense) < 1e-12);
  CHECK(rep.gated < rep.dense);
  CHECK(rep.ratio > 0.0);
  CHECK(rep.ratio <= 1.0);

  masks.pop_back();
  CHECK_THROWS_AS(net.count_macs(masks), ValidationError);
}

TEST_CASE("checkpoint round trip preserves state bitwise") {
  const std::string path = "/tmp/dyngate_net_ckpt.bin";
  DynamicNet net(small_cfg(Variant::slot), 41);
  net.register_scene("photo");
  net.register_scene("night");
  const Tensor images = rand_images(2, net.config(), 17);
  {
    // Move the norm running stats off their init values.
    RngStream g(101);
    Tape::active().clear();
    net.forward(images, "photo", true, &g);
    Tape::active().clear();
  }
  CheckpointMeta meta;
  meta.epoch = 12;
  meta.p = 0.5488116360940264;
  net.save_checkpoint(path, meta);

  CheckpointMeta got;
  DynamicNet loaded = DynamicNet::load_checkpoint(path, &got);
  CHECK(got.epoch == 12);
  CHECK(got.p == meta.p);
  CHECK(loaded.scenes() == std::vector<std::string>{"photo", "night"});
  CHECK(loaded.config().variant == Variant::slot);
  for (const auto& [name, t] : net.params())
    CHECK(bitwise_equal(t, loaded.params().at(name)));
  for (const auto& [name, t] : net.buffers())
    CHECK(bitwise_equal(t, loaded.buffers().at(name)));

  NoGradGuard ng;
  const auto a = net.forward(images, "photo", false);
  const auto b = loaded.forward(images, "photo", false);
  CHECK(bitwise_equal(a.logits, b.logits));
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects foreign and damaged files") {
  const std::string path = "/tmp/dyngate_net_bad.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "definitely not a checkpoint";
  }
  CHECK_THROWS_WITH_AS(DynamicNet::load_checkpoint(path),
                       doctest::Contains("not a checkpoint"), FormatError);

  DynamicNet net(small_cfg(Variant::base), 43);
  net.save_checkpoint(path, {});
  // Bump the version field (bytes 8..15).
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const char two[8] = {2, 0, 0, 0, 0, 0, 0, 0};
    f.write(two, 8);
  }
  CHECK_THROWS_WITH_AS(DynamicNet::load_checkpoint(path),
                       doctest::Contains("version 2"), FormatError);

  net.save_checkpoint(path, {});
  // Truncate the parameter table.
  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(DynamicNet::load_checkpoint(path), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("scene resolution and strict mode") {
  DynamicNet net(small_cfg(Variant::slot), 47);
  net.register_scene("photo");
  const Tensor images = rand_images(1, net.config(), 19);
  NoGradGuard ng;

  CHECK_THROWS_AS(net.forward(images, "mars", false, nullptr, nullptr, true),
                  UnknownDomainError);
  // Non-strict: unknown scenes use the fallback prompt and still run.
  const auto fb = net.forward(images, "mars", false);
  const auto known = net.forward(images, "photo", false);
  REQUIRE(fb.logits.shape() == known.logits.shape());

  // Binarized gates can hide the prompt at init; the soft path exposes
  // the dependence continuously.
  std::vector<Tensor> noise_c, noise_s;
  RngStream g(771);
  for (const auto& info : net.block_info()) {
    noise_c.push_back(sample_gumbel_diff({1, info.out_c}, g));
    noise_s.push_back(sample_gumbel_diff({1, info.hg, info.wg}, g));
  }
  DynamicNet::ForwardHooks soft;
  soft.soft_gates = true;
  soft.noise_channel = &noise_c;
  soft.noise_spatial = &noise_s;
  const auto sa = net.forward(images, "photo", true, nullptr, &soft);
  const auto sb = net.forward(images, "mars", true, nullptr, &soft);
  CHECK_FALSE(bitwise_equal(sa.logits, sb.logits));

  CHECK_THROWS_AS(net.register_scene(""), ValidationError);

  // The base variant never consults the prompt.
  DynamicNet base(small_cfg(Variant::base), 47);
  const auto b1 = base.forward(images, "anything", false);
  const auto b2 = base.forward(images, "else", false);
  CHECK(bitwise_equal(b1.logits, b2.logits));
}

TEST_CASE("variants implement distinct fusion depths") {
  const Tensor images = rand_images(2, small_cfg(Variant::slot), 23);
  NoGradGuard ng;
  // Hard masks coincide at init, so compare through the soft gate path
  // where the fused slots reach the logits continuously.
  std::vector<Tensor> noise_c, noise_s;
  {
    DynamicNet probe(small_cfg(Variant::slot), 53);
    RngStream g(881);
    for (const auto& info : probe.block_info()) {
      noise_c.push_back(sample_gumbel_diff({2, info.out_c}, g));
      noise_s.push_back(sample_gumbel_diff({2, info.hg, info.wg}, g));
    }
  }
  DynamicNet::ForwardHooks soft;
  soft.soft_gates = true;
  soft.noise_channel = &noise_c;
  soft.noise_spatial = &noise_s;

  std::vector<Tensor> logits;
  for (Variant v : {Variant::dynamic, Variant::normal, Variant::slot}) {
    DynamicNet net(small_cfg(v), 53);
    net.register_scene("photo");
    logits.push_back(net.forward(images, "photo", true, nullptr, &soft).logits);
  }
  CHECK_FALSE(bitwise_equal(logits[0], logits[1]));
  CHECK_FALSE(bitwise_equal(logits[1], logits[2]));
  CHECK_FALSE(bitwise_equal(logits[0], logits[2]));

  // slot with iters=0 degenerates to the dynamic variant.
  NetworkConfig zero_iters = small_cfg(Variant::slot);
  zero_iters.fusion.iters = 0;
  DynamicNet slot0(zero_iters, 53);
  slot0.register_scene("photo");
  CHECK(bitwise_equal(
      slot0.forward(images, "photo", true, nullptr, &soft).logits,
      logits[0]));
}

TEST_CASE("forward input validation") {
  DynamicNet net(small_cfg(Variant::slot), 59);
  net.register_scene("photo");
  CHECK_THROWS_AS(net.forward(rand_images(1, small_cfg(Variant::slot), 1),
                              "photo", true),
                  ValidationError);  // train without a gumbel stream
  RngStream g(1);
  Tensor bad({1, 3, 4, 4}, 0.5);
  CHECK_THROWS_AS(net.forward(bad, "photo", false), DimensionError);

  DynamicNet::ForwardHooks hooks;
  hooks.perturb_block = 0;
  hooks.perturb_channel = 99;
  hooks.perturb_delta = 1.0;
  CHECK_THROWS_AS(net.forward(rand_images(1, small_cfg(Variant::slot), 1),
                              "photo", false, nullptr, &hooks),
                  ValidationError);
}

TEST_CASE("training loss gradients reach every parameter family") {
  DynamicNet net(small_cfg(Variant::slot), 61);
  net.register_scene("photo");
  const Tensor images = rand_images(2, net.config(), 29);
  const std::vector<int> labels = {0, 2};

  for (auto& [name, t] : net.params()) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape::active().clear();
  RngStream g(301);
  auto res = net.forward(images, "photo", true, &g);
  auto [low, up] = bound_loss_terms(res.soft_densities, 1.0, 0.5);
  Tensor loss = total_loss(cross_entropy(res.logits, labels), low, up, 1.0);
  Tape::active().backward(loss);

  auto grad_norm = [&](const char* name) {
    Tensor& t = net.params().at(name);
    if (!t.grad_touched()) return 0.0;
    double s = 0.0;
    for (int64_t i = 0; i < t.numel(); ++i) s += std::abs(t.grad()[i]);
    return s;
  };
  CHECK(grad_norm("head.w") > 0.0);
  CHECK(grad_norm("block0.conv1.w") > 0.0);
  CHECK(grad_norm("block1.gate.wc") > 0.0);
  CHECK(grad_norm("block0.init.w") > 0.0);
  CHECK(grad_norm("fusion.wq") > 0.0);
  CHECK(grad_norm("fusion.gru.wh") > 0.0);
  // Conv biases feed a channel norm, whose mean subtraction removes them:
  // their gradient is analytically zero.
  CHECK(grad_norm("block0.conv1.b") < 1e-10);
  CHECK(grad_norm("block1.conv2.b") < 1e-10);
  Tape::active().clear();
  for (auto& [name, t] : net.params()) t.set_requires_grad(false);
}

TEST_CASE("composite loss gradients match finite differences") {
  NetworkConfig cfg = small_cfg(Variant::slot);
  cfg.fusion.iters = 1;
  DynamicNet net(cfg, 67);
  net.register_scene("photo");
  const Tensor images = rand_images(2, cfg, 31);
  const std::vector<int> labels = {1, 2};

  // Freeze the gumbel noise and run the gates soft so the loss is smooth
  // up to relu kinks, which the checker detects and skips.
  std::vector<Tensor> noise_c, noise_s;
  RngStream g(401);
  for (const auto& info : net.block_info()) {
    noise_c.push_back(sample_gumbel_diff({2, info.out_c}, g));
    noise_s.push_back(sample_gumbel_diff({2, info.hg, info.wg}, g));
  }
  DynamicNet::ForwardHooks hooks;
  hooks.soft_gates = true;
  hooks.noise_channel = &noise_c;
  hooks.noise_spatial = &noise_s;

  // Conv biases have exactly-zero gradients under the channel norm (checked
  // separately above); finite differences of a zero gradient only measure
  // roundoff, so keep them out of the sampled composite check.
  std::vector<Tensor> inputs;
  for (auto& [name, t] : net.params())
    if (name.find("conv1.b") == std::string::npos &&
        name.find("conv2.b") == std::string::npos)
      inputs.push_back(t);
  const auto rep = gradcheck_sample(
      [&] {
        auto res = net.forward(images, "photo", true, nullptr, &hooks);
        auto [low, up] = bound_loss_terms(res.soft_densities, 0.9, 0.5);
        return total_loss(cross_entropy(res.logits, labels), low, up, 1.0);
      },
      inputs, 48, 12345);
  CHECK(rep.max_rel_err < 1e-4);
  CHECK(rep.checked > 0);
}

}  // TEST_SUITE
