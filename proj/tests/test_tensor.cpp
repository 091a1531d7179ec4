#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dyngate/gradcheck.hpp"
#include "dyngate/kernels.hpp"
#include "dyngate/ops.hpp"
#include "dyngate/rng.hpp"
#include "dyngate/tensor.hpp"

using namespace dyngate;

namespace {

Tensor rand_tensor(Shape shape, RngStream& rng, double lo = -1.0,
                   double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

bool close(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul identity and hand-computed product") {
  Tensor eye(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor m(Shape{2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor r = matmul(eye, m);
  for (int i = 0; i < 4; ++i) CHECK(r.data()[i] == m.data()[i]);

  Tensor a(Shape{2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor b(Shape{2, 1}, std::vector<double>{5, 6});
  Tensor c = matmul(a, b);
  CHECK(c.data()[0] == 17.0);
  CHECK(c.data()[1] == 39.0);

  CHECK_THROWS_AS(matmul(a, Tensor(Shape{3, 2}, 1.0)), DimensionError);
}

TEST_CASE("matmul gradcheck") {
  RngStream rng(7);
  Tensor a = rand_tensor({3, 4}, rng);
  Tensor b = rand_tensor({4, 2}, rng);
  Tensor w = rand_tensor({3, 2}, rng);
  auto f = [&] { return mean_all(mul(matmul(a, b), w)); };
  auto rep = gradcheck(f, {a, b});
  CHECK(rep.checked == 20);
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("softmax closed forms and row sums") {
  Tensor x(Shape{2}, std::vector<double>{0, 0});
  Tensor y = softmax(x, 0);
  CHECK(close(y.data()[0], 0.5, 1e-15));
  CHECK(close(y.data()[1], 0.5, 1e-15));

  Tensor x2(Shape{2}, std::vector<double>{0.0, std::log(3.0)});
  Tensor y2 = softmax(x2, 0);
  CHECK(close(y2.data()[0], 0.25, 1e-12));
  CHECK(close(y2.data()[1], 0.75, 1e-12));

  RngStream rng(3);
  Tensor r = rand_tensor({5, 7}, rng, -4, 4);
  Tensor s = softmax(r, 1);
  for (int i = 0; i < 5; ++i) {
    double sum = 0;
    for (int j = 0; j < 7; ++j) {
      const double v = s.data()[i * 7 + j];
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(close(sum, 1.0, 1e-9));
  }
  Tensor s0 = softmax(r, 0);
  for (int j = 0; j < 7; ++j) {
    double sum = 0;
    for (int i = 0; i < 5; ++i) sum += s0.data()[i * 7 + j];
    CHECK(close(sum, 1.0, 1e-9));
  }
  CHECK_THROWS_AS(softmax(r, 2), DimensionError);
}

TEST_CASE("softmax gradcheck") {
  RngStream rng(11);
  Tensor x = rand_tensor({2, 5}, rng, -2, 2);
  Tensor w = rand_tensor({2, 5}, rng);
  auto f = [&] { return mean_all(mul(softmax(x, 1), w)); };
  auto rep = gradcheck(f, {x});
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("gru_cell closed forms") {
  const int64_t d = 2;
  GruParams p;
  p.wz = Tensor(Shape{d, d});
  p.uz = Tensor(Shape{d, d});
  p.bz = Tensor(Shape{d});
  p.wr = Tensor(Shape{d, d});
  p.ur = Tensor(Shape{d, d});
  p.br = Tensor(Shape{d});
  p.wh = Tensor(Shape{d, d});
  p.uh = Tensor(Shape{d, d});
  p.bh = Tensor(Shape{d});

  Tensor h(Shape{1, d}, std::vector<double>{2, -2});
  Tensor x(Shape{1, d}, std::vector<double>{0.3, -0.7});
  Tensor hn = gru_cell(h, x, p);
  CHECK(close(hn.data()[0], 1.0, 1e-15));
  CHECK(close(hn.data()[1], -1.0, 1e-15));

  Tensor z(Shape{1, d});
  Tensor zn = gru_cell(z, z, p);
  CHECK(zn.data()[0] == 0.0);
  CHECK(zn.data()[1] == 0.0);

  CHECK_THROWS_AS(gru_cell(h, Tensor(Shape{1, 3}), p), DimensionError);
}

TEST_CASE("gru_cell gradcheck over params and state") {
  RngStream rng(23);
  const int64_t s = 3, d = 4;
  GruParams p;
  for (Tensor* w : {&p.wz, &p.uz, &p.wr, &p.ur, &p.wh, &p.uh})
    *w = rand_tensor({d, d}, rng, -0.5, 0.5);
  for (Tensor* b : {&p.bz, &p.br, &p.bh}) *b = rand_tensor({d}, rng, -0.5, 0.5);
  Tensor h = rand_tensor({s, d}, rng);
  Tensor x = rand_tensor({s, d}, rng);
  Tensor w = rand_tensor({s, d}, rng);
  auto f = [&] { return mean_all(mul(gru_cell(h, x, p), w)); };
  auto rep = gradcheck(f, {h, p.wz, p.uz, p.bz, p.wr, p.ur, p.br, p.wh, p.uh,
                           p.bh});
  CHECK(rep.max_rel_err <= 1e-5);
}

TEST_CASE("conv2d identity kernel and interior sum") {
  RngStream rng(5);
  Tensor x = rand_tensor({1, 2, 4, 4}, rng);
  Tensor w(Shape{2, 2, 3, 3});
  // centered delta: w[c][c][1][1] = 1
  w.data()[0 * 18 + 0 * 9 + 4] = 1.0;
  w.data()[1 * 18 + 1 * 9 + 4] = 1.0;
  Tensor b(Shape{2});
  Tensor y = conv2d(x, w, b);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  Tensor xc(Shape{1, 1, 5, 5}, 2.0);
  Tensor wo(Shape{1, 1, 3, 3}, 1.0);
  Tensor bo(Shape{1});
  Tensor yc = conv2d(xc, wo, bo);
  CHECK(close(yc.data()[2 * 5 + 2], 18.0, 1e-12));  // 9 * v at interior
  CHECK(close(yc.data()[0], 8.0, 1e-12));           // 2x2 corner window

  CHECK_THROWS_AS(conv2d(x, Tensor(Shape{2, 3, 3, 3}), b), DimensionError);
}

TEST_CASE("conv2d gradcheck") {
  RngStream rng(17);
  Tensor x = rand_tensor({1, 2, 4, 4}, rng);
  Tensor w = rand_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
  Tensor b = rand_tensor({3}, rng, -0.2, 0.2);
  Tensor probe = rand_tensor({1, 3, 4, 4}, rng);
  auto f = [&] { return mean_all(mul(conv2d(x, w, b), probe)); };
  auto rep = gradcheck(f, {x, w, b});
  CHECK(rep.max_rel_err <= 1e-5);
}

TEST_CASE("conv1x1 matches per-pixel channel mix and gradchecks") {
  RngStream rng(19);
  Tensor x = rand_tensor({2, 3, 2, 2}, rng);
  Tensor w = rand_tensor({4, 3}, rng);
  Tensor y = conv1x1(x, w);
  // hand-check one output element
  const int nb = 1, o = 2, pix = 3;
  double s = 0;
  for (int ci = 0; ci < 3; ++ci)
    s += w.data()[o * 3 + ci] * x.data()[(nb * 3 + ci) * 4 + pix];
  CHECK(close(y.data()[(nb * 4 + o) * 4 + pix], s, 1e-12));

  Tensor probe = rand_tensor({2, 4, 2, 2}, rng);
  auto f = [&] { return mean_all(mul(conv1x1(x, w), probe)); };
  auto rep = gradcheck(f, {x, w});
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("channel_norm standardized input passes through") {
  // channel values with mean 0, variance 1 across the N*H*W window
  Tensor x(Shape{2, 1, 1, 2}, std::vector<double>{1, -1, 1, -1});
  Tensor gamma(Shape{1}, 1.0);
  Tensor beta(Shape{1});
  NormState st;
  st.running_mean = Tensor(Shape{1});
  st.running_var = Tensor(Shape{1}, 1.0);
  Tensor y = channel_norm(x, gamma, beta, st, true);
  for (int i = 0; i < 4; ++i) CHECK(close(y.data()[i], x.data()[i], 1e-6));
  // running stats moved toward batch stats with momentum 0.1
  CHECK(close(st.running_mean.data()[0], 0.0, 1e-15));
  CHECK(close(st.running_var.data()[0], 1.0, 1e-12));
}

TEST_CASE("channel_norm constant channel returns shift") {
  Tensor x(Shape{1, 2, 2, 2}, 3.0);
  Tensor gamma(Shape{2}, 1.0);
  Tensor beta(Shape{2}, std::vector<double>{0.5, -0.25});
  NormState st;
  st.running_mean = Tensor(Shape{2});
  st.running_var = Tensor(Shape{2}, 1.0);
  Tensor y = channel_norm(x, gamma, beta, st, true);
  for (int i = 0; i < 4; ++i) CHECK(close(y.data()[i], 0.5, 1e-3));
  for (int i = 4; i < 8; ++i) CHECK(close(y.data()[i], -0.25, 1e-3));
}

TEST_CASE("channel_norm degenerate window and gradcheck") {
  Tensor x1(Shape{1, 3, 1, 1}, 1.0);
  Tensor g(Shape{3}, 1.0);
  Tensor b(Shape{3});
  NormState st;
  st.running_mean = Tensor(Shape{3});
  st.running_var = Tensor(Shape{3}, 1.0);
  CHECK_THROWS_AS(channel_norm(x1, g, b, st, true), DegenerateBatchError);
  CHECK_NOTHROW(channel_norm(x1, g, b, st, false));

  RngStream rng(29);
  Tensor x = rand_tensor({2, 3, 2, 2}, rng);
  Tensor gamma = rand_tensor({3}, rng, 0.5, 1.5);
  Tensor beta = rand_tensor({3}, rng, -0.5, 0.5);
  Tensor probe = rand_tensor({2, 3, 2, 2}, rng);
  NormState st2;
  st2.running_mean = Tensor(Shape{3});
  st2.running_var = Tensor(Shape{3}, 1.0);
  auto f = [&] {
    return mean_all(mul(channel_norm(x, gamma, beta, st2, true), probe));
  };
  auto rep = gradcheck(f, {x, gamma, beta});
  CHECK(rep.max_rel_err <= 1e-5);
}

TEST_CASE("aux op closed forms") {
  Tensor m(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor up = nearest_upsample(m, 2);
  CHECK(up.shape() == Shape{4, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(up.data()[i * 4 + j] == m.data()[(i / 2) * 2 + j / 2]);
  // density preserved exactly
  CHECK(mean_all(up).item() == mean_all(m).item());

  Tensor logits(Shape{7}, 0.0);
  Tensor ce = cross_entropy(logits, {3});
  CHECK(close(ce.item(), std::log(7.0), 1e-12));
  CHECK_THROWS_AS(cross_entropy(logits, {7}), ValidationError);

  Tensor neg(Shape{3}, std::vector<double>{-1, 2, -0.5});
  Tensor r = relu(neg);
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 2.0);
  CHECK(r.data()[2] == 0.0);
}

TEST_CASE("relu and sigmoid/tanh gradchecks away from kinks") {
  RngStream rng(31);
  Tensor x(Shape{6}, std::vector<double>{-2.0, -1.0, -0.4, 0.3, 1.1, 2.2});
  Tensor w = rand_tensor({6}, rng);
  auto f = [&] { return mean_all(mul(relu(x), w)); };
  auto rep = gradcheck(f, {x});
  CHECK(rep.skipped_kinks == 0);
  CHECK(rep.max_rel_err <= 1e-6);

  Tensor x2 = rand_tensor({2, 3}, rng, -2, 2);
  auto f2 = [&] { return mean_all(mul(sigmoid(x2), tanh(x2))); };
  auto rep2 = gradcheck(f2, {x2});
  CHECK(rep2.max_rel_err <= 1e-6);
}

TEST_CASE("relu kink crossing is detected and skipped") {
  // x sits exactly at a kink; h = 1e-5 steps across it
  Tensor x(Shape{2}, std::vector<double>{0.0, 1.0});
  Tensor w(Shape{2}, std::vector<double>{1.0, 1.0});
  auto f = [&] { return mean_all(mul(relu(x), w)); };
  auto rep = gradcheck(f, {x});
  CHECK(rep.skipped_kinks == 1);
  CHECK(rep.checked == 1);
}

TEST_CASE("gradcheck analytic oracle and constant function") {
  Tensor x(Shape{2}, std::vector<double>{1, 2});
  auto f = [&] { return scale(mean_all(mul(x, x)), 2.0); };  // sum of squares
  Tape::active().clear();
  x.set_requires_grad(true);
  Tensor loss = f();
  Tape::active().backward(loss);
  CHECK(close(x.grad_vec()[0], 2.0, 1e-12));
  CHECK(close(x.grad_vec()[1], 4.0, 1e-12));
  x.zero_grad();
  x.set_requires_grad(false);
  Tape::active().clear();
  auto rep = gradcheck(f, {x});
  CHECK(rep.max_rel_err <= 1e-8);

  Tensor c(Shape{3}, 1.0);
  auto fc = [&] { return mean_all(mul(c, Tensor(Shape{3}, 0.0))); };
  auto repc = gradcheck(fc, {c});
  CHECK(repc.max_rel_err == 0.0);
}

TEST_CASE("shared subexpression accumulates gradients additively") {
  Tensor x(Shape{3}, std::vector<double>{0.5, -1.5, 2.0});
  Tensor w(Shape{3}, std::vector<double>{1.0, 2.0, 3.0});

  auto single_grad = [&](bool doubled) {
    Tape::active().clear();
    x.set_requires_grad(true);
    Tensor g = mean_all(mul(mul(x, x), w));
    Tensor loss = doubled ? add(g, g) : g;
    Tape::active().backward(loss);
    std::vector<double> out = x.grad_vec();
    x.zero_grad();
    x.set_requires_grad(false);
    Tape::active().clear();
    return out;
  };
  auto g1 = single_grad(false);
  auto g2 = single_grad(true);
  for (int i = 0; i < 3; ++i) CHECK(g2[i] == 2.0 * g1[i]);
}

TEST_CASE("broadcast add/mul semantics and errors") {
  Tensor a(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor b(Shape{3}, std::vector<double>{10, 20, 30});
  Tensor s = add(a, b);
  CHECK(s.data()[0] == 11.0);
  CHECK(s.data()[5] == 36.0);
  Tensor p = mul(a, b);
  CHECK(p.data()[4] == 100.0);
  CHECK_THROWS_AS(add(a, Tensor(Shape{2}, 1.0)), DimensionError);

  RngStream rng(37);
  Tensor a2 = rand_tensor({4, 3}, rng);
  Tensor b2 = rand_tensor({3}, rng);
  Tensor w2 = rand_tensor({4, 3}, rng);
  auto f = [&] { return mean_all(mul(add(mul(a2, b2), b2), w2)); };
  auto rep = gradcheck(f, {a2, b2});
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("reshape global_avg_pool avgpool2 mean_all backward") {
  RngStream rng(41);
  Tensor x = rand_tensor({2, 3, 4, 4}, rng);
  Tensor probe = rand_tensor({2, 3}, rng);
  Tensor probe2 = rand_tensor({2, 3, 2, 2}, rng);
  auto f = [&] { return mean_all(mul(global_avg_pool(x), probe)); };
  CHECK(gradcheck(f, {x}).max_rel_err <= 1e-6);
  auto f2 = [&] { return mean_all(mul(avgpool2(x), probe2)); };
  CHECK(gradcheck(f2, {x}).max_rel_err <= 1e-6);
  auto f3 = [&] {
    return mean_all(mul(reshape(x, {6, 16}), Tensor(Shape{6, 16}, 0.5)));
  };
  CHECK(gradcheck(f3, {x}).max_rel_err <= 1e-6);
  CHECK_THROWS_AS(reshape(x, {5, 16}), DimensionError);
  CHECK_THROWS_AS(avgpool2(Tensor(Shape{1, 1, 3, 4}, 1.0)), DimensionError);
}

TEST_CASE("mask multiplies and straight_through") {
  RngStream rng(43);
  Tensor x = rand_tensor({2, 4, 4, 4}, rng);
  Tensor mc = rand_tensor({2, 4}, rng, 0.1, 0.9);
  Tensor ms = rand_tensor({2, 4, 4}, rng, 0.1, 0.9);
  auto f = [&] {
    Tensor probe = Tensor(Shape{2, 4, 4, 4}, 0.25);
    return mean_all(mul(mul_spatial(mul_channel(x, mc), ms), probe));
  };
  auto rep = gradcheck(f, {x, mc, ms});
  CHECK(rep.max_rel_err <= 1e-6);

  // straight-through: hard forward, identity backward
  Tensor soft(Shape{4}, std::vector<double>{0.1, 0.5, 0.7, 0.49});
  Tensor hard = straight_through(soft);
  CHECK(hard.data()[0] == 0.0);
  CHECK(hard.data()[1] == 1.0);  // >= threshold
  CHECK(hard.data()[2] == 1.0);
  CHECK(hard.data()[3] == 0.0);
  Tensor w(Shape{4}, std::vector<double>{1, 2, 3, 4});
  Tape::active().clear();
  soft.set_requires_grad(true);
  Tensor loss = mean_all(mul(straight_through(soft), w));
  Tape::active().backward(loss);
  for (int i = 0; i < 4; ++i)
    CHECK(close(soft.grad_vec()[i], w.data()[i] / 4.0, 1e-15));
  soft.zero_grad();
  soft.set_requires_grad(false);
  Tape::active().clear();
}

TEST_CASE("unreachable records are skipped and non-scalar root rejected") {
  Tensor x(Shape{2}, std::vector<double>{1, 2}, true);
  Tape::active().clear();
  Tensor dead = mul(x, x);      // never reaches the root
  Tensor live = mean_all(add(x, x));
  CHECK_THROWS_AS(Tape::active().backward(dead), DimensionError);
  Tape::active().backward(live);
  CHECK(close(x.grad_vec()[0], 1.0, 1e-15));
  CHECK(close(x.grad_vec()[1], 1.0, 1e-15));
  x.zero_grad();
  x.set_requires_grad(false);
  Tape::active().clear();
}

TEST_CASE("no-grad guard suppresses recording") {
  Tensor x(Shape{2}, std::vector<double>{1, 2}, true);
  Tape::active().clear();
  {
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(Tape::active().size() == 0);
}

TEST_CASE("tensor serialization round trip and truncation") {
  RngStream rng(47);
  Tensor t = rand_tensor({3, 5}, rng);
  std::ostringstream os(std::ios::binary);
  save_tensor(os, t);
  std::istringstream is(os.str(), std::ios::binary);
  Tensor u = load_tensor(is);
  CHECK(u.shape() == t.shape());
  for (int64_t i = 0; i < t.numel(); ++i)
    CHECK(u.data()[i] == t.data()[i]);

  std::string cut = os.str().substr(0, os.str().size() - 9);
  std::istringstream bad(cut, std::ios::binary);
  CHECK_THROWS_AS(load_tensor(bad), FormatError);
}

TEST_CASE("debug checks flag divergence") {
  CHECK(debug_checks());
  Tensor x(Shape{1}, std::vector<double>{700.0});
  Tensor e = mul(x, x);  // fine
  CHECK(e.data()[0] == 490000.0);
  Tensor inf(Shape{1}, std::vector<double>{1e308});
  CHECK_THROWS_AS(mul(inf, inf), DivergenceError);
}

TEST_CASE("rng streams are deterministic and tag-separated") {
  RngStream a(derive_seed(99, "init", 1, 2));
  RngStream b(derive_seed(99, "init", 1, 2));
  RngStream c(derive_seed(99, "data", 1, 2));
  bool all_eq = true, any_diff = false;
  for (int i = 0; i < 32; ++i) {
    const uint64_t va = a.next_u64(), vb = b.next_u64(), vc = c.next_u64();
    all_eq = all_eq && va == vb;
    any_diff = any_diff || va != vc;
  }
  CHECK(all_eq);
  CHECK(any_diff);
  RngStream g(123);
  for (int i = 0; i < 1000; ++i) {
    const double u = g.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("kernel backends agree bitwise and match the reference") {
  if (!kernels::openmp_compiled()) return;
  RngStream rng(53);
  const int n = 2, c = 5, h = 9, w = 7, co = 4;
  std::vector<double> x(n * c * h * w), wt(co * c * 9), b(co);
  for (double& v : x) v = rng.uniform(-1, 1);
  for (double& v : wt) v = rng.uniform(-1, 1);
  for (double& v : b) v = rng.uniform(-1, 1);

  std::vector<double> y_omp(n * co * h * w), y_ser(y_omp.size()),
      y_ref(y_omp.size());
  kernels::set_backend(kernels::Backend::openmp);
  kernels::conv2d_fwd(x.data(), wt.data(), b.data(), y_omp.data(), n, c, h, w,
                      co);
  kernels::set_backend(kernels::Backend::serial);
  kernels::conv2d_fwd(x.data(), wt.data(), b.data(), y_ser.data(), n, c, h, w,
                      co);
  kernels::ref::conv2d_fwd(x.data(), wt.data(), b.data(), y_ref.data(), n, c,
                           h, w, co);
  for (size_t i = 0; i < y_omp.size(); ++i) {
    CHECK(y_omp[i] == y_ser[i]);  // bitwise across backends
    CHECK(close(y_ser[i], y_ref[i],
                1e-12 * std::max(1.0, std::fabs(y_ref[i]))));
  }

  std::vector<double> gx_ser(x.size(), 0.0), gx_ref(x.size(), 0.0),
      gw_ser(wt.size(), 0.0), gw_ref(wt.size(), 0.0);
  kernels::conv2d_grad_x(y_ser.data(), wt.data(), gx_ser.data(), n, c, h, w,
                         co);
  kernels::ref::conv2d_grad_x(y_ser.data(), wt.data(), gx_ref.data(), n, c, h,
                              w, co);
  kernels::conv2d_grad_w(y_ser.data(), x.data(), gw_ser.data(), n, c, h, w,
                         co);
  kernels::ref::conv2d_grad_w(y_ser.data(), x.data(), gw_ref.data(), n, c, h,
                              w, co);
  for (size_t i = 0; i < gx_ser.size(); ++i)
    CHECK(close(gx_ser[i], gx_ref[i],
                1e-12 * std::max(1.0, std::fabs(gx_ref[i]))));
  for (size_t i = 0; i < gw_ser.size(); ++i)
    CHECK(close(gw_ser[i], gw_ref[i],
                1e-12 * std::max(1.0, std::fabs(gw_ref[i]))));

  const int m = 17, k = 13, nn = 11;
  std::vector<double> a(m * k), bb(k * nn), c_ser(m * nn), c_omp(m * nn),
      c_ref(m * nn);
  for (double& v : a) v = rng.uniform(-1, 1);
  for (double& v : bb) v = rng.uniform(-1, 1);
  kernels::matmul_nn(a.data(), bb.data(), c_ser.data(), m, k, nn);
  kernels::set_backend(kernels::Backend::openmp);
  kernels::matmul_nn(a.data(), bb.data(), c_omp.data(), m, k, nn);
  kernels::ref::matmul_nn(a.data(), bb.data(), c_ref.data(), m, k, nn);
  for (size_t i = 0; i < c_ser.size(); ++i) {
    CHECK(c_ser[i] == c_omp[i]);
    CHECK(close(c_ser[i], c_ref[i],
                1e-12 * std::max(1.0, std::fabs(c_ref[i]))));
  }
}

}  // TEST_SUITE
