#include "dyngate/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "dyngate/gradcheck.hpp"
#include "dyngate/kernels.hpp"

namespace dyngate {

namespace {

bool g_debug_checks = false;

void debug_scan(const Tensor& t, const char* op) {
  if (!g_debug_checks) return;
  if (!t.all_finite())
    throw DivergenceError(std::string(op) + " produced a non-finite value");
}

bool should_record(std::initializer_list<const Tensor*> ins) {
  if (!Tape::recording()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

// b broadcasts into a over leading axes: b's shape, after stripping leading
// 1-extents, must equal a trailing suffix of a's shape.
struct BroadcastPlan {
  int64_t repeat = 1;
  int64_t block = 1;
};

BroadcastPlan broadcast_plan(const Tensor& a, const Tensor& b,
                             const char* op) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  size_t lead = 0;
  while (lead < bs.size() && bs[lead] == 1) ++lead;
  const size_t br = bs.size() - lead;
  bool ok = br <= as.size();
  if (ok)
    for (size_t i = 0; i < br; ++i)
      if (bs[lead + i] != as[as.size() - br + i]) ok = false;
  if (!ok)
    throw DimensionError(std::string(op) + ": cannot broadcast " +
                         shape_str(bs) + " into " + shape_str(as));
  BroadcastPlan p;
  p.block = b.numel();
  p.repeat = a.numel() / p.block;
  return p;
}

void check_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4)
    throw DimensionError(std::string(op) + ": expected NCHW tensor, got " +
                         shape_str(x.shape()));
}

int as_int(int64_t v) { return static_cast<int>(v); }

}  // namespace

void set_debug_checks(bool on) { g_debug_checks = on; }
bool debug_checks() { return g_debug_checks; }

Tensor add(const Tensor& a, const Tensor& b) {
  const BroadcastPlan bp = broadcast_plan(a, b, "add");
  std::vector<double> y(static_cast<size_t>(a.numel()));
  const double* pa = a.data();
  const double* pb = b.data();
  for (int64_t r = 0; r < bp.repeat; ++r) {
    const int64_t base = r * bp.block;
    for (int64_t j = 0; j < bp.block; ++j) y[base + j] = pa[base + j] + pb[j];
  }
  const bool rec = should_record({&a, &b});
  Tensor out(a.shape(), std::move(y), rec);
  if (rec) {
    Tape::active().record(out.impl(), [ai = a.impl(), bi = b.impl(),
                                       oi = out.impl(), bp] {
      const double* dy = oi->grad.data();
      if (wants_grad(*ai)) {
        double* da = ensure_grad(*ai);
        const size_t n = oi->data.size();
        for (size_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (wants_grad(*bi)) {
        double* db = ensure_grad(*bi);
        for (int64_t r = 0; r < bp.repeat; ++r) {
          const double* dyr = dy + r * bp.block;
          for (int64_t j = 0; j < bp.block; ++j) db[j] += dyr[j];
        }
      }
    });
  }
  debug_scan(out, "add");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const BroadcastPlan bp = broadcast_plan(a, b, "mul");
  std::vector<double> y(static_cast<size_t>(a.numel()));
  const double* pa = a.data();
  const double* pb = b.data();
  for (int64_t r = 0; r < bp.repeat; ++r) {
    const int64_t base = r * bp.block;
    for (int64_t j = 0; j < bp.block; ++j) y[base + j] = pa[base + j] * pb[j];
  }
  const bool rec = should_record({&a, &b});
  Tensor out(a.shape(), std::move(y), rec);
  if (rec) {
    Tape::active().record(out.impl(), [ai = a.impl(), bi = b.impl(),
                                       oi = out.impl(), bp] {
      const double* dy = oi->grad.data();
      const double* pa = ai->data.data();
      const double* pb = bi->data.data();
      if (wants_grad(*ai)) {
        double* da = ensure_grad(*ai);
        for (int64_t r = 0; r < bp.repeat; ++r) {
          const int64_t base = r * bp.block;
          for (int64_t j = 0; j < bp.block; ++j)
            da[base + j] += dy[base + j] * pb[j];
        }
      }
      if (wants_grad(*bi)) {
        double* db = ensure_grad(*bi);
        for (int64_t r = 0; r < bp.repeat; ++r) {
          const int64_t base = r * bp.block;
          for (int64_t j = 0; j < bp.block; ++j)
            db[j] += dy[base + j] * pa[base + j];
        }
      }
    });
  }
  debug_scan(out, "mul");
  return out;
}

Tensor affine(const Tensor& x, double k, double c) {
  std::vector<double> y(static_cast<size_t>(x.numel()));
  const double* px = x.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = k * px[i] + c;
  const bool rec = should_record({&x});
  Tensor out(x.shape(), std::move(y), rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), oi = out.impl(), k] {
      if (!wants_grad(*xi)) return;
      const double* dy = oi->grad.data();
      double* dx = ensure_grad(*xi);
      const size_t n = oi->data.size();
      for (size_t i = 0; i < n; ++i) dx[i] += k * dy[i];
    });
  }
  debug_scan(out, "affine");
  return out;
}

Tensor scale(const Tensor& x, double k) { return affine(x, k, 0.0); }

Tensor relu(const Tensor& x) {
  if (KinkRecorder* kr = KinkRecorder::active())
    kr->feed(x.data(), static_cast<size_t>(x.numel()), 0.0);
  std::vector<double> y(static_cast<size_t>(x.numel()));
  const double* px = x.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = px[i] > 0.0 ? px[i] : 0.0;
  const bool rec = should_record({&x});
  Tensor out(x.shape(), std::move(y), rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), oi = out.impl()] {
      if (!wants_grad(*xi)) return;
      const double* dy = oi->grad.data();
      const double* px = xi->data.data();
      double* dx = ensure_grad(*xi);
      const size_t n = oi->data.size();
      for (size_t i = 0; i < n; ++i)
        if (px[i] > 0.0) dx[i] += dy[i];
    });
  }
  debug_scan(out, "relu");
  return out;
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> y(static_cast<size_t>(x.numel()));
  const double* px = x.data();
  for (size_t i = 0; i < y.size(); ++i) {
    const double v = px[i];
    y[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                    : std::exp(v) / (1.0 + std::exp(v));
  }
  const bool rec = should_record({&x});
  Tensor out(x.shape(), std::move(y), rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), oi = out.impl()] {
      if (!wants_grad(*xi)) return;
      const double* dy = oi->grad.data();
      const double* py = oi->data.data();
      double* dx = ensure_grad(*xi);
      const size_t n = oi->data.size();
      for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * py[i] * (1.0 - py[i]);
    });
  }
  debug_scan(out, "sigmoid");
  return out;
}

Tensor tanh(const Tensor& x) {
  std::vector<double> y(static_cast<size_t>(x.numel()));
  const double* px = x.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(px[i]);
  const bool rec = should_record({&x});
  Tensor out(x.shape(), std::move(y), rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), oi = out.impl()] {
      if (!wants_grad(*xi)) return;
      const double* dy = oi->grad.data();
      const double* py = oi->data.data();
      double* dx = ensure_grad(*xi);
      const size_t n = oi->data.size();
      for (size_t i = 0; i < n; ++i) dx[i] += dy[i] * (1.0 - py[i] * py[i]);
    });
  }
  debug_scan(out, "tanh");
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  const int m = as_int(a.dim(0)), k = as_int(a.dim(1)), n = as_int(b.dim(1));
  Tensor out(Shape{m, n});
  kernels::matmul_nn(a.data(), b.data(), out.data(), m, k, n);
  const bool rec = should_record({&a, &b});
  out.set_requires_grad(rec);
  if (rec) {
    Tape::active().record(out.impl(), [ai = a.impl(), bi = b.impl(),
                                       oi = out.impl(), m, k, n] {
      const double* dy = oi->grad.data();
      if (wants_grad(*ai))
        kernels::matmul_nt_acc(dy, bi->data.data(), ensure_grad(*ai), m, n, k);
      if (wants_grad(*bi))
        kernels::matmul_tn_acc(ai->data.data(), dy, ensure_grad(*bi), m, k, n);
    });
  }
  debug_scan(out, "matmul");
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2)
    throw DimensionError("transpose: expected rank 2, got shape " +
                         shape_str(x.shape()));
  const int m = as_int(x.dim(0)), n = as_int(x.dim(1));
  Tensor out(Shape{n, m});
  const double* xd = x.data();
  double* od = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) od[j * m + i] = xd[i * n + j];
  const bool rec = should_record({&x});
  out.set_requires_grad(rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), oi = out.impl(), m, n] {
      if (!wants_grad(*xi)) return;
      double* dx = ensure_grad(*xi);
      const double* dy = oi->grad.data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) dx[i * n + j] += dy[j * m + i];
    });
  }
  debug_scan(out, "transpose");
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(0) ||
      w.dim(1) != b.dim(0))
    throw DimensionError("linear: incompatible shapes x=" +
                         shape_str(x.shape()) + " w=" + shape_str(w.shape()) +
                         " b=" + shape_str(b.shape()));
  return add(matmul(x, w), b);
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank())
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(x.shape()));
  const int64_t n = x.dim(axis);
  int64_t inner = 1;
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const int64_t outer = x.numel() / (n * inner);
  std::vector<double> y(static_cast<size_t>(x.numel()));
  const double* px = x.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      double m = px[base];
      for (int64_t j = 1; j < n; ++j)
        m = std::max(m, px[base + j * inner]);
      double sum = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        const double e = std::exp(px[base + j * inner] - m);
        y[base + j * inner] = e;
        sum += e;
      }
      for (int64_t j = 0; j < n; ++j) y[base + j * inner] /= sum;
    }
  const bool rec = should_record({&x});
  Tensor out(x.shape(), std::move(y), rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), oi = out.impl(), n,
                                       inner, outer] {
      if (!wants_grad(*xi)) return;
      const double* dy = oi->grad.data();
      const double* py = oi->data.data();
      double* dx = ensure_grad(*xi);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * n * inner + in;
          double dot = 0.0;
          for (int64_t j = 0; j < n; ++j)
            dot += dy[base + j * inner] * py[base + j * inner];
          for (int64_t j = 0; j < n; ++j) {
            const int64_t at = base + j * inner;
            dx[at] += py[at] * (dy[at] - dot);
          }
        }
    });
  }
  debug_scan(out, "softmax");
  return out;
}

Tensor mean_all(const Tensor& x) {
  const int64_t n = x.numel();
  double s = 0.0;
  const double* px = x.data();
  for (int64_t i = 0; i < n; ++i) s += px[i];
  const bool rec = should_record({&x});
  Tensor out(Shape{1}, std::vector<double>{s / static_cast<double>(n)}, rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), oi = out.impl(), n] {
      if (!wants_grad(*xi)) return;
      const double g = oi->grad[0] / static_cast<double>(n);
      double* dx = ensure_grad(*xi);
      for (int64_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  debug_scan(out, "mean_all");
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " +
                         shape_str(shape) + " changes element count");
  const bool rec = should_record({&x});
  Tensor out(std::move(shape), x.vec(), rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), oi = out.impl()] {
      if (!wants_grad(*xi)) return;
      const double* dy = oi->grad.data();
      double* dx = ensure_grad(*xi);
      const size_t n = oi->data.size();
      for (size_t i = 0; i < n; ++i) dx[i] += dy[i];
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  check_rank4(x, "global_avg_pool");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> y(static_cast<size_t>(n * c));
  const double* px = x.data();
  for (int64_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    const double* xp = px + p * hw;
    for (int64_t i = 0; i < hw; ++i) s += xp[i];
    y[p] = s / static_cast<double>(hw);
  }
  const bool rec = should_record({&x});
  Tensor out(Shape{n, c}, std::move(y), rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), oi = out.impl(), n, c,
                                       hw] {
      if (!wants_grad(*xi)) return;
      const double* dy = oi->grad.data();
      double* dx = ensure_grad(*xi);
      for (int64_t p = 0; p < n * c; ++p) {
        const double g = dy[p] / static_cast<double>(hw);
        double* dxp = dx + p * hw;
        for (int64_t i = 0; i < hw; ++i) dxp[i] += g;
      }
    });
  }
  debug_scan(out, "global_avg_pool");
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  int64_t n = 0, k = 0;
  if (logits.rank() == 1) {
    n = 1;
    k = logits.dim(0);
  } else if (logits.rank() == 2) {
    n = logits.dim(0);
    k = logits.dim(1);
  } else {
    throw DimensionError("cross_entropy: logits must be rank 1 or 2, got " +
                         shape_str(logits.shape()));
  }
  if (static_cast<int64_t>(labels.size()) != n)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
  for (int lab : labels)
    if (lab < 0 || lab >= k)
      throw ValidationError("cross_entropy: label " + std::to_string(lab) +
                            " outside [0," + std::to_string(k) + ")");
  const double* pl = logits.data();
  std::vector<double> probs(static_cast<size_t>(n * k));
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = pl + i * k;
    double m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double e = std::exp(row[j] - m);
      probs[i * k + j] = e;
      sum += e;
    }
    for (int64_t j = 0; j < k; ++j) probs[i * k + j] /= sum;
    loss += std::log(sum) + m - row[labels[static_cast<size_t>(i)]];
  }
  loss /= static_cast<double>(n);
  const bool rec = should_record({&logits});
  Tensor out(Shape{1}, std::vector<double>{loss}, rec);
  if (rec) {
    Tape::active().record(
        out.impl(), [li = logits.impl(), oi = out.impl(),
                     probs = std::move(probs), labels, n, k] {
          if (!wants_grad(*li)) return;
          const double g = oi->grad[0] / static_cast<double>(n);
          double* dl = ensure_grad(*li);
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < k; ++j) {
              const double onehot =
                  j == labels[static_cast<size_t>(i)] ? 1.0 : 0.0;
              dl[i * k + j] += g * (probs[static_cast<size_t>(i * k + j)] - onehot);
            }
        });
  }
  debug_scan(out, "cross_entropy");
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_rank4(x, "conv2d");
  if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3 || b.rank() != 1 ||
      w.dim(0) != b.dim(0) || w.dim(1) != x.dim(1))
    throw DimensionError("conv2d: incompatible shapes x=" +
                         shape_str(x.shape()) + " w=" + shape_str(w.shape()) +
                         " b=" + shape_str(b.shape()));
  const int n = as_int(x.dim(0)), c = as_int(x.dim(1)), h = as_int(x.dim(2)),
            wd = as_int(x.dim(3)), co = as_int(w.dim(0));
  Tensor out(Shape{n, co, h, wd});
  kernels::conv2d_fwd(x.data(), w.data(), b.data(), out.data(), n, c, h, wd,
                      co);
  const bool rec = should_record({&x, &w, &b});
  out.set_requires_grad(rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), wi = w.impl(),
                                       bi = b.impl(), oi = out.impl(), n, c, h,
                                       wd, co] {
      const double* dy = oi->grad.data();
      if (wants_grad(*xi))
        kernels::conv2d_grad_x(dy, wi->data.data(), ensure_grad(*xi), n, c, h,
                               wd, co);
      if (wants_grad(*wi))
        kernels::conv2d_grad_w(dy, xi->data.data(), ensure_grad(*wi), n, c, h,
                               wd, co);
      if (wants_grad(*bi))
        kernels::conv2d_grad_b(dy, ensure_grad(*bi), n, h, wd, co);
    });
  }
  debug_scan(out, "conv2d");
  return out;
}

Tensor conv1x1(const Tensor& x, const Tensor& w) {
  check_rank4(x, "conv1x1");
  if (w.rank() != 2 || w.dim(1) != x.dim(1))
    throw DimensionError("conv1x1: incompatible shapes x=" +
                         shape_str(x.shape()) + " w=" + shape_str(w.shape()));
  const int n = as_int(x.dim(0)), c = as_int(x.dim(1)), h = as_int(x.dim(2)),
            wd = as_int(x.dim(3)), co = as_int(w.dim(0));
  Tensor out(Shape{n, co, h, wd});
  kernels::conv1x1_fwd(x.data(), w.data(), out.data(), n, c, h, wd, co);
  const bool rec = should_record({&x, &w});
  out.set_requires_grad(rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), wi = w.impl(),
                                       oi = out.impl(), n, c, h, wd, co] {
      const double* dy = oi->grad.data();
      if (wants_grad(*xi))
        kernels::conv1x1_grad_x(dy, wi->data.data(), ensure_grad(*xi), n, c, h,
                                wd, co);
      if (wants_grad(*wi))
        kernels::conv1x1_grad_w(dy, xi->data.data(), ensure_grad(*wi), n, c, h,
                                wd, co);
    });
  }
  debug_scan(out, "conv1x1");
  return out;
}

Tensor avgpool2(const Tensor& x) {
  check_rank4(x, "avgpool2");
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
    throw DimensionError("avgpool2: spatial dims must be even, got " +
                         shape_str(x.shape()));
  const int n = as_int(x.dim(0)), c = as_int(x.dim(1)), h = as_int(x.dim(2)),
            wd = as_int(x.dim(3));
  Tensor out(Shape{n, c, h / 2, wd / 2});
  kernels::avgpool2_fwd(x.data(), out.data(), n, c, h, wd);
  const bool rec = should_record({&x});
  out.set_requires_grad(rec);
  if (rec) {
    Tape::active().record(out.impl(),
                          [xi = x.impl(), oi = out.impl(), n, c, h, wd] {
                            if (!wants_grad(*xi)) return;
                            kernels::avgpool2_grad(oi->grad.data(),
                                                   ensure_grad(*xi), n, c, h,
                                                   wd);
                          });
  }
  debug_scan(out, "avgpool2");
  return out;
}

Tensor nearest_upsample(const Tensor& m, int factor) {
  if (m.rank() != 2 && m.rank() != 3)
    throw DimensionError("nearest_upsample: expected rank 2 or 3, got " +
                         shape_str(m.shape()));
  if (factor < 1)
    throw DimensionError("nearest_upsample: factor must be >= 1, got " +
                         std::to_string(factor));
  const int64_t planes = m.rank() == 3 ? m.dim(0) : 1;
  const int64_t h = m.dim(m.rank() - 2), w = m.dim(m.rank() - 1);
  const int64_t oh = h * factor, ow = w * factor;
  Shape oshape = m.shape();
  oshape[oshape.size() - 2] = oh;
  oshape[oshape.size() - 1] = ow;
  std::vector<double> y(static_cast<size_t>(planes * oh * ow));
  const double* pm = m.data();
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j)
        y[(p * oh + i) * ow + j] =
            pm[(p * h + i / factor) * w + j / factor];
  const bool rec = should_record({&m});
  Tensor out(std::move(oshape), std::move(y), rec);
  if (rec) {
    Tape::active().record(out.impl(), [mi = m.impl(), oi = out.impl(), planes,
                                       h, w, oh, ow, factor] {
      if (!wants_grad(*mi)) return;
      const double* dy = oi->grad.data();
      double* dm = ensure_grad(*mi);
      for (int64_t p = 0; p < planes; ++p)
        for (int64_t i = 0; i < oh; ++i)
          for (int64_t j = 0; j < ow; ++j)
            dm[(p * h + i / factor) * w + j / factor] +=
                dy[(p * oh + i) * ow + j];
    });
  }
  debug_scan(out, "nearest_upsample");
  return out;
}

Tensor mul_channel(const Tensor& x, const Tensor& m) {
  check_rank4(x, "mul_channel");
  if (m.rank() != 2 || m.dim(0) != x.dim(0) || m.dim(1) != x.dim(1))
    throw DimensionError("mul_channel: mask " + shape_str(m.shape()) +
                         " does not match " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> y(static_cast<size_t>(x.numel()));
  const double* px = x.data();
  const double* pm = m.data();
  for (int64_t p = 0; p < n * c; ++p) {
    const double mv = pm[p];
    const double* xp = px + p * hw;
    double* yp = y.data() + p * hw;
    for (int64_t i = 0; i < hw; ++i) yp[i] = xp[i] * mv;
  }
  const bool rec = should_record({&x, &m});
  Tensor out(x.shape(), std::move(y), rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), mi = m.impl(),
                                       oi = out.impl(), n, c, hw] {
      const double* dy = oi->grad.data();
      if (wants_grad(*xi)) {
        double* dx = ensure_grad(*xi);
        const double* pm = mi->data.data();
        for (int64_t p = 0; p < n * c; ++p) {
          const double mv = pm[p];
          const double* dyp = dy + p * hw;
          double* dxp = dx + p * hw;
          for (int64_t i = 0; i < hw; ++i) dxp[i] += dyp[i] * mv;
        }
      }
      if (wants_grad(*mi)) {
        double* dm = ensure_grad(*mi);
        const double* px = xi->data.data();
        for (int64_t p = 0; p < n * c; ++p) {
          const double* dyp = dy + p * hw;
          const double* xp = px + p * hw;
          double s = 0.0;
          for (int64_t i = 0; i < hw; ++i) s += dyp[i] * xp[i];
          dm[p] += s;
        }
      }
    });
  }
  debug_scan(out, "mul_channel");
  return out;
}

Tensor mul_spatial(const Tensor& x, const Tensor& m) {
  check_rank4(x, "mul_spatial");
  if (m.rank() != 3 || m.dim(0) != x.dim(0) || m.dim(1) != x.dim(2) ||
      m.dim(2) != x.dim(3))
    throw DimensionError("mul_spatial: mask " + shape_str(m.shape()) +
                         " does not match " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> y(static_cast<size_t>(x.numel()));
  const double* px = x.data();
  const double* pm = m.data();
  for (int64_t nb = 0; nb < n; ++nb) {
    const double* mp = pm + nb * hw;
    for (int64_t ci = 0; ci < c; ++ci) {
      const int64_t off = (nb * c + ci) * hw;
      for (int64_t i = 0; i < hw; ++i) y[off + i] = px[off + i] * mp[i];
    }
  }
  const bool rec = should_record({&x, &m});
  Tensor out(x.shape(), std::move(y), rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), mi = m.impl(),
                                       oi = out.impl(), n, c, hw] {
      const double* dy = oi->grad.data();
      if (wants_grad(*xi)) {
        double* dx = ensure_grad(*xi);
        const double* pm = mi->data.data();
        for (int64_t nb = 0; nb < n; ++nb) {
          const double* mp = pm + nb * hw;
          for (int64_t ci = 0; ci < c; ++ci) {
            const int64_t off = (nb * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) dx[off + i] += dy[off + i] * mp[i];
          }
        }
      }
      if (wants_grad(*mi)) {
        double* dm = ensure_grad(*mi);
        const double* px = xi->data.data();
        for (int64_t nb = 0; nb < n; ++nb) {
          double* dmp = dm + nb * hw;
          for (int64_t ci = 0; ci < c; ++ci) {
            const int64_t off = (nb * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) dmp[i] += dy[off + i] * px[off + i];
          }
        }
      }
    });
  }
  debug_scan(out, "mul_spatial");
  return out;
}

Tensor straight_through(const Tensor& soft) {
  if (KinkRecorder* kr = KinkRecorder::active())
    kr->feed(soft.data(), static_cast<size_t>(soft.numel()), 0.5);
  std::vector<double> y(static_cast<size_t>(soft.numel()));
  const double* ps = soft.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = ps[i] >= 0.5 ? 1.0 : 0.0;
  const bool rec = should_record({&soft});
  Tensor out(soft.shape(), std::move(y), rec);
  if (rec) {
    Tape::active().record(out.impl(), [si = soft.impl(), oi = out.impl()] {
      if (!wants_grad(*si)) return;
      const double* dy = oi->grad.data();
      double* ds = ensure_grad(*si);
      const size_t n = oi->data.size();
      for (size_t i = 0; i < n; ++i) ds[i] += dy[i];
    });
  }
  debug_scan(out, "straight_through");
  return out;
}

Tensor gru_cell(const Tensor& h, const Tensor& x, const GruParams& p) {
  if (h.rank() != 2 || x.rank() != 2 || h.shape() != x.shape())
    throw DimensionError("gru_cell: h " + shape_str(h.shape()) +
                         " does not match x " + shape_str(x.shape()));
  const int64_t d = h.dim(1);
  for (const Tensor* w : {&p.wz, &p.uz, &p.wr, &p.ur, &p.wh, &p.uh})
    if (w->rank() != 2 || w->dim(0) != d || w->dim(1) != d)
      throw DimensionError("gru_cell: weight " + shape_str(w->shape()) +
                           " does not match state width " + std::to_string(d));
  for (const Tensor* b : {&p.bz, &p.br, &p.bh})
    if (b->rank() != 1 || b->dim(0) != d)
      throw DimensionError("gru_cell: bias " + shape_str(b->shape()) +
                           " does not match state width " + std::to_string(d));
  Tensor z = sigmoid(add(add(matmul(x, p.wz), matmul(h, p.uz)), p.bz));
  Tensor r = sigmoid(add(add(matmul(x, p.wr), matmul(h, p.ur)), p.br));
  Tensor hc = tanh(add(add(matmul(x, p.wh), matmul(mul(r, h), p.uh)), p.bh));
  return add(mul(affine(z, -1.0, 1.0), h), mul(z, hc));
}

Tensor channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    NormState& state, bool train) {
  check_rank4(x, "channel_norm");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 ||
      beta.dim(0) != c)
    throw DimensionError("channel_norm: scale/shift must be [" +
                         std::to_string(c) + "], got " +
                         shape_str(gamma.shape()) + " and " +
                         shape_str(beta.shape()));
  if (state.running_mean.numel() != c || state.running_var.numel() != c)
    throw DimensionError("channel_norm: running stats do not match C=" +
                         std::to_string(c));
  const int64_t window = n * hw;
  if (train && window == 1)
    throw DegenerateBatchError(
        "channel_norm: train mode needs N*H*W > 1 for batch statistics");

  std::vector<double> mean(static_cast<size_t>(c)),
      var(static_cast<size_t>(c));
  const double* px = x.data();
  if (train) {
    for (int64_t ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (int64_t nb = 0; nb < n; ++nb) {
        const double* xp = px + (nb * c + ci) * hw;
        for (int64_t i = 0; i < hw; ++i) s += xp[i];
      }
      const double mu = s / static_cast<double>(window);
      double v = 0.0;
      for (int64_t nb = 0; nb < n; ++nb) {
        const double* xp = px + (nb * c + ci) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const double dlt = xp[i] - mu;
          v += dlt * dlt;
        }
      }
      mean[static_cast<size_t>(ci)] = mu;
      var[static_cast<size_t>(ci)] = v / static_cast<double>(window);
    }
    double* rm = state.running_mean.data();
    double* rv = state.running_var.data();
    for (int64_t ci = 0; ci < c; ++ci) {
      rm[ci] = (1.0 - state.momentum) * rm[ci] +
               state.momentum * mean[static_cast<size_t>(ci)];
      rv[ci] = (1.0 - state.momentum) * rv[ci] +
               state.momentum * var[static_cast<size_t>(ci)];
    }
  } else {
    const double* rm = state.running_mean.data();
    const double* rv = state.running_var.data();
    for (int64_t ci = 0; ci < c; ++ci) {
      mean[static_cast<size_t>(ci)] = rm[ci];
      var[static_cast<size_t>(ci)] = rv[ci];
    }
  }

  std::vector<double> invstd(static_cast<size_t>(c));
  for (int64_t ci = 0; ci < c; ++ci)
    invstd[static_cast<size_t>(ci)] =
        1.0 / std::sqrt(var[static_cast<size_t>(ci)] + state.eps);

  std::vector<double> xhat(static_cast<size_t>(x.numel()));
  std::vector<double> y(static_cast<size_t>(x.numel()));
  const double* pg = gamma.data();
  const double* pb = beta.data();
  for (int64_t nb = 0; nb < n; ++nb)
    for (int64_t ci = 0; ci < c; ++ci) {
      const int64_t off = (nb * c + ci) * hw;
      const double mu = mean[static_cast<size_t>(ci)];
      const double is = invstd[static_cast<size_t>(ci)];
      const double g = pg[ci], bt = pb[ci];
      for (int64_t i = 0; i < hw; ++i) {
        const double xh = (px[off + i] - mu) * is;
        xhat[static_cast<size_t>(off + i)] = xh;
        y[static_cast<size_t>(off + i)] = g * xh + bt;
      }
    }

  const bool rec = should_record({&x, &gamma, &beta});
  Tensor out(x.shape(), std::move(y), rec);
  if (rec) {
    Tape::active().record(out.impl(), [xi = x.impl(), gi = gamma.impl(),
                                       bi = beta.impl(), oi = out.impl(),
                                       xhat = std::move(xhat),
                                       invstd = std::move(invstd), train, n, c,
                                       hw] {
      const double* dy = oi->grad.data();
      const double* pg = gi->data.data();
      const int64_t window = n * hw;
      for (int64_t ci = 0; ci < c; ++ci) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int64_t nb = 0; nb < n; ++nb) {
          const int64_t off = (nb * c + ci) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            sum_dy += dy[off + i];
            sum_dy_xhat += dy[off + i] * xhat[static_cast<size_t>(off + i)];
          }
        }
        if (wants_grad(*gi)) ensure_grad(*gi)[ci] += sum_dy_xhat;
        if (wants_grad(*bi)) ensure_grad(*bi)[ci] += sum_dy;
        if (wants_grad(*xi)) {
          double* dx = ensure_grad(*xi);
          const double is = invstd[static_cast<size_t>(ci)];
          const double g = pg[ci];
          if (train) {
            const double mdy = sum_dy / static_cast<double>(window);
            const double mdyx = sum_dy_xhat / static_cast<double>(window);
            for (int64_t nb = 0; nb < n; ++nb) {
              const int64_t off = (nb * c + ci) * hw;
              for (int64_t i = 0; i < hw; ++i)
                dx[off + i] +=
                    g * is *
                    (dy[off + i] - mdy -
                     xhat[static_cast<size_t>(off + i)] * mdyx);
            }
          } else {
            for (int64_t nb = 0; nb < n; ++nb) {
              const int64_t off = (nb * c + ci) * hw;
              for (int64_t i = 0; i < hw; ++i)
                dx[off + i] += g * is * dy[off + i];
            }
          }
        }
      }
    });
  }
  debug_scan(out, "channel_norm");
  return out;
}

}  // namespace dyngate
