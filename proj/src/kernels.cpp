#include "dyngate/kernels.hpp"

#include "dyngate/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dyngate::kernels {

namespace {

#ifdef _OPENMP
Backend g_backend = Backend::openmp;
#else
Backend g_backend = Backend::serial;
#endif

// Runs f(0..count-1). Every output element is written by exactly one index,
// and all floating-point work happens inside noinline worker functions below,
// so the serial and OpenMP paths execute the same machine code per index and
// produce bitwise identical results for any thread count.
template <class F>
void par_for(int count, const F& f) {
#ifdef _OPENMP
  if (g_backend == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < count; ++i) f(i);
    return;
  }
#endif
  for (int i = 0; i < count; ++i) f(i);
}

#define DYNGATE_NOINLINE __attribute__((noinline))

// Dot product with eight fixed partial-sum lanes folded in a fixed order:
// vectorizable without reassociation and still fully deterministic.
inline double dot8(const double* a, const double* b, int n) {
  double s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) s[l] += a[i + l] * b[i + l];
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7])) +
         tail;
}

// out[j] += w0*in[j-1] + w1*in[j] + w2*in[j+1], with zero padding at both ends.
inline void row_taps(double* out, const double* in, double w0, double w1,
                     double w2, int wd) {
  if (wd == 1) {
    out[0] += w1 * in[0];
    return;
  }
  out[0] += w1 * in[0] + w2 * in[1];
  for (int j = 1; j < wd - 1; ++j)
    out[j] += w0 * in[j - 1] + w1 * in[j] + w2 * in[j + 1];
  out[wd - 1] += w0 * in[wd - 2] + w1 * in[wd - 1];
}

DYNGATE_NOINLINE void conv2d_plane_fwd(const double* xn, const double* wco,
                                       double bias, double* yp, int c, int h,
                                       int wd) {
  const int hw = h * wd;
  for (int i = 0; i < hw; ++i) yp[i] = bias;
  for (int ci = 0; ci < c; ++ci) {
    const double* xc = xn + ci * hw;
    const double* wk = wco + ci * 9;
    for (int kh = 0; kh < 3; ++kh) {
      const int dh = kh - 1;
      const double w0 = wk[kh * 3], w1 = wk[kh * 3 + 1], w2 = wk[kh * 3 + 2];
      const int oh0 = dh > 0 ? 0 : -dh;
      const int oh1 = dh < 0 ? h : h - dh;
      for (int oh = oh0; oh < oh1; ++oh)
        row_taps(yp + oh * wd, xc + (oh + dh) * wd, w0, w1, w2, wd);
    }
  }
}

DYNGATE_NOINLINE void conv2d_plane_gx(const double* dyn, const double* w,
                                      double* dxp, int ci, int c, int h,
                                      int wd, int co) {
  const int hw = h * wd;
  for (int o = 0; o < co; ++o) {
    const double* dyp = dyn + o * hw;
    const double* wk = w + (static_cast<long>(o) * c + ci) * 9;
    for (int kh = 0; kh < 3; ++kh) {
      const int dh = kh - 1;
      const double w0 = wk[kh * 3], w1 = wk[kh * 3 + 1], w2 = wk[kh * 3 + 2];
      const int iy0 = dh < 0 ? 0 : dh;
      const int iy1 = dh > 0 ? h : h + dh;
      // dx[iy][ix] += sum_kw w[kw] * dy[iy-dh][ix-(kw-1)]: taps reversed.
      for (int iy = iy0; iy < iy1; ++iy)
        row_taps(dxp + iy * wd, dyp + (iy - dh) * wd, w2, w1, w0, wd);
    }
  }
}

// Per (kh,kw) tap the valid (dy,x) pairs form one contiguous run except for
// a handful of cross-row pairs the flat dot wrongly includes; those few terms
// are subtracted scalar afterwards. Fixed procedure, so still deterministic.
DYNGATE_NOINLINE void conv2d_pair_gw(const double* x, const double* dy,
                                     double* dwp, int n, int ci, int c, int h,
                                     int wd, int o, int co) {
  const int hw = h * wd;
  double acc[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};
  for (int nb = 0; nb < n; ++nb) {
    const double* xp = x + (static_cast<long>(nb) * c + ci) * hw;
    const double* dyp = dy + (static_cast<long>(nb) * co + o) * hw;
    for (int kh = 0; kh < 3; ++kh) {
      const int dh = kh - 1;
      const int oh0 = dh > 0 ? 0 : -dh;
      const int oh1 = dh < 0 ? h : h - dh;
      const int rows = oh1 - oh0;
      const int len = rows * wd;
      const double* dyb = dyp + oh0 * wd;
      const double* xb = xp + (oh0 + dh) * wd;
      double s0 = dot8(dyb + 1, xb, len - 1);
      const double s1 = dot8(dyb, xb, len);
      double s2 = dot8(dyb, xb + 1, len - 1);
      for (int r = 1; r < rows; ++r) {
        s0 -= dyb[r * wd] * xb[r * wd - 1];
        s2 -= dyb[r * wd - 1] * xb[r * wd];
      }
      acc[kh * 3 + 0] += s0;
      acc[kh * 3 + 1] += s1;
      acc[kh * 3 + 2] += s2;
    }
  }
  for (int t = 0; t < 9; ++t) dwp[t] += acc[t];
}

DYNGATE_NOINLINE void conv2d_col_gb(const double* dy, double* db, int n,
                                    int hw, int o, int co) {
  double acc = 0.0;
  for (int nb = 0; nb < n; ++nb) {
    const double* dyp = dy + (static_cast<long>(nb) * co + o) * hw;
    for (int i = 0; i < hw; ++i) acc += dyp[i];
  }
  db[o] += acc;
}

DYNGATE_NOINLINE void matmul_nn_row(const double* ar, const double* b,
                                    double* cr, int k, int n) {
  for (int j = 0; j < n; ++j) cr[j] = 0.0;
  for (int kk = 0; kk < k; ++kk) {
    const double av = ar[kk];
    const double* br = b + static_cast<long>(kk) * n;
    for (int j = 0; j < n; ++j) cr[j] += av * br[j];
  }
}

DYNGATE_NOINLINE void matmul_nt_row(const double* ar, const double* b,
                                    double* cr, int n, int k) {
  for (int j = 0; j < k; ++j)
    cr[j] += dot8(ar, b + static_cast<long>(j) * n, n);
}

DYNGATE_NOINLINE void matmul_tn_row(const double* a, const double* b,
                                    double* cr, int j, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double av = a[static_cast<long>(i) * k + j];
    const double* br = b + static_cast<long>(i) * n;
    for (int l = 0; l < n; ++l) cr[l] += av * br[l];
  }
}

DYNGATE_NOINLINE void conv1x1_plane_fwd(const double* xn, const double* wr,
                                        double* yp, int c, int hw) {
  for (int i = 0; i < hw; ++i) yp[i] = 0.0;
  for (int ci = 0; ci < c; ++ci) {
    const double wv = wr[ci];
    const double* xc = xn + static_cast<long>(ci) * hw;
    for (int i = 0; i < hw; ++i) yp[i] += wv * xc[i];
  }
}

DYNGATE_NOINLINE void conv1x1_plane_gx(const double* dyn, const double* w,
                                       double* dxp, int ci, int c, int hw,
                                       int co) {
  for (int o = 0; o < co; ++o) {
    const double wv = w[static_cast<long>(o) * c + ci];
    const double* dyp = dyn + static_cast<long>(o) * hw;
    for (int i = 0; i < hw; ++i) dxp[i] += wv * dyp[i];
  }
}

DYNGATE_NOINLINE void conv1x1_pair_gw(const double* dy, const double* x,
                                      double* dw, int n, int ci, int c, int hw,
                                      int o, int co) {
  double acc = 0.0;
  for (int nb = 0; nb < n; ++nb)
    acc += dot8(dy + (static_cast<long>(nb) * co + o) * hw,
                x + (static_cast<long>(nb) * c + ci) * hw, hw);
  dw[static_cast<long>(o) * c + ci] += acc;
}

DYNGATE_NOINLINE void avgpool2_plane_fwd(const double* xp, double* yp, int h,
                                         int wd) {
  const int ow = wd / 2;
  for (int i = 0; i < h / 2; ++i) {
    const double* r0 = xp + 2 * i * wd;
    const double* r1 = r0 + wd;
    for (int j = 0; j < ow; ++j)
      yp[i * ow + j] =
          0.25 * (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]);
  }
}

DYNGATE_NOINLINE void avgpool2_plane_grad(const double* dyp, double* dxp,
                                          int h, int wd) {
  const int ow = wd / 2;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < wd; ++j)
      dxp[i * wd + j] += 0.25 * dyp[(i / 2) * ow + j / 2];
}

}  // namespace

Backend backend() { return g_backend; }

void set_backend(Backend b) {
  if (b == Backend::openmp && !openmp_compiled())
    throw ValidationError("openmp backend requested but not compiled in");
  g_backend = b;
}

bool openmp_compiled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int thread_count() {
#ifdef _OPENMP
  return g_backend == Backend::openmp ? omp_get_max_threads() : 1;
#else
  return 1;
#endif
}

void matmul_nn(const double* a, const double* b, double* c, int m, int k,
               int n) {
  par_for(m, [&](int i) {
    matmul_nn_row(a + static_cast<long>(i) * k, b, c + static_cast<long>(i) * n,
                  k, n);
  });
}

void matmul_nt_acc(const double* a, const double* b, double* c, int m, int n,
                   int k) {
  par_for(m, [&](int i) {
    matmul_nt_row(a + static_cast<long>(i) * n, b, c + static_cast<long>(i) * k,
                  n, k);
  });
}

void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k,
                   int n) {
  par_for(k, [&](int j) {
    matmul_tn_row(a, b, c + static_cast<long>(j) * n, j, m, k, n);
  });
}

void conv2d_fwd(const double* x, const double* w, const double* b, double* y,
                int n, int c, int h, int wd, int co) {
  const int hw = h * wd;
  par_for(n * co, [&](int p) {
    const int nb = p / co, o = p % co;
    conv2d_plane_fwd(x + static_cast<long>(nb) * c * hw,
                     w + static_cast<long>(o) * c * 9, b[o],
                     y + static_cast<long>(p) * hw, c, h, wd);
  });
}

void conv2d_grad_x(const double* dy, const double* w, double* dx, int n, int c,
                   int h, int wd, int co) {
  const int hw = h * wd;
  par_for(n * c, [&](int p) {
    const int nb = p / c, ci = p % c;
    conv2d_plane_gx(dy + static_cast<long>(nb) * co * hw, w,
                    dx + static_cast<long>(p) * hw, ci, c, h, wd, co);
  });
}

void conv2d_grad_w(const double* dy, const double* x, double* dw, int n, int c,
                   int h, int wd, int co) {
  par_for(co * c, [&](int p) {
    conv2d_pair_gw(x, dy, dw + static_cast<long>(p) * 9, n, p % c, c, h, wd,
                   p / c, co);
  });
}

void conv2d_grad_b(const double* dy, double* db, int n, int h, int wd,
                   int co) {
  const int hw = h * wd;
  par_for(co, [&](int o) { conv2d_col_gb(dy, db, n, hw, o, co); });
}

void conv1x1_fwd(const double* x, const double* w, double* y, int n, int c,
                 int h, int wd, int co) {
  const int hw = h * wd;
  par_for(n * co, [&](int p) {
    const int nb = p / co, o = p % co;
    conv1x1_plane_fwd(x + static_cast<long>(nb) * c * hw,
                      w + static_cast<long>(o) * c,
                      y + static_cast<long>(p) * hw, c, hw);
  });
}

void conv1x1_grad_x(const double* dy, const double* w, double* dx, int n,
                    int c, int h, int wd, int co) {
  const int hw = h * wd;
  par_for(n * c, [&](int p) {
    const int nb = p / c, ci = p % c;
    conv1x1_plane_gx(dy + static_cast<long>(nb) * co * hw, w,
                     dx + static_cast<long>(p) * hw, ci, c, hw, co);
  });
}

void conv1x1_grad_w(const double* dy, const double* x, double* dw, int n,
                    int c, int h, int wd, int co) {
  const int hw = h * wd;
  par_for(co * c, [&](int p) {
    conv1x1_pair_gw(dy, x, dw, n, p % c, c, hw, p / c, co);
  });
}

void avgpool2_fwd(const double* x, double* y, int n, int c, int h, int wd) {
  par_for(n * c, [&](int p) {
    avgpool2_plane_fwd(x + static_cast<long>(p) * h * wd,
                       y + static_cast<long>(p) * (h / 2) * (wd / 2), h, wd);
  });
}

void avgpool2_grad(const double* dy, double* dx, int n, int c, int h, int wd) {
  par_for(n * c, [&](int p) {
    avgpool2_plane_grad(dy + static_cast<long>(p) * (h / 2) * (wd / 2),
                        dx + static_cast<long>(p) * h * wd, h, wd);
  });
}

namespace ref {

void matmul_nn(const double* a, const double* b, double* c, int m, int k,
               int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = s;
    }
}

void conv2d_fwd(const double* x, const double* w, const double* b, double* y,
                int n, int c, int h, int wd, int co) {
  for (int nb = 0; nb < n; ++nb)
    for (int o = 0; o < co; ++o)
      for (int oh = 0; oh < h; ++oh)
        for (int ow = 0; ow < wd; ++ow) {
          double s = b[o];
          for (int ci = 0; ci < c; ++ci)
            for (int kh = 0; kh < 3; ++kh)
              for (int kw = 0; kw < 3; ++kw) {
                const int iy = oh + kh - 1, ix = ow + kw - 1;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                s += x[((nb * c + ci) * h + iy) * wd + ix] *
                     w[((o * c + ci) * 3 + kh) * 3 + kw];
              }
          y[((nb * co + o) * h + oh) * wd + ow] = s;
        }
}

void conv2d_grad_x(const double* dy, const double* w, double* dx, int n, int c,
                   int h, int wd, int co) {
  for (int nb = 0; nb < n; ++nb)
    for (int ci = 0; ci < c; ++ci)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < wd; ++ix) {
          double s = 0.0;
          for (int o = 0; o < co; ++o)
            for (int kh = 0; kh < 3; ++kh)
              for (int kw = 0; kw < 3; ++kw) {
                const int oh = iy - (kh - 1), ow = ix - (kw - 1);
                if (oh < 0 || oh >= h || ow < 0 || ow >= wd) continue;
                s += dy[((nb * co + o) * h + oh) * wd + ow] *
                     w[((o * c + ci) * 3 + kh) * 3 + kw];
              }
          dx[((nb * c + ci) * h + iy) * wd + ix] += s;
        }
}

void conv2d_grad_w(const double* dy, const double* x, double* dw, int n, int c,
                   int h, int wd, int co) {
  for (int o = 0; o < co; ++o)
    for (int ci = 0; ci < c; ++ci)
      for (int kh = 0; kh < 3; ++kh)
        for (int kw = 0; kw < 3; ++kw) {
          double s = 0.0;
          for (int nb = 0; nb < n; ++nb)
            for (int oh = 0; oh < h; ++oh)
              for (int ow = 0; ow < wd; ++ow) {
                const int iy = oh + kh - 1, ix = ow + kw - 1;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                s += dy[((nb * co + o) * h + oh) * wd + ow] *
                     x[((nb * c + ci) * h + iy) * wd + ix];
              }
          dw[((o * c + ci) * 3 + kh) * 3 + kw] += s;
        }
}

}  // namespace ref

}  // namespace dyngate::kernels
