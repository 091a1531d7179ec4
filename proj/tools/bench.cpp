#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "dyngate/kernels.hpp"
#include "dyngate/rng.hpp"

// Micro-benchmark for the dense kernels: naive reference vs optimized serial
// vs OpenMP, with agreement checks (reference within 1e-12 relative, serial
// and OpenMP bitwise identical).

namespace {

using dyngate::RngStream;
namespace kn = dyngate::kernels;

double best_seconds(const std::function<void()>& fn, int reps) {
  double best = 1e30;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

void fill(std::vector<double>& v, RngStream& rng) {
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
}

double max_rel_diff(const std::vector<double>& a,
                    const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]) /
                        std::max({1.0, std::fabs(a[i]), std::fabs(b[i])}));
  return m;
}

bool bitwise_equal(const std::vector<double>& a,
                   const std::vector<double>& b) {
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void report(const char* name, double flops, double ref_s, double ser_s,
            double omp_s, double ref_diff, bool bit_eq) {
  std::printf("%-14s ref %7.2f MF/s  serial %8.2f MF/s  omp %8.2f MF/s  "
              "|serial-ref| %.2e  serial==omp %s\n",
              name, flops / ref_s / 1e6, flops / ser_s / 1e6,
              flops / omp_s / 1e6, ref_diff, bit_eq ? "yes" : "NO");
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--reps") == 0 && i + 1 < argc)
      reps = std::atoi(argv[++i]);

  RngStream rng(4242);
  std::printf("openmp compiled: %s, max threads %d\n",
              kn::openmp_compiled() ? "yes" : "no", kn::thread_count());

  {
    const int m = 192, k = 192, n = 192;
    std::vector<double> a(m * k), b(k * n), c_ref(m * n), c_ser(m * n),
        c_omp(m * n);
    fill(a, rng);
    fill(b, rng);
    const double flops = 2.0 * m * k * n;
    const double t_ref = best_seconds(
        [&] { kn::ref::matmul_nn(a.data(), b.data(), c_ref.data(), m, k, n); },
        reps);
    kn::set_backend(kn::Backend::serial);
    const double t_ser = best_seconds(
        [&] { kn::matmul_nn(a.data(), b.data(), c_ser.data(), m, k, n); },
        reps);
    double t_omp = t_ser;
    if (kn::openmp_compiled()) {
      kn::set_backend(kn::Backend::openmp);
      t_omp = best_seconds(
          [&] { kn::matmul_nn(a.data(), b.data(), c_omp.data(), m, k, n); },
          reps);
    } else {
      c_omp = c_ser;
    }
    report("matmul", flops, t_ref, t_ser, t_omp, max_rel_diff(c_ser, c_ref),
           bitwise_equal(c_ser, c_omp));
  }

  const int n = 16, c = 32, h = 16, w = 16, co = 32;
  std::vector<double> x(n * c * h * w), wt(co * c * 9), b(co);
  fill(x, rng);
  fill(wt, rng);
  fill(b, rng);
  const double conv_flops = 2.0 * n * co * c * 9.0 * h * w;

  {
    std::vector<double> y_ref(n * co * h * w), y_ser(y_ref.size()),
        y_omp(y_ref.size());
    const double t_ref = best_seconds(
        [&] {
          kn::ref::conv2d_fwd(x.data(), wt.data(), b.data(), y_ref.data(), n,
                              c, h, w, co);
        },
        reps);
    kn::set_backend(kn::Backend::serial);
    const double t_ser = best_seconds(
        [&] {
          kn::conv2d_fwd(x.data(), wt.data(), b.data(), y_ser.data(), n, c, h,
                         w, co);
        },
        reps);
    double t_omp = t_ser;
    if (kn::openmp_compiled()) {
      kn::set_backend(kn::Backend::openmp);
      t_omp = best_seconds(
          [&] {
            kn::conv2d_fwd(x.data(), wt.data(), b.data(), y_omp.data(), n, c,
                           h, w, co);
          },
          reps);
    } else {
      y_omp = y_ser;
    }
    report("conv2d fwd", conv_flops, t_ref, t_ser, t_omp,
           max_rel_diff(y_ser, y_ref), bitwise_equal(y_ser, y_omp));

    std::vector<double> gx_ref(x.size()), gx_ser(x.size()), gx_omp(x.size());
    const double t_gref = best_seconds(
        [&] {
          std::fill(gx_ref.begin(), gx_ref.end(), 0.0);
          kn::ref::conv2d_grad_x(y_ser.data(), wt.data(), gx_ref.data(), n, c,
                                 h, w, co);
        },
        reps);
    kn::set_backend(kn::Backend::serial);
    const double t_gser = best_seconds(
        [&] {
          std::fill(gx_ser.begin(), gx_ser.end(), 0.0);
          kn::conv2d_grad_x(y_ser.data(), wt.data(), gx_ser.data(), n, c, h, w,
                            co);
        },
        reps);
    double t_gomp = t_gser;
    if (kn::openmp_compiled()) {
      kn::set_backend(kn::Backend::openmp);
      t_gomp = best_seconds(
          [&] {
            std::fill(gx_omp.begin(), gx_omp.end(), 0.0);
            kn::conv2d_grad_x(y_ser.data(), wt.data(), gx_omp.data(), n, c, h,
                              w, co);
          },
          reps);
    } else {
      gx_omp = gx_ser;
    }
    report("conv2d gradx", conv_flops, t_gref, t_gser, t_gomp,
           max_rel_diff(gx_ser, gx_ref), bitwise_equal(gx_ser, gx_omp));

    std::vector<double> gw_ref(wt.size()), gw_ser(wt.size()),
        gw_omp(wt.size());
    const double t_wref = best_seconds(
        [&] {
          std::fill(gw_ref.begin(), gw_ref.end(), 0.0);
          kn::ref::conv2d_grad_w(y_ser.data(), x.data(), gw_ref.data(), n, c,
                                 h, w, co);
        },
        reps);
    kn::set_backend(kn::Backend::serial);
    const double t_wser = best_seconds(
        [&] {
          std::fill(gw_ser.begin(), gw_ser.end(), 0.0);
          kn::conv2d_grad_w(y_ser.data(), x.data(), gw_ser.data(), n, c, h, w,
                            co);
        },
        reps);
    double t_womp = t_wser;
    if (kn::openmp_compiled()) {
      kn::set_backend(kn::Backend::openmp);
      t_womp = best_seconds(
          [&] {
            std::fill(gw_omp.begin(), gw_omp.end(), 0.0);
            kn::conv2d_grad_w(y_ser.data(), x.data(), gw_omp.data(), n, c, h,
                              w, co);
          },
          reps);
    } else {
      gw_omp = gw_ser;
    }
    report("conv2d gradw", conv_flops, t_wref, t_wser, t_womp,
           max_rel_diff(gw_ser, gw_ref), bitwise_equal(gw_ser, gw_omp));
  }

  kn::set_backend(kn::openmp_compiled() ? kn::Backend::openmp
                                        : kn::Backend::serial);
  return 0;
}
