#pragma once

#include <cstdint>

// Dense numeric kernels behind the tensor ops. Each kernel has an optimized
// implementation whose outer loop can run under OpenMP; the parallel and
// serial paths share the same inner-loop code and the same per-element
// accumulation order, so results are bitwise identical across backends and
// thread counts. A plain textbook reference implementation of the heavy
// kernels lives in kernels_ref.cpp and is used by tests and the benchmark.
namespace dyngate::kernels {

enum class Backend { serial, openmp };

Backend backend();
void set_backend(Backend b);
bool openmp_compiled();
int thread_count();

// c[m,n] = a[m,k] * b[k,n]
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
// c[m,k] += a[m,n] * b[k,n]^T   (i.e. a times b-transposed)
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int n, int k);
// c[k,n] += a[m,k]^T * b[m,n]
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);

// 3x3 cross-correlation, stride 1, zero padding 1. y[N,Co,H,W] overwritten.
void conv2d_fwd(const double* x, const double* w, const double* b, double* y,
                int n, int c, int h, int wd, int co);
void conv2d_grad_x(const double* dy, const double* w, double* dx,
                   int n, int c, int h, int wd, int co);
void conv2d_grad_w(const double* dy, const double* x, double* dw,
                   int n, int c, int h, int wd, int co);
void conv2d_grad_b(const double* dy, double* db, int n, int h, int wd, int co);

// 1x1 convolution (channel mixing), no bias. Used for residual projections.
void conv1x1_fwd(const double* x, const double* w, double* y,
                 int n, int c, int h, int wd, int co);
void conv1x1_grad_x(const double* dy, const double* w, double* dx,
                    int n, int c, int h, int wd, int co);
void conv1x1_grad_w(const double* dy, const double* x, double* dw,
                    int n, int c, int h, int wd, int co);

// 2x2 average pooling with stride 2 (H and W must be even).
void avgpool2_fwd(const double* x, double* y, int n, int c, int h, int wd);
void avgpool2_grad(const double* dy, double* dx, int n, int c, int h, int wd);

// Reference (naive) versions of the heavy kernels, for numeric cross-checks.
namespace ref {
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
void conv2d_fwd(const double* x, const double* w, const double* b, double* y,
                int n, int c, int h, int wd, int co);
void conv2d_grad_x(const double* dy, const double* w, double* dx,
                   int n, int c, int h, int wd, int co);
void conv2d_grad_w(const double* dy, const double* x, double* dw,
                   int n, int c, int h, int wd, int co);
}  // namespace ref

}  // namespace dyngate::kernels
