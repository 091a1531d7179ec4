#pragma once

#include <vector>

#include "dyngate/tensor.hpp"

namespace dyngate {

// When enabled, every op scans its output for non-finite values and throws
// DivergenceError. Tests turn this on; the trainer checks the loss instead.
void set_debug_checks(bool on);
bool debug_checks();

// Elementwise ops. add/mul broadcast the second operand over leading axes of
// the first: b's shape (after stripping leading 1-extents) must equal a
// trailing suffix of a's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& x, double k, double c);  // k*x + c
Tensor scale(const Tensor& x, double k);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

// Dense linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n]
Tensor transpose(const Tensor& x);                // [m,n] -> [n,m], copying
// y = x*w + b with x [n,in], w [in,out], b [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor softmax(const Tensor& x, int axis);

// Reductions and shape ops.
Tensor mean_all(const Tensor& x);                 // -> [1]
Tensor reshape(const Tensor& x, Shape shape);     // copying reshape
Tensor global_avg_pool(const Tensor& x);          // [N,C,H,W] -> [N,C]

// Loss. logits [K] with one label, or [N,K] with N labels (mean reduction).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Spatial ops (all NCHW).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);  // 3x3/s1/p1
Tensor conv1x1(const Tensor& x, const Tensor& w);
Tensor avgpool2(const Tensor& x);
// Mask upsampling by an integer factor; rank 2 [H,W] or rank 3 [N,H,W].
Tensor nearest_upsample(const Tensor& m, int factor);
// x [N,C,H,W] * m [N,C] (broadcast over H,W) / * m [N,H,W] (broadcast over C).
Tensor mul_channel(const Tensor& x, const Tensor& m);
Tensor mul_spatial(const Tensor& x, const Tensor& m);

// Forward emits 1[x >= 0.5]; backward passes gradients through unchanged.
Tensor straight_through(const Tensor& soft);

struct GruParams {
  Tensor wz, uz, bz;  // update gate: z = sigmoid(x*wz + h*uz + bz)
  Tensor wr, ur, br;  // reset gate
  Tensor wh, uh, bh;  // candidate: tanh(x*wh + (r.h)*uh + bh)
};

// Cho-2014 convention: h' = (1-z).h + z.hcand. h, x are [rows,d].
Tensor gru_cell(const Tensor& h, const Tensor& x, const GruParams& p);

struct NormState {
  Tensor running_mean;  // [C], buffers, not autodiff params
  Tensor running_var;   // [C]
  double momentum = 0.1;
  double eps = 1e-8;
};

// Per-channel standardization with learned scale/shift. Train mode uses batch
// statistics over the N*H*W window (biased variance) and updates the running
// stats in place; eval mode uses the running stats.
Tensor channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    NormState& state, bool train);

}  // namespace dyngate
