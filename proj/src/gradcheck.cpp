#include "dyngate/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dyngate/rng.hpp"

namespace dyngate {

namespace {
thread_local KinkRecorder* g_recorder = nullptr;
}

KinkRecorder* KinkRecorder::active() { return g_recorder; }

void KinkRecorder::activate() { g_recorder = this; }

void KinkRecorder::deactivate() {
  if (g_recorder == this) g_recorder = nullptr;
}

void KinkRecorder::feed(const double* x, size_t n, double threshold) {
  uint64_t h = hash_;
  for (size_t i = 0; i < n; ++i) {
    h ^= x[i] >= threshold ? 0x9e3779b97f4a7c15ull : 0x2545f4914f6cdd1dull;
    h *= 1099511628211ull;
  }
  hash_ = h;
}

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard ng;
  Tensor out = f();
  if (!out.defined() || out.numel() != 1)
    throw OracleError("gradcheck: function must be scalar-valued");
  const double v = out.item();
  if (!std::isfinite(v)) throw OracleError("gradcheck: non-finite value");
  return v;
}

GradCheckReport run_check(const std::function<Tensor()>& f,
                          const std::vector<Tensor>& inputs,
                          const std::vector<std::vector<int64_t>>& coords,
                          double h) {
  std::vector<Tensor> ins(inputs);  // shared handles onto the same storage
  std::vector<bool> old_req;
  old_req.reserve(ins.size());
  for (Tensor& t : ins) {
    old_req.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  Tape& tape = Tape::active();
  tape.clear();
  Tensor out = f();
  if (!out.defined() || out.numel() != 1)
    throw OracleError("gradcheck: function must be scalar-valued");
  if (!std::isfinite(out.item()))
    throw OracleError("gradcheck: non-finite value");
  tape.backward(out);

  std::vector<std::vector<double>> tape_grad;
  tape_grad.reserve(ins.size());
  for (Tensor& t : ins) {
    if (t.grad_touched())
      tape_grad.push_back(t.grad_vec());
    else
      tape_grad.emplace_back(static_cast<size_t>(t.numel()), 0.0);
    t.zero_grad();
  }
  tape.clear();

  GradCheckReport rep;
  KinkRecorder kr;
  for (size_t ti = 0; ti < ins.size(); ++ti) {
    double* xd = ins[ti].data();
    for (int64_t ci : coords[ti]) {
      const double orig = xd[ci];
      kr.activate();
      kr.reset();
      xd[ci] = orig + h;
      const double fp = eval_scalar(f);
      const uint64_t hash_plus = kr.hash();
      kr.reset();
      xd[ci] = orig - h;
      const double fm = eval_scalar(f);
      const uint64_t hash_minus = kr.hash();
      kr.deactivate();
      xd[ci] = orig;
      if (hash_plus != hash_minus) {
        ++rep.skipped_kinks;
        continue;
      }
      const double fd = (fp - fm) / (2.0 * h);
      const double tg = tape_grad[ti][static_cast<size_t>(ci)];
      const double denom = std::max({std::fabs(fd), std::fabs(tg), 1e-8});
      rep.max_rel_err = std::max(rep.max_rel_err, std::fabs(fd - tg) / denom);
      ++rep.checked;
    }
  }

  for (size_t i = 0; i < ins.size(); ++i)
    ins[i].set_requires_grad(old_req[i]);
  return rep;
}

}  // namespace

GradCheckReport gradcheck(const std::function<Tensor()>& f,
                          const std::vector<Tensor>& inputs, double h) {
  std::vector<std::vector<int64_t>> coords(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    coords[i].resize(static_cast<size_t>(inputs[i].numel()));
    std::iota(coords[i].begin(), coords[i].end(), 0);
  }
  return run_check(f, inputs, coords, h);
}

GradCheckReport gradcheck_sample(const std::function<Tensor()>& f,
                                 const std::vector<Tensor>& inputs,
                                 int max_coords, uint64_t seed, double h) {
  RngStream rng(seed);
  std::vector<std::vector<int64_t>> coords(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    const int64_t n = inputs[i].numel();
    std::vector<int64_t> all(static_cast<size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    if (n > max_coords) {
      shuffle(all, rng);
      all.resize(static_cast<size_t>(max_coords));
      std::sort(all.begin(), all.end());
    }
    coords[i] = std::move(all);
  }
  return run_check(f, inputs, coords, h);
}

}  // namespace dyngate
