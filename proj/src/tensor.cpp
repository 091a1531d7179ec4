#include "dyngate/tensor.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace dyngate {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (int64_t e : shape)
    if (e <= 0) throw DimensionError("nonpositive extent in " + shape_str(shape));
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<size_t>(shape_numel(impl_->shape)), fill);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  for (int64_t e : shape)
    if (e <= 0) throw DimensionError("nonpositive extent in " + shape_str(shape));
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1)
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}

double* Tensor::grad() { return ensure_grad(*impl_); }

const std::vector<double>& Tensor::grad_vec() const {
  if (impl_->grad.empty())
    throw ValidationError("gradient was never populated for this tensor");
  return impl_->grad;
}

void Tensor::zero_grad() {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->data, false);
}

bool Tensor::all_finite() const {
  for (double v : impl_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

double* ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad.data();
}

namespace {
thread_local Tape g_tape;
thread_local int g_no_grad_depth = 0;
}  // namespace

Tape& Tape::active() { return g_tape; }

bool Tape::recording() { return g_no_grad_depth == 0; }

void Tape::record(std::shared_ptr<TensorImpl> out, std::function<void()> fn) {
  records_.push_back({std::move(out), std::move(fn)});
}

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1)
    throw DimensionError("backward root must be a scalar tensor");
  ensure_grad(*root.impl())[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it)
    if (!it->out->grad.empty()) it->fn();
}

void Tape::clear() { records_.clear(); }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

namespace {

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint64_t read_u64(std::istream& is, const char* what) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw FormatError(std::string("truncated tensor header reading ") + what);
  return v;
}

}  // namespace

void save_tensor(std::ostream& os, const Tensor& t) {
  write_u64(os, static_cast<uint64_t>(t.rank()));
  for (int64_t e : t.shape()) write_u64(os, static_cast<uint64_t>(e));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!os) throw FormatError("tensor write failed");
}

Tensor load_tensor(std::istream& is) {
  const uint64_t rank = read_u64(is, "rank");
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (uint64_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<int64_t>(read_u64(is, "extent"));
    if (shape[i] <= 0) throw FormatError("nonpositive tensor extent");
  }
  const int64_t n = shape_numel(shape);
  std::vector<double> data(static_cast<size_t>(n));
  if (!is.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(n * sizeof(double))))
    throw FormatError("truncated tensor payload: expected " +
                      std::to_string(n) + " values");
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace dyngate
