#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "dyngate/error.hpp"

namespace dyngate {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward first touches it
  bool requires_grad = false;
};

// Shared-ownership dense tensor; copies are views of the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& vec() { return impl_->data; }
  const std::vector<double>& vec() const { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v);

  bool grad_touched() const { return !impl_->grad.empty(); }
  // Allocates a zero grad buffer on first use.
  double* grad();
  const std::vector<double>& grad_vec() const;  // throws if never touched
  void zero_grad();                             // drops the buffer

  Tensor clone() const;  // deep copy of data, detached, no grad

  bool all_finite() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape. Ops append records in creation order; backward walks
// them in exact reverse order. Records whose output grad was never touched
// are unreachable from the root and are skipped.
class Tape {
 public:
  static Tape& active();
  static bool recording();  // false inside a NoGradGuard

  void record(std::shared_ptr<TensorImpl> out, std::function<void()> fn);
  void backward(const Tensor& root);
  void clear();
  size_t size() const { return records_.size(); }

 private:
  struct Record {
    std::shared_ptr<TensorImpl> out;
    std::function<void()> fn;
  };
  std::vector<Record> records_;
};

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Grad accumulation helpers used by op backward rules.
double* ensure_grad(TensorImpl& t);
inline bool wants_grad(const TensorImpl& t) { return t.requires_grad; }

// Little-endian serialization: u64 rank, u64 extents, raw f64 values.
void save_tensor(std::ostream& os, const Tensor& t);
Tensor load_tensor(std::istream& is);

}  // namespace dyngate
