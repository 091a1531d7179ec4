#include "dyngate/loss.hpp"

#include <cmath>
#include <string>

#include "dyngate/error.hpp"
#include "dyngate/ops.hpp"

namespace dyngate {
namespace {

void check_rates(double p, double target_rate) {
  if (!(p > 0.0) || p > 1.0)
    throw ValidationError("bound loss: p must lie in (0,1], got " +
                          std::to_string(p));
  if (!(target_rate > 0.0) || !(target_rate < 1.0))
    throw ValidationError("bound loss: target rate must lie in (0,1), got " +
                          std::to_string(target_rate));
}

}  // namespace

double anneal_p(int epoch, double alpha) {
  if (epoch < 0)
    throw ValidationError("anneal_p: epoch must be >= 0, got " +
                          std::to_string(epoch));
  if (!(alpha > 0.0))
    throw ValidationError("anneal_p: alpha must be positive, got " +
                          std::to_string(alpha));
  return std::exp(-alpha * epoch);
}

BoundInterval bound_interval(double p, double target_rate) {
  check_rates(p, target_rate);
  const double root = std::sqrt(target_rate);
  return {p * root, 1.0 - p * (1.0 - root)};
}

std::pair<double, double> bound_loss(const std::vector<double>& densities,
                                     double p, double target_rate) {
  if (densities.empty())
    throw ValidationError("bound loss: density list is empty");
  const BoundInterval iv = bound_interval(p, target_rate);
  double low = 0.0, up = 0.0;
  for (const double d : densities) {
    const double under = iv.low - d;
    const double over = d - iv.high;
    if (under > 0.0) low += under * under;
    if (over > 0.0) up += over * over;
  }
  return {low, up};
}

std::pair<double, double> bound_loss(const std::vector<GateMask>& masks,
                                     double p, double target_rate) {
  std::vector<double> densities;
  densities.reserve(masks.size());
  for (const GateMask& m : masks) densities.push_back(m.density());
  return bound_loss(densities, p, target_rate);
}

std::pair<Tensor, Tensor> bound_loss_terms(
    const std::vector<Tensor>& densities, double p, double target_rate) {
  if (densities.empty())
    throw ValidationError("bound loss: density list is empty");
  const BoundInterval iv = bound_interval(p, target_rate);
  Tensor low, up;
  for (const Tensor& d : densities) {
    if (d.numel() != 1)
      throw DimensionError("bound loss: densities must be scalars, got " +
                           shape_str(d.shape()));
    const Tensor under = relu(affine(d, -1.0, iv.low));  // max(0, low - d)
    const Tensor over = relu(affine(d, 1.0, -iv.high));  // max(0, d - high)
    const Tensor lterm = mul(under, under);
    const Tensor uterm = mul(over, over);
    low = low.defined() ? add(low, lterm) : lterm;
    up = up.defined() ? add(up, uterm) : uterm;
  }
  return {std::move(low), std::move(up)};
}

double total_loss(double task, double low, double up, double lambda_b) {
  if (lambda_b < 0.0)
    throw ValidationError("total loss: lambda_b must be >= 0");
  return task + lambda_b * (low + up);
}

Tensor total_loss(const Tensor& task, const Tensor& low, const Tensor& up,
                  double lambda_b) {
  if (lambda_b < 0.0)
    throw ValidationError("total loss: lambda_b must be >= 0");
  if (task.numel() != 1 || low.numel() != 1 || up.numel() != 1)
    throw DimensionError("total loss: all terms must be scalars");
  return add(task, scale(add(low, up), lambda_b));
}

}  // namespace dyngate
