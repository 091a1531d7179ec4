#pragma once

#include <utility>
#include <vector>

#include "dyngate/gate.hpp"
#include "dyngate/tensor.hpp"

namespace dyngate {

// Two-sided density bound loss with an exponentially annealed interval.
// Epoch e (0-based) admits densities in [p*sqrt(Td), 1 - p*(1 - sqrt(Td))]
// with p = exp(-alpha * e); violations are penalized quadratically.

struct BoundSchedule {
  double target_rate = 0.5;  // Td in (0,1)
  double alpha = 0.05;       // annealing rate, > 0
  double lambda_b = 1.0;     // bound loss weight, >= 0
};

// p = exp(-alpha * epoch); epoch must be >= 0, alpha > 0.
double anneal_p(int epoch, double alpha);

struct BoundInterval {
  double low = 0.0;
  double high = 1.0;
};
BoundInterval bound_interval(double p, double target_rate);

// Scalar form over plain densities (reporting and reference checks).
std::pair<double, double> bound_loss(const std::vector<double>& densities,
                                     double p, double target_rate);
// Convenience over gate masks (densities taken from the mask values).
std::pair<double, double> bound_loss(const std::vector<GateMask>& masks,
                                     double p, double target_rate);

// Autodiff form: each density is a scalar tensor connected to the soft
// masks, so gradients reach the gate heads. Returns (L_low, L_up).
std::pair<Tensor, Tensor> bound_loss_terms(const std::vector<Tensor>& densities,
                                           double p, double target_rate);

// task + lambda_b * (low + up).
double total_loss(double task, double low, double up, double lambda_b);
Tensor total_loss(const Tensor& task, const Tensor& low, const Tensor& up,
                  double lambda_b);

}  // namespace dyngate
