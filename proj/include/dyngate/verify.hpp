#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dyngate/gradcheck.hpp"

namespace dyngate {

// One named finite-difference check aggregated over several random trials.
struct VerifyCheck {
  std::string name;
  double tol = 0.0;
  GradCheckReport report;  // max_rel_err is the max over all trials
  bool pass = false;
};

// Runs the gradient oracle battery: every differentiable op plus the
// composite pipelines (attention, fusion, gating, losses, and the full
// network in soft-gate mode with frozen Gumbel noise), each over `trials`
// random seeds derived from `seed`. With inject_fault a deliberately wrong
// backward rule is added as a negative control; it must come back failing,
// proving the harness can catch bad gradients.
std::vector<VerifyCheck> run_verification(uint64_t seed, int trials = 20,
                                          bool inject_fault = false);

bool verification_passed(const std::vector<VerifyCheck>& checks);

// One line per check: name, max relative error, tolerance, PASS/FAIL.
std::string format_verification(const std::vector<VerifyCheck>& checks);

}  // namespace dyngate
