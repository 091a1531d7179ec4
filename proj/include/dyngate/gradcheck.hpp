#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dyngate/tensor.hpp"

namespace dyngate {

// Records the sign pattern of every kinked nonlinearity (relu, hard
// thresholds) evaluated during a forward pass. Finite-difference checks
// evaluate f at theta+h and theta-h; if the recorded pattern differs between
// the two, the perturbation crossed a kink and that coordinate is skipped,
// since central differences are meaningless across a kink.
class KinkRecorder {
 public:
  static KinkRecorder* active();
  void activate();
  void deactivate();
  void reset() { hash_ = 1469598103934665603ull; }
  uint64_t hash() const { return hash_; }
  void feed(const double* x, size_t n, double threshold);

 private:
  uint64_t hash_ = 1469598103934665603ull;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  int checked = 0;        // coordinates compared
  int skipped_kinks = 0;  // coordinates skipped due to kink crossings
};

// Central-difference gradient check. f must be a pure scalar-valued function
// of the given inputs (re-evaluated many times); relative error uses
// max(|a|,|b|,1e-8) as denominator. Throws OracleError on non-finite values.
GradCheckReport gradcheck(const std::function<Tensor()>& f,
                          const std::vector<Tensor>& inputs, double h = 1e-5);

// Same, but checks at most max_coords randomly sampled coordinates per input;
// used for composites with many parameters.
GradCheckReport gradcheck_sample(const std::function<Tensor()>& f,
                                 const std::vector<Tensor>& inputs,
                                 int max_coords, uint64_t seed,
                                 double h = 1e-5);

}  // namespace dyngate
