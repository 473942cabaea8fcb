#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evogen/tensor.hpp"

namespace evogen {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Central-difference comparison of analytic gradients.  `build` receives
// leaves positionally and must rebuild the scalar loss from them on every
// call (the checker re-invokes it with perturbed copies).
struct FdReport {
  double max_rel_err = 0.0;
  std::string worst;
  bool pass = false;
};
FdReport finite_difference_check(
    const std::function<Tensor(std::span<const Tensor>)>& build,
    std::span<const Tensor> leaves, double step = 1e-5, double tol = 1e-4);

// Analytic-vs-numeric gradient suite: every differentiable primitive plus
// composed paths up to a full reconstruction objective on a miniature model.
std::vector<CheckResult> gradient_checks();

// Behavioral invariants: schedules, identities at initialization, round
// trips, determinism, equivariance, boundary-gradient consistency.
std::vector<CheckResult> property_checks();

// True when every entry passes.
bool all_pass(std::span<const CheckResult> results);

}  // namespace evogen
