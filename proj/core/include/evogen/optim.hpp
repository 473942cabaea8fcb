#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evogen/params.hpp"

namespace evogen {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
};

// First/second-moment accumulators, keyed like the parameter store.
struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::int64_t step = 0;
};

// L2 norm over every entry of every gradient in the map.
double global_norm(const GradMap& grads);

// Scales all gradients by bound/norm when the global norm exceeds `bound`.
// Returns the pre-clip norm.
double clip_by_global_norm(GradMap& grads, double bound);

// One bias-corrected Adam update; installs fresh parameter tensors.
void adam_step(ParamStore& params, const GradMap& grads, AdamState& state, double lr,
               const AdamConfig& cfg = {});

}  // namespace evogen
