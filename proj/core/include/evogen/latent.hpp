#pragma once

#include <string>

#include "evogen/params.hpp"
#include "evogen/tensor.hpp"

namespace evogen {

// Log-variances leaving this module are clamped to this symmetric bound so
// exp() stays in a sane range.
inline constexpr double kLogVarBound = 10.0;

// Diagonal Gaussian over [T, L, d] (rows x positions x channels), exposed
// form: logvar is already clamped to [-kLogVarBound, kLogVarBound].
struct GaussianParams {
  Tensor mean;
  Tensor logvar;
};

// Pre-autoregression, pre-clamp parameters.  Channel-causal shifts and the
// final clamp are applied per sample path (conditional_params /
// ancestral_sample); keeping the base raw makes the additive composition of
// distributions exact (means add; raw log-variances add).
struct LatentBase {
  Tensor mean;
  Tensor logvar_raw;
};

// One level of the hierarchy.  The two distribution heads share a trunk
// (twin heads over a common embedding): the context/ancestor side feeds the
// base distribution, the per-row target side feeds an additive shift that
// turns it into the refined one.
struct LatentLevelParams {
  Tensor trunk_w, trunk_b;             // [c_s, hidden], shared by both sides
  Tensor prev_w;                        // [d_prev, hidden]; undefined at level 0
  Tensor base_head_w, base_head_b;      // [hidden, 2d]
  Tensor shift_head_w, shift_head_b;    // [hidden, 2d]
  Tensor ar_mean_w, ar_logvar_w;        // [d, d]; used under a strict s<t mask
  Tensor inject_w;                      // [d, c_s]
};

void register_latent_level(ParamStore& store, const std::string& prefix,
                           int c_s, int hidden, int dim, int prev_dim,
                           const SeedStream& root);
LatentLevelParams latent_level_params(const ParamStore& store,
                                      const std::string& prefix, bool has_prev);

// Base distribution of a level from the context summary [L, c_s] and, beyond
// the first level, the previous level's sample [T, L, d_prev].  Result is
// [T, L, d] (broadcast over rows when no previous sample conditions it).
LatentBase prior_from_context(const Tensor& context_summary, const Tensor& prev_sample,
                              std::int64_t n_rows, const LatentLevelParams& p);

// Additive refinement computed from per-target-row activations [T, L, c_s].
LatentBase deviation_from_target(const Tensor& target_summary, const LatentLevelParams& p);

// Component-wise sum: refined base = base + deviation (exact in raw space).
LatentBase add_base(const LatentBase& a, const LatentBase& b);

// Exposed (clamped) view of a base with no channel conditioning applied.
GaussianParams clamp_params(const LatentBase& base);

// Conditional parameters along a fully known sample path: channel t sees a
// linear shift from channels s < t of `path` (strictly masked), then clamps.
GaussianParams conditional_params(const LatentBase& base, const Tensor& ar_mean_w,
                                  const Tensor& ar_logvar_w, const Tensor& path);

// Draws channel-by-channel: each channel's mean/logvar is conditioned on the
// channels already drawn, so the returned params are exactly the conditional
// parameters realized along the returned sample's own path.
struct AncestralDraw {
  Tensor sample;
  GaussianParams params;
};
AncestralDraw ancestral_sample(const LatentBase& base, const Tensor& ar_mean_w,
                               const Tensor& ar_logvar_w, const Tensor& noise);

// mean + exp(logvar/2) * noise.
Tensor sample_reparam(const GaussianParams& g, const Tensor& noise);

// KL(post || prior) summed over positions and channels, averaged over rows.
Tensor kl_term(const GaussianParams& post, const GaussianParams& prior);

// Log-density of x, summed over positions and channels, averaged over rows.
Tensor gaussian_log_density(const GaussianParams& g, const Tensor& x);

}  // namespace evogen
