#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evogen/featurize.hpp"
#include "evogen/hyperformer.hpp"
#include "evogen/latent.hpp"
#include "evogen/params.hpp"

namespace evogen {

// Architecture hyperparameters.  Defaults are desk scale (small enough for
// CPU round trips in tests); full_scale() matches the production setting.
struct ModelConfig {
  int n_enc_blocks = 2;
  int n_dec_blocks = 2;
  int c_s = 32;
  int c_p = 16;
  int heads = 2;
  std::vector<int> latent_dims = {8};  // strictly increasing, one per level
  int latent_hidden = 32;
  int num_buckets = 32;
  int max_distance = 128;
  double rope_base = 10000.0;
  int transition_factor = 2;
  int opm_dim = 8;

  int levels() const { return static_cast<int>(latent_dims.size()); }
  HyperformerConfig hyperformer() const;
  // Throws std::invalid_argument on any inconsistent combination.
  void validate() const;
  // Stable 64-bit fingerprint of the full configuration; checkpoints carry it
  // so weights are never silently loaded into a different architecture.
  std::uint64_t digest() const;
  static ModelConfig full_scale();

  bool operator==(const ModelConfig&) const = default;
};

std::string config_to_json(const ModelConfig& cfg);
// Accepts a (possibly partial) JSON object; missing keys keep their defaults,
// unknown keys and wrong types are DataError.
ModelConfig config_from_json(const std::string& text);

// Realized latent variables of one decoder sweep.  `prior` always holds the
// conditional parameters along `sample`'s own path; `posterior` is defined
// only when the sample was drawn from the refined (target-informed)
// distribution.
struct LatentLevelState {
  Tensor sample;  // [T, L, d_k]
  GaussianParams prior;
  GaussianParams posterior;
};
struct LatentState {
  std::vector<LatentLevelState> levels;
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  // Adopts externally loaded weights; layout must match the registration the
  // config implies (DataError otherwise).
  Model(ModelConfig config, ParamStore params);

  const ModelConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

  struct Embedded {
    Tensor seq;   // [N, L, c_s]
    Tensor pair;  // [L, L, c_p]
  };
  Embedded embed(const TokenGrid& grid) const;

  // Encoder pass over context then target rows (in that row order).  Returns
  // every block's sequence activations (consumed mirror-depth-first as skip
  // connections) and each level's additive refinement, computed from the
  // target rows of the activations at the level's mirror depth.
  struct EncodeResult {
    std::vector<Tensor> skips;           // n_enc entries, [C+T, L, c_s]
    std::vector<LatentBase> deviations;  // one per level, [T, L, d_k]
  };
  EncodeResult encode(const TokenGrid& context, const TokenGrid& targets) const;

  struct DecodeResult {
    OutputLogits logits;  // over the T non-context rows
    LatentState latents;
  };
  // Decoder sweep with externally provided latent samples.  Pass the encoder
  // skips to reproduce the reconstruction path; null runs the pure
  // generative wiring.
  DecodeResult decode(const TokenGrid& context, const LatentState& provided,
                      const std::vector<Tensor>* skips) const;

  // Full posterior round trip on a context/target split.  `total` is the
  // minimization objective: recon_aa + recon_del + beta * sum(kl).
  struct ElboResult {
    Tensor total;
    Tensor recon_aa;  // mean over target rows of summed residue CE
    Tensor recon_del; // same for deletion bins
    std::vector<Tensor> kl;  // one scalar per level
    OutputLogits logits;
    LatentState latents;
  };
  ElboResult elbo(const TokenGrid& context, const TokenGrid& targets, double beta,
                  SeedStream noise) const;

  // Draws n_out new rows conditioned on the context alone (no skips, latents
  // sampled from their base distributions level by level).
  DecodeResult generate(const TokenGrid& context, int n_out, SeedStream noise) const;

  // Decoder depth at which each level injects (evenly spaced, one per level).
  std::vector<int> injection_depths() const;
  // Encoder depth whose activations feed each level's refinement network.
  std::vector<int> mirror_depths() const;

 private:
  enum class LatentMode { kProvided, kPrior, kPosterior };
  struct SweepOut {
    OutputLogits logits;
    LatentState latents;
    std::vector<Tensor> kls;
  };
  SweepOut sweep(const TokenGrid& context, int n_out, LatentMode mode,
                 const std::vector<LatentBase>* deviations,
                 const LatentState* provided, const std::vector<Tensor>* skips,
                 SeedStream* noise) const;

  ModelConfig config_;
  ParamStore params_;
};

// Mean-per-row log importance weight of one posterior round trip, evaluated
// on the drawn samples: log p(x|z) + log p(z) - log q(z|x).  Averaging its
// exponential over independent round trips tightens the evidence estimate.
Tensor log_importance_weight(const Model::ElboResult& r);

}  // namespace evogen
