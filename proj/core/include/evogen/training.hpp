#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "evogen/critic.hpp"
#include "evogen/model.hpp"
#include "evogen/msa.hpp"
#include "evogen/optim.hpp"
#include "evogen/random.hpp"

namespace evogen {

struct TrainConfig {
  int batch_size = 128;
  int crop_length = 256;  // alignments longer than this get a random column crop
  int crop_depth = 128;   // deeper alignments get a random row subsample (query kept)
  double lr_peak = 5e-4;
  double lr_final = 1e-5;
  int warmup_steps = 3000;
  int decay_steps = 100000;
  int total_steps = 150000;  // pretraining horizon; sets the divergence ramp
  double clip_norm = 0.1;
  double kl_warmup_fraction = 0.3;
  double r_ctx_min = 0.3;
  double r_ctx_max = 0.9;
  AdamConfig adam;

  // Critic-guided refinement.
  ChannelWeights critic_weights;
  double elbo_weight = 0.1;   // auxiliary reconstruction objective weight
  bool hard_tokens = false;   // score sampled one-hot rows instead of soft rows
  double gumbel_temperature = 1.0;
  int finetune_gen_rows = 4;  // rows generated per alignment when refining
};

// Piecewise learning rate: linear 0 -> lr_peak over warmup_steps, cosine decay
// to lr_final over the next decay_steps, constant lr_final afterwards.
double lr_at_step(int step, const TrainConfig& cfg);

// Divergence weight: ramps linearly from 0 to 1 over the first
// kl_warmup_fraction of total_steps, then holds at 1.
double kl_beta(int step, const TrainConfig& cfg);

// Per-alignment objective weight, proportional to sqrt(length).
double loss_weight(int length);

struct StepMetrics {
  int step = 0;
  double lr = 0.0;
  double beta = 0.0;
  double loss = 0.0;       // batch objective (weighted sum over alignments)
  double recon_aa = 0.0;   // per-alignment means of the components
  double recon_del = 0.0;
  double kl = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm
  int used = 0;
  int skipped = 0;
};
std::string metrics_line(const StepMetrics& m);

struct FinetuneMetrics {
  int step = 0;
  double lr = 0.0;
  double total = 0.0;                      // batch objective (mean over alignments)
  std::map<std::string, double> channels;  // mean critic channels
  double confidence = 0.0;                 // mean critic confidence
  double elbo_term = 0.0;                  // mean auxiliary objective
  double grad_norm = 0.0;
  int used = 0;
};
std::string metrics_line(const FinetuneMetrics& m);

// --- synthetic families -------------------------------------------------------

// Families built from a random ancestor: conserved columns keep the ancestor
// residue, the rest mutate independently, and every cell can drop to a gap.
// Column statistics are analytic, which makes learning measurable.
struct SyntheticFamilyConfig {
  int families = 8;
  int depth = 16;
  int length = 24;
  double conserved_fraction = 0.5;
  double mutation_rate = 0.5;
  double gap_rate = 0.1;
  std::uint64_t seed = 0;
};
struct SyntheticFamily {
  Msa msa;
  std::vector<std::uint8_t> conserved;  // per-column flags
};
std::vector<SyntheticFamily> synth_corpus(const SyntheticFamilyConfig& cfg);

// --- discrete relaxation -------------------------------------------------------

// Gumbel-perturbed softmax over the last axis plus a straight-through hard
// sample: `hard` is the exact one-hot argmax of `soft`, and `st` equals `hard`
// bit-for-bit in the forward pass while routing gradients to `soft`.
struct GumbelSample {
  Tensor soft, hard, st;
};
GumbelSample gumbel_st(const Tensor& logits, double temperature, SeedStream& stream);

// --- cropping helpers (exposed for tests) ---------------------------------------

Msa crop_columns(const Msa& msa, int offset, int new_length);
// keep must be nonempty, sorted, and start with row 0.
Msa subsample_rows(const Msa& msa, const std::vector<int>& keep);

// --- optimization steps ----------------------------------------------------------

// One reconstruction step over a batch of alignments: random row/column crops,
// a random context/target split per alignment, then a clipped Adam update on
// the sqrt(length)-weighted summed objective.  Alignments too shallow to
// split are skipped.  Deterministic given (step, cfg, run).
StepMetrics pretrain_step(Model& model, std::span<const Msa> batch, AdamState& opt,
                          int step, const TrainConfig& cfg, const SeedStream& run);

struct FinetuneExample {
  const Msa* msa = nullptr;
  const Critic* critic = nullptr;
};

// One critic-guided step: generate rows conditioned on each alignment, score
// the generated distribution grid with the example's critic (gradients enter
// the graph at the feature boundary), add the auxiliary reconstruction
// objective, and apply a clipped Adam update on the batch mean.
FinetuneMetrics finetune_step(Model& model, std::span<const FinetuneExample> batch,
                              AdamState& opt, int step, const TrainConfig& cfg,
                              const SeedStream& run);

}  // namespace evogen
