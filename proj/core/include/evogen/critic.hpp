#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "evogen/featurize.hpp"

namespace evogen {

// Relative weights used to fold the per-channel scores into one scalar.
struct ChannelWeights {
  double fape = 0.5;
  double torsion = 0.5;
  double violation = 0.01;
  double confidence = 0.01;
};

struct CriticReport {
  // Keys: fape_like, torsion_like, violation_like, confidence_like.
  std::map<std::string, double> channels;
  double confidence = 0.0;  // scalar quality estimate in [0, 100], higher is better
  double weighted_total = 0.0;
};

// External scorer of residue probability grids.  Implementations consume a
// dense rows x length x 22 row-major grid where every cell is a distribution
// over the vocabulary; grad_dense additionally reports
// d(weighted_total)/d(probs) so a training graph can splice the score in as a
// boundary node.
class Critic {
 public:
  virtual ~Critic() = default;

  virtual CriticReport score_dense(std::span<const double> probs, int rows,
                                   int length) const = 0;
  virtual CriticReport grad_dense(std::span<const double> probs, int rows, int length,
                                  const ChannelWeights& weights,
                                  std::span<double> grad_out) const = 0;

  CriticReport score(const FeatureGrid& grid) const;
};

// Deterministic stand-in with the same interface shape as a structure-quality
// pipeline: residue cross-entropy against a fixed per-position profile
// (fape_like), squared distance to that profile (torsion_like), mean gap mass
// (violation_like), and a saturating confidence readout.  Smooth in the
// probabilities, cheap, parameter-free; `weights` seeds the weighting used by
// score()/score_dense().
std::unique_ptr<Critic> synthetic_critic(std::vector<int> profile_tokens,
                                         ChannelWeights weights = {});

}  // namespace evogen
