#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evogen/critic.hpp"
#include "evogen/model.hpp"
#include "evogen/msa.hpp"
#include "evogen/trim.hpp"

namespace evogen {

// Identifying details of one sampling trial, serializable to the run manifest.
struct TrialRecord {
  std::string protocol;      // calibrate | augment | zeroshot | probe
  double r_ctx = 1.0;        // context fraction (1 = all rows kept verbatim)
  int n_rows = 0;            // rows in the emitted grid
  int trial = 0;
  std::uint64_t seed = 0;    // fingerprint of the stream that drove the trial
  double confidence = -1.0;  // critic confidence when scored, else -1
  std::string note;
};
std::string trial_manifest_json(std::span<const TrialRecord> records);

// One emitted alignment: a concrete row view plus the probability features
// that external consumers read.  Row 0 is always the query.
struct ProtocolOutput {
  TrialRecord meta;
  Msa msa;
  FeatureGrid grid;
};

// --- posterior rewrite ---------------------------------------------------------

// Keeps a random context subset of rows verbatim and replaces the remaining
// rows with their posterior reconstruction, at several context fractions,
// several trials each.  Soft outputs carry the full per-cell distribution;
// hard outputs sample tokens and one-hot them.
struct CalibrationConfig {
  std::vector<double> r_ctx = {0.5, 0.7, 0.9};
  int trials = 5;
  bool hard_tokens = false;
  std::uint64_t seed = 0;
};
struct CalibrationResult {
  std::vector<ProtocolOutput> outputs;
  bool depth_too_small = false;  // < 2 rows: outputs are verbatim passthroughs
};
CalibrationResult calibrate(const Msa& msa, const Model& model,
                            const CalibrationConfig& cfg);

// --- generative deepening --------------------------------------------------------

// Emits alignments of exactly n_aug rows: the query plus n_aug - 1 generated
// rows, conditioned on a random context subset of the real alignment.
struct AugmentationConfig {
  int n_aug = 128;
  std::vector<double> r_ctx = {0.5, 0.7, 0.9};
  int trials = 5;
  bool hard_tokens = false;
  std::uint64_t seed = 0;
};
std::vector<ProtocolOutput> augment(const Msa& msa, const Model& model,
                                    const AugmentationConfig& cfg);

// Same idea for a lone query sequence (no homologs at all): every generated
// alignment is conditioned on the query row alone.
struct ZeroShotConfig {
  std::vector<int> n_aug = {16, 32, 64};
  int trials = 2;
  bool hard_tokens = false;
  std::uint64_t seed = 0;
};
std::vector<ProtocolOutput> zero_shot(const std::string& query, const Model& model,
                                      const ZeroShotConfig& cfg);

// Stable ordering of trial indices by descending confidence.
std::vector<int> rank_by_confidence(std::span<const double> confidences);

// --- subset probing ----------------------------------------------------------------

// Similarity in [0, 1] between two equal-length grids: one minus the mean
// per-column total-variation distance of the row-averaged residue profiles.
double profile_similarity(const FeatureGrid& a, const FeatureGrid& b);

using SimilarityFn = std::function<double(const FeatureGrid&, const FeatureGrid&)>;

// Rewrites many random context subsets of a (depth-capped) alignment, scores
// each rewrite with the critic, keeps the confident ones, and groups them by
// single-linkage on grid similarity.  Distinct surviving groups indicate the
// alignment supports several self-consistent solutions.
struct ProbeConfig {
  std::vector<int> n_max = {512, 1024};          // depth caps applied before probing
  std::vector<int> n_sub = {16, 32, 64};         // rows per subset (query included)
  std::vector<double> r_ctx = {0.25, 0.5, 0.75}; // rewrite fraction within a subset
  int trials = 2;
  double similarity_threshold = 0.8;
  double confidence_min = 50.0;
  std::uint64_t seed = 0;
};
struct ProbeItem {
  TrialRecord meta;
  FeatureGrid grid;
  CriticReport report;
};
struct ProbeResult {
  std::vector<ProbeItem> items;
  // Groups of indices into `items` (confident items only), largest first.
  std::vector<std::vector<int>> ensembles;
};
ProbeResult probe(const Msa& msa, const Model& model, const Critic& critic,
                  const ProbeConfig& cfg, const SimilarityFn& similarity = {});

}  // namespace evogen
