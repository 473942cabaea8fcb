#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evogen/msa.hpp"
#include "evogen/random.hpp"
#include "evogen/tensor.hpp"

namespace evogen {

// Token vocabulary, in this fixed order:
//   0..19  canonical residues "ACDEFGHIKLMNPQRSTVWY" (alphabetical)
//   20     'X' (any rare residue)
//   21     '-' (gap)
inline constexpr int kVocabSize = 22;
inline constexpr int kRareToken = 20;
inline constexpr int kGapToken = 21;
inline constexpr int kDeletionBins = 6;

int token_id(char symbol);
char token_symbol(int id);

// Dense integer/real encoding of an alignment subset: row-major N x L.
struct TokenGrid {
  int rows = 0;
  int length = 0;
  std::vector<int> tokens;        // in [0, 21]
  std::vector<int> del_raw;       // non-negative insertion counts
  std::vector<double> del_value;  // squashed counts in [0, 1)

  int token(int r, int c) const { return tokens[static_cast<std::size_t>(r) * length + c]; }
  double del(int r, int c) const { return del_value[static_cast<std::size_t>(r) * length + c]; }
};

// Squashes a deletion count into [0, 1): (2/pi) * atan(d / 3).
double deletion_transform(int count);

// Bucket index for a squashed deletion value; bin edges are
// {0.2, 0.35, 0.5, 0.65, 0.8} (six bins over [0, 1)).
int discretize_deletion(double value);

// Representative value of a deletion bin (its center) and the corresponding
// reconstructed count, round(3 * tan(pi * center / 2)).
double deletion_bin_center(int bin);
int deletion_bin_count(int bin);

TokenGrid tokenize(const Msa& msa);
// Tokenizes only the given rows, in the given order.
TokenGrid tokenize_rows(const Msa& msa, const std::vector<int>& row_indices);

// Deterministic context/target partition of rows [0, depth).  The context
// holds max(1, floor(r_ctx * depth)) rows; row 0 is always in it; the rest are
// drawn uniformly without replacement from a stream derived from `seed`.
// Both index lists are sorted ascending, and targets are the complement.
struct ContextTargetSplit {
  std::vector<int> context;
  std::vector<int> targets;
};
ContextTargetSplit split_context_target(int depth, double r_ctx, std::uint64_t seed);

// Per-row, per-position categorical outputs of the generator: residue logits
// over the 22-token vocabulary and deletion-bin logits over 6 bins.
struct OutputLogits {
  Tensor aa;   // [rows, L, 22]
  Tensor del;  // [rows, L, 6]

  int rows() const { return static_cast<int>(aa.dim(0)); }
  int length() const { return static_cast<int>(aa.dim(1)); }
};

enum class DetokenizeMode { kArgmax, kSample };

// Converts generator outputs back to aligned rows.  kArgmax takes the highest
// scoring token/bin (ties toward the lowest index); kSample draws from the
// softmax distributions using `stream`.  Deletion counts come from the chosen
// bin's center.
std::vector<AlignedRow> detokenize(const OutputLogits& out, DetokenizeMode mode,
                                   SeedStream* stream = nullptr);

// --- feature container -------------------------------------------------------
// Residue probability grids exchanged with external consumers.  On disk:
//   magic "EVGFEAT\0" | u32 version | u32 rows | u32 length | u32 query_len |
//   query bytes | f32 payload rows*length*22 (row-major, little-endian)
inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureGrid {
  int rows = 0;
  int length = 0;
  std::string query;         // query residue string, no gaps
  std::vector<float> probs;  // rows x length x 22

  bool operator==(const FeatureGrid&) const = default;
};

// One-hot features of alignment rows (probability 1 on each observed token).
FeatureGrid features_from_grid(const TokenGrid& grid, const std::string& query);

void export_features(const FeatureGrid& grid, const std::string& path);
FeatureGrid import_features(const std::string& path);

}  // namespace evogen
