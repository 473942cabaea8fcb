#pragma once

#include <string>
#include <vector>

#include "evogen/params.hpp"
#include "evogen/tensor.hpp"

namespace evogen {

struct HyperformerConfig {
  int c_s = 32;   // sequence channel width (must divide by heads)
  int c_p = 16;   // pair channel width
  int heads = 2;
  int num_buckets = 32;    // relative-position buckets (even; half per sign)
  int max_distance = 128;  // offsets at or beyond this clamp to the edge bucket
  double rope_base = 10000.0;
  int transition_factor = 4;  // hidden width multiplier in transition MLPs
  int opm_dim = 8;            // low-rank width of the outer-product-mean update

  int head_dim() const { return c_s / heads; }
};

// Signed, log-spaced relative-position bucket (T5 style).  Bucket 0 is the
// diagonal; offsets with i > j use buckets [0, num_buckets/2), i < j the upper
// half.  Small offsets get exact buckets, larger ones log-spaced, and offsets
// at or beyond max_distance clamp to the last bucket of their sign.
int relpos_bucket(int i, int j, int num_buckets = 32, int max_distance = 128);

// Plain-vector rotary transform of one vector at one position: channel pairs
// (v[2t], v[2t+1]) rotate by angle position * base^(-2t/dim).  The tensor op
// rope() applies the same map across a whole [..., L, d] tensor.
std::vector<double> rope_apply(std::span<const double> v, int position, double base);

// Scaled dot-product attention over the second-to-last axis with an optional
// additive bias and optional rotary phases on q/k:
//   out_i = sum_j softmax_j(rope(q_i).rope(k_j) / sqrt(d) + bias_ij) v_j
// q,k,v: [*, L, d]; bias broadcastable to [*, L, L] (pass an undefined Tensor
// for unbiased attention).  With rotation off this is standard biased
// attention.
Tensor hyper_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const Tensor& bias, bool use_rope, double rope_base);

// --- block sub-modules -------------------------------------------------------

struct OpmParams {
  Tensor norm_scale, norm_offset;
  Tensor proj_a, proj_b;  // [c_s, opm_dim]
  Tensor out_w, out_b;    // [opm_dim^2, c_p], [c_p]
};

struct AttentionParams {
  Tensor norm_scale, norm_offset;
  Tensor wq, wk, wv;    // [c_s, c_s]
  Tensor out_w, out_b;  // [c_s, c_s], [c_s]
};

struct RowAttentionParams : AttentionParams {
  Tensor pair_norm_scale, pair_norm_offset;
  Tensor pair_bias_w;   // [c_p, heads]
  Tensor relpos_table;  // [num_buckets, heads]
};

struct TransitionParams {
  Tensor norm_scale, norm_offset;
  Tensor w1, b1;  // [c, f*c]
  Tensor w2, b2;  // [f*c, c]
};

struct QueryConditioningParams {
  Tensor gate_row_w, gate_query_w, gate_b;  // [c_s, c_s], [c_s, c_s], [c_s]
  Tensor mix_w;                             // [c_s, c_s]
};

struct BlockParams {
  OpmParams opm;
  RowAttentionParams row;
  AttentionParams col;
  TransitionParams seq_transition, pair_transition;
  QueryConditioningParams qc;  // resolved only for encoder blocks
  bool has_qc = false;
};

// Mean outer product over rows: update[i][j] = linear(mean_n(a_ni (x) b_nj))
// with a, b low-rank projections of the normed sequence activations.
// seq [N, L, c_s] -> [L, L, c_p].
Tensor outer_product_mean(const Tensor& seq, const OpmParams& p);

// Gated additive query mix: row_i + linear(gate(row_i, query)) (.) query.
// Zero mix weights make this an exact identity.  seq [N, L, c_s],
// query [L, c_s].
Tensor query_conditioning(const Tensor& seq, const Tensor& query,
                          const QueryConditioningParams& p);

// One trunk block.  The pair update (outer product mean) runs first; the
// sequence branch (optional query conditioning, pair-biased row attention
// with rotary phases, unbiased column attention over rows, transition) and
// the pair transition then both read that updated pair.  All sub-layers are
// pre-norm residuals; zero-initialized output projections make the whole
// block an identity map.
struct BlockResult {
  Tensor seq;
  Tensor pair;
};
BlockResult hyperformer_block(const Tensor& seq, const Tensor& pair,
                              const BlockParams& p, const HyperformerConfig& cfg,
                              bool use_query_conditioning);

// Parameter registration / resolution by path prefix.
void register_block(ParamStore& store, const std::string& prefix,
                    const HyperformerConfig& cfg, bool with_qc, const SeedStream& root);
BlockParams block_params(const ParamStore& store, const std::string& prefix,
                         bool with_qc);

}  // namespace evogen
