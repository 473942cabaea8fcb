#include "evogen/hyperformer.hpp"

#include <cmath>
#include <stdexcept>

namespace evogen {

namespace {

using i64 = std::int64_t;

// Permutation that swaps the last two axes of a rank-n tensor.
std::vector<int> swap_last_perm(int ndim) {
  std::vector<int> perm(ndim);
  for (int i = 0; i < ndim; ++i) perm[i] = i;
  std::swap(perm[ndim - 1], perm[ndim - 2]);
  return perm;
}

}  // namespace

int relpos_bucket(int i, int j, int num_buckets, int max_distance) {
  if (num_buckets < 4 || num_buckets % 2 != 0)
    throw std::invalid_argument("relpos_bucket needs an even bucket count >= 4");
  const int half = num_buckets / 2;
  const int max_exact = half / 2;
  if (max_distance <= max_exact)
    throw std::invalid_argument("relpos_bucket max_distance too small for bucket count");
  long long rel = static_cast<long long>(i) - static_cast<long long>(j);
  int side = 0;
  if (rel < 0) {
    side = half;  // i < j occupies the upper half of the table
    rel = -rel;
  }
  int b;
  if (rel < max_exact) {
    b = static_cast<int>(rel);
  } else {
    const double t = std::log(static_cast<double>(rel) / max_exact) /
                     std::log(static_cast<double>(max_distance) / max_exact);
    b = max_exact + static_cast<int>(t * (half - max_exact));
    if (b > half - 1) b = half - 1;
  }
  return side + b;
}

std::vector<double> rope_apply(std::span<const double> v, int position, double base) {
  if (v.size() % 2 != 0)
    throw std::invalid_argument("rope_apply requires an even vector width");
  const int d = static_cast<int>(v.size());
  std::vector<double> out(v.size());
  for (int t = 0; 2 * t < d; ++t) {
    const double freq = std::pow(base, -2.0 * t / d);
    const double ang = static_cast<double>(position) * freq;
    const double c = std::cos(ang), s = std::sin(ang);
    out[2 * t] = v[2 * t] * c - v[2 * t + 1] * s;
    out[2 * t + 1] = v[2 * t] * s + v[2 * t + 1] * c;
  }
  return out;
}

Tensor hyper_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const Tensor& bias, bool use_rope, double rope_base) {
  if (q.ndim() < 2) throw std::invalid_argument("hyper_attention requires rank >= 2");
  const i64 d = q.dim(q.ndim() - 1);
  Tensor qr = use_rope ? rope(q, rope_base) : q;
  Tensor kr = use_rope ? rope(k, rope_base) : k;
  const auto perm = swap_last_perm(k.ndim());
  Tensor logits = matmul(qr, transpose(kr, perm)) * (1.0 / std::sqrt(static_cast<double>(d)));
  if (bias.defined()) logits = logits + bias;
  Tensor att = softmax(logits, -1);
  return matmul(att, v);
}

Tensor outer_product_mean(const Tensor& seq, const OpmParams& p) {
  const i64 n = seq.dim(0), len = seq.dim(1);
  const i64 da = p.proj_a.dim(1), db = p.proj_b.dim(1);
  Tensor x = layer_norm(seq, p.norm_scale, p.norm_offset);
  Tensor a = matmul(x, p.proj_a);  // [N, L, da]
  Tensor b = matmul(x, p.proj_b);  // [N, L, db]
  // Outer product averaged over rows as one flat product:
  // [L*da, N] x [N, L*db] -> every (i,u,j,v) pair summed over rows.
  Tensor at = reshape(transpose(a, {1, 2, 0}), {len * da, n});
  Tensor bt = reshape(b, {n, len * db});
  Tensor prod = matmul(at, bt) * (1.0 / static_cast<double>(n));
  Tensor grid = transpose(reshape(prod, {len, da, len, db}), {0, 2, 1, 3});
  Tensor flat = reshape(grid, {len, len, da * db});
  return matmul(flat, p.out_w) + p.out_b;
}

Tensor query_conditioning(const Tensor& seq, const Tensor& query,
                          const QueryConditioningParams& p) {
  Tensor gate = sigmoid(matmul(seq, p.gate_row_w) + matmul(query, p.gate_query_w) + p.gate_b);
  return seq + mul(matmul(gate, p.mix_w), query);
}

namespace {

// [N, L, c] -> per-head layout [N, H, L, c/H].
Tensor split_heads(const Tensor& x, int heads) {
  const i64 n = x.dim(0), len = x.dim(1), c = x.dim(2);
  return transpose(reshape(x, {n, len, heads, c / heads}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
  const i64 n = x.dim(0), heads = x.dim(1), len = x.dim(2), dh = x.dim(3);
  return reshape(transpose(x, {0, 2, 1, 3}), {n, len, heads * dh});
}

// Additive attention bias [H, L, L]: projected pair activations plus a learned
// per-bucket relative-position table.
Tensor attention_bias(const Tensor& pair, const RowAttentionParams& p,
                      const HyperformerConfig& cfg) {
  const i64 len = pair.dim(0);
  Tensor pn = layer_norm(pair, p.pair_norm_scale, p.pair_norm_offset);
  Tensor from_pair = transpose(matmul(pn, p.pair_bias_w), {2, 0, 1});  // [H, L, L]
  std::vector<i64> ids(static_cast<std::size_t>(len * len));
  for (i64 i = 0; i < len; ++i)
    for (i64 j = 0; j < len; ++j)
      ids[static_cast<std::size_t>(i * len + j)] =
          relpos_bucket(static_cast<int>(i), static_cast<int>(j),
                        cfg.num_buckets, cfg.max_distance);
  Tensor from_rel = transpose(reshape(gather(p.relpos_table, ids, 0),
                                      {len, len, cfg.heads}),
                              {2, 0, 1});
  return from_pair + from_rel;
}

// Residual row-wise attention: each row attends over positions, biased by the
// pair stack and rotated by position.
Tensor row_attention(const Tensor& seq, const Tensor& pair,
                     const RowAttentionParams& p, const HyperformerConfig& cfg) {
  Tensor x = layer_norm(seq, p.norm_scale, p.norm_offset);
  Tensor qh = split_heads(matmul(x, p.wq), cfg.heads);
  Tensor kh = split_heads(matmul(x, p.wk), cfg.heads);
  Tensor vh = split_heads(matmul(x, p.wv), cfg.heads);
  Tensor bias = attention_bias(pair, p, cfg);
  Tensor att = hyper_attention(qh, kh, vh, bias, /*use_rope=*/true, cfg.rope_base);
  return seq + (matmul(merge_heads(att), p.out_w) + p.out_b);
}

// Residual column-wise attention: each position attends over rows, unbiased
// and without rotation (rows carry no order).
Tensor column_attention(const Tensor& seq, const AttentionParams& p,
                        const HyperformerConfig& cfg) {
  const i64 n = seq.dim(0), len = seq.dim(1), c = seq.dim(2);
  Tensor x = layer_norm(seq, p.norm_scale, p.norm_offset);
  auto to_cols = [&](const Tensor& t) {
    // [N, L, c] -> [L, H, N, dh]
    return transpose(reshape(t, {n, len, cfg.heads, c / cfg.heads}), {1, 2, 0, 3});
  };
  Tensor qh = to_cols(matmul(x, p.wq));
  Tensor kh = to_cols(matmul(x, p.wk));
  Tensor vh = to_cols(matmul(x, p.wv));
  Tensor att = hyper_attention(qh, kh, vh, Tensor(), /*use_rope=*/false, cfg.rope_base);
  Tensor merged = reshape(transpose(att, {2, 0, 1, 3}), {n, len, c});
  return seq + (matmul(merged, p.out_w) + p.out_b);
}

Tensor transition(const Tensor& x, const TransitionParams& p) {
  Tensor h = gelu(matmul(layer_norm(x, p.norm_scale, p.norm_offset), p.w1) + p.b1);
  return x + (matmul(h, p.w2) + p.b2);
}

}  // namespace

BlockResult hyperformer_block(const Tensor& seq, const Tensor& pair,
                              const BlockParams& p, const HyperformerConfig& cfg,
                              bool use_query_conditioning) {
  if (cfg.c_s % cfg.heads != 0)
    throw std::invalid_argument("sequence width must divide evenly into heads");
  // Pair update runs first; both branches below read the updated pair.
  Tensor pair2 = pair + outer_product_mean(seq, p.opm);
  Tensor s = seq;
  if (use_query_conditioning) {
    if (!p.has_qc) throw std::invalid_argument("block has no query-conditioning parameters");
    Tensor query = reshape(slice(seq, 0, 0, 1), {seq.dim(1), seq.dim(2)});
    s = query_conditioning(s, query, p.qc);
  }
  s = row_attention(s, pair2, p.row, cfg);
  s = column_attention(s, p.col, cfg);
  s = transition(s, p.seq_transition);
  Tensor pair_out = transition(pair2, p.pair_transition);
  return {s, pair_out};
}

void register_block(ParamStore& store, const std::string& prefix,
                    const HyperformerConfig& cfg, bool with_qc, const SeedStream& root) {
  const i64 c = cfg.c_s, cp = cfg.c_p, h = cfg.heads;
  const i64 da = cfg.opm_dim;
  const i64 fs = static_cast<i64>(cfg.transition_factor) * c;
  const i64 fp = static_cast<i64>(cfg.transition_factor) * cp;
  const double ss = 1.0 / std::sqrt(static_cast<double>(c));
  const double sp = 1.0 / std::sqrt(static_cast<double>(cp));
  auto norm = [&](const std::string& at, i64 width) {
    store.add(at + "/norm_scale", init_full(at + "/norm_scale", {width}, 1.0));
    store.add(at + "/norm_offset", init_zeros(at + "/norm_offset", {width}));
  };
  auto dense = [&](const std::string& name, Shape shape, double stddev) {
    store.add(name, init_normal(name, std::move(shape), stddev, root));
  };
  auto zero = [&](const std::string& name, Shape shape) {
    store.add(name, init_zeros(name, std::move(shape)));
  };

  const std::string opm = prefix + "/opm";
  norm(opm, c);
  dense(opm + "/proj_a", {c, da}, ss);
  dense(opm + "/proj_b", {c, da}, ss);
  zero(opm + "/out_w", {da * da, cp});
  zero(opm + "/out_b", {cp});

  const std::string row = prefix + "/row_attn";
  norm(row, c);
  dense(row + "/wq", {c, c}, ss);
  dense(row + "/wk", {c, c}, ss);
  dense(row + "/wv", {c, c}, ss);
  zero(row + "/out_w", {c, c});
  zero(row + "/out_b", {c});
  store.add(row + "/pair_norm_scale", init_full(row + "/pair_norm_scale", {cp}, 1.0));
  store.add(row + "/pair_norm_offset", init_zeros(row + "/pair_norm_offset", {cp}));
  dense(row + "/pair_bias_w", {cp, h}, sp);
  zero(row + "/relpos_table", {cfg.num_buckets, h});

  const std::string col = prefix + "/col_attn";
  norm(col, c);
  dense(col + "/wq", {c, c}, ss);
  dense(col + "/wk", {c, c}, ss);
  dense(col + "/wv", {c, c}, ss);
  zero(col + "/out_w", {c, c});
  zero(col + "/out_b", {c});

  const std::string st = prefix + "/seq_transition";
  norm(st, c);
  dense(st + "/w1", {c, fs}, ss);
  zero(st + "/b1", {fs});
  zero(st + "/w2", {fs, c});
  zero(st + "/b2", {c});

  const std::string pt = prefix + "/pair_transition";
  norm(pt, cp);
  dense(pt + "/w1", {cp, fp}, sp);
  zero(pt + "/b1", {fp});
  zero(pt + "/w2", {fp, cp});
  zero(pt + "/b2", {cp});

  if (with_qc) {
    const std::string qc = prefix + "/query_cond";
    dense(qc + "/gate_row_w", {c, c}, ss);
    dense(qc + "/gate_query_w", {c, c}, ss);
    zero(qc + "/gate_b", {c});
    zero(qc + "/mix_w", {c, c});
  }
}

BlockParams block_params(const ParamStore& store, const std::string& prefix,
                         bool with_qc) {
  BlockParams p;
  const std::string opm = prefix + "/opm";
  p.opm = {store.at(opm + "/norm_scale"), store.at(opm + "/norm_offset"),
           store.at(opm + "/proj_a"),     store.at(opm + "/proj_b"),
           store.at(opm + "/out_w"),      store.at(opm + "/out_b")};
  const std::string row = prefix + "/row_attn";
  p.row.norm_scale = store.at(row + "/norm_scale");
  p.row.norm_offset = store.at(row + "/norm_offset");
  p.row.wq = store.at(row + "/wq");
  p.row.wk = store.at(row + "/wk");
  p.row.wv = store.at(row + "/wv");
  p.row.out_w = store.at(row + "/out_w");
  p.row.out_b = store.at(row + "/out_b");
  p.row.pair_norm_scale = store.at(row + "/pair_norm_scale");
  p.row.pair_norm_offset = store.at(row + "/pair_norm_offset");
  p.row.pair_bias_w = store.at(row + "/pair_bias_w");
  p.row.relpos_table = store.at(row + "/relpos_table");
  const std::string col = prefix + "/col_attn";
  p.col = {store.at(col + "/norm_scale"), store.at(col + "/norm_offset"),
           store.at(col + "/wq"),         store.at(col + "/wk"),
           store.at(col + "/wv"),         store.at(col + "/out_w"),
           store.at(col + "/out_b")};
  const std::string st = prefix + "/seq_transition";
  p.seq_transition = {store.at(st + "/norm_scale"), store.at(st + "/norm_offset"),
                      store.at(st + "/w1"),         store.at(st + "/b1"),
                      store.at(st + "/w2"),         store.at(st + "/b2")};
  const std::string pt = prefix + "/pair_transition";
  p.pair_transition = {store.at(pt + "/norm_scale"), store.at(pt + "/norm_offset"),
                       store.at(pt + "/w1"),         store.at(pt + "/b1"),
                       store.at(pt + "/w2"),         store.at(pt + "/b2")};
  if (with_qc) {
    const std::string qc = prefix + "/query_cond";
    p.qc = {store.at(qc + "/gate_row_w"), store.at(qc + "/gate_query_w"),
            store.at(qc + "/gate_b"), store.at(qc + "/mix_w")};
    p.has_qc = true;
  }
  return p;
}

}  // namespace evogen
