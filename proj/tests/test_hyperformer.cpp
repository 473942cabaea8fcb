#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "evogen/hyperformer.hpp"
#include "evogen/params.hpp"
#include "evogen/random.hpp"
#include "evogen/tensor.hpp"

using namespace evogen;

namespace {

Tensor randt(SeedStream& s, Shape shape, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  s.fill_normal(v);
  for (double& x : v) x *= scale;
  return Tensor::constant(std::move(shape), std::move(v));
}

bool same_bits(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(),
                     a.data().size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Registers a block, then replaces every parameter with random values so the
// block is far from its identity initialization.
BlockParams noisy_block(ParamStore& store, const HyperformerConfig& cfg,
                        bool with_qc, std::uint64_t salt) {
  SeedStream root("noisy-block", salt);
  register_block(store, "blk", cfg, with_qc, root);
  SeedStream vals = root.fork("values");
  std::vector<std::string> paths;
  for (const auto& [path, value] : store) paths.push_back(path);
  for (const std::string& path : paths) {
    const Tensor& cur = store.at(path);
    SeedStream one = vals.fork(path);
    std::vector<double> v(static_cast<std::size_t>(cur.numel()));
    one.fill_normal(v);
    for (double& x : v) x *= 0.3;
    store.set(path, Tensor::param(cur.shape(), std::move(v)));
  }
  return block_params(store, "blk", with_qc);
}

}  // namespace

TEST_CASE("relative-position buckets satisfy the signed log-spaced contract") {
  const int nb = 32, md = 128;
  const int half = nb / 2, exact = half / 2;

  CHECK(relpos_bucket(0, 0, nb, md) == 0);
  CHECK(relpos_bucket(500, 500, nb, md) == 0);

  // Exact region: one bucket per offset, lower half for i > j.
  for (int r = 1; r < exact; ++r) {
    CHECK(relpos_bucket(r, 0, nb, md) == r);
    CHECK(relpos_bucket(0, r, nb, md) == half + r);
  }

  // Monotone nondecreasing in |offset| on each side; side mirror exact.
  int prev = 0;
  for (int r = 1; r < 3 * md; ++r) {
    const int b = relpos_bucket(r, 0, nb, md);
    CHECK(b >= prev);
    CHECK(b >= 1);
    CHECK(b < half);
    CHECK(relpos_bucket(0, r, nb, md) == b + half);
    prev = b;
  }

  // At or beyond the distance ceiling everything lands in the edge bucket.
  CHECK(relpos_bucket(md, 0, nb, md) == half - 1);
  CHECK(relpos_bucket(md + 1000, 0, nb, md) == half - 1);
  CHECK(relpos_bucket(0, md, nb, md) == nb - 1);

  // Every in-side bucket 1..half-1 is reachable below the ceiling.
  std::set<int> seen;
  for (int r = 1; r <= md; ++r) seen.insert(relpos_bucket(r, 0, nb, md));
  for (int b = 1; b < half; ++b) CHECK(seen.count(b) == 1);

  CHECK_THROWS(relpos_bucket(0, 0, 7, md));   // odd bucket count
  CHECK_THROWS(relpos_bucket(0, 0, 2, md));   // too few buckets
  CHECK_THROWS(relpos_bucket(0, 0, nb, 4));   // ceiling inside exact region
}

TEST_CASE("rotary map: norms, composition, offset invariance, tensor parity") {
  SeedStream s("rope-vec", 11);
  const double base = 10000.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(8);
    s.fill_normal(v);
    const int pos = static_cast<int>(s.uniform_int(200));

    // Rotations preserve each channel pair's norm.
    const auto r = rope_apply(v, pos, base);
    for (int t = 0; t < 4; ++t) {
      const double n0 = v[2 * t] * v[2 * t] + v[2 * t + 1] * v[2 * t + 1];
      const double n1 = r[2 * t] * r[2 * t] + r[2 * t + 1] * r[2 * t + 1];
      CHECK(std::abs(n0 - n1) < 1e-12);
    }

    // Rotating by p then q equals rotating by p + q.
    const int p2 = static_cast<int>(s.uniform_int(50));
    const auto two_step = rope_apply(rope_apply(v, pos, base), p2, base);
    const auto one_step = rope_apply(v, pos + p2, base);
    for (int k = 0; k < 8; ++k) CHECK(std::abs(two_step[k] - one_step[k]) < 1e-9);

    // q.k after rotation depends only on the position difference.
    std::vector<double> q(8), kvec(8);
    s.fill_normal(q);
    s.fill_normal(kvec);
    const int i = static_cast<int>(s.uniform_int(100));
    const int j = static_cast<int>(s.uniform_int(100));
    const int shift = static_cast<int>(s.uniform_int(40));
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
      return acc;
    };
    const double d0 = dot(rope_apply(q, i, base), rope_apply(kvec, j, base));
    const double d1 = dot(rope_apply(q, i + shift, base),
                          rope_apply(kvec, j + shift, base));
    CHECK(std::abs(d0 - d1) < 1e-6);
  }

  // The tensor op applies the same per-row map, position = row index.
  SeedStream ts("rope-tensor", 3);
  Tensor x = randt(ts, {2, 5, 6});
  Tensor rx = rope(x, 37.0);
  for (int b = 0; b < 2; ++b)
    for (int row = 0; row < 5; ++row) {
      std::vector<double> rowv(6);
      for (int c = 0; c < 6; ++c)
        rowv[static_cast<std::size_t>(c)] = x.data()[(b * 5 + row) * 6 + c];
      const auto want = rope_apply(rowv, row, 37.0);
      for (int c = 0; c < 6; ++c)
        CHECK(std::abs(rx.data()[(b * 5 + row) * 6 + c] - want[static_cast<std::size_t>(c)]) <
              1e-14);
    }

  CHECK_THROWS(rope_apply(std::vector<double>{1.0, 2.0, 3.0}, 1, base));
}

TEST_CASE("attention matches a from-scratch reference") {
  SeedStream s("attn-ref", 21);
  const int N = 2, L = 5, D = 4;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor q = randt(s, {N, L, D});
    Tensor k = randt(s, {N, L, D});
    Tensor v = randt(s, {N, L, D});
    Tensor bias = randt(s, {N, L, L}, 0.5);
    const bool with_rope = trial % 2 == 1;

    Tensor got = hyper_attention(q, k, v, bias, with_rope, 100.0);

    // Reference: plain loops over rows/positions with explicit softmax.
    std::vector<double> want(static_cast<std::size_t>(N * L * D), 0.0);
    for (int n = 0; n < N; ++n) {
      auto vec_at = [&](const Tensor& t, int i) {
        std::vector<double> out(D);
        for (int c = 0; c < D; ++c) out[static_cast<std::size_t>(c)] = t.data()[(n * L + i) * D + c];
        return out;
      };
      for (int i = 0; i < L; ++i) {
        std::vector<double> qi = vec_at(q, i);
        if (with_rope) qi = rope_apply(qi, i, 100.0);
        std::vector<double> logits(L);
        for (int j = 0; j < L; ++j) {
          std::vector<double> kj = vec_at(k, j);
          if (with_rope) kj = rope_apply(kj, j, 100.0);
          double dot = 0.0;
          for (int c = 0; c < D; ++c) dot += qi[static_cast<std::size_t>(c)] * kj[static_cast<std::size_t>(c)];
          logits[static_cast<std::size_t>(j)] =
              dot / std::sqrt(static_cast<double>(D)) + bias.data()[(n * L + i) * L + j];
        }
        double mx = logits[0];
        for (double lg : logits) mx = std::max(mx, lg);
        double z = 0.0;
        for (double& lg : logits) {
          lg = std::exp(lg - mx);
          z += lg;
        }
        for (int j = 0; j < L; ++j)
          for (int c = 0; c < D; ++c)
            want[static_cast<std::size_t>((n * L + i) * D + c)] +=
                logits[static_cast<std::size_t>(j)] / z * v.data()[(n * L + j) * D + c];
      }
    }
    for (std::size_t idx = 0; idx < want.size(); ++idx)
      CHECK(std::abs(got.data()[idx] - want[idx]) < 1e-10);
  }

  // Undefined bias means unbiased.
  Tensor q = randt(s, {1, 3, 4});
  Tensor k = randt(s, {1, 3, 4});
  Tensor v = randt(s, {1, 3, 4});
  Tensor unbiased = hyper_attention(q, k, v, Tensor(), false, 1.0);
  Tensor zero_biased =
      hyper_attention(q, k, v, Tensor::zeros({1, 3, 3}), false, 1.0);
  CHECK(max_abs_diff(unbiased, zero_biased) < 1e-15);
}

TEST_CASE("outer product mean matches a triple-loop reference") {
  SeedStream s("opm-ref", 31);
  const int N = 3, L = 4, C = 6, DA = 2, CP = 3;
  OpmParams p;
  p.norm_scale = randt(s, {C}, 0.3) + 1.0;
  p.norm_offset = randt(s, {C}, 0.3);
  p.proj_a = randt(s, {C, DA});
  p.proj_b = randt(s, {C, DA});
  p.out_w = randt(s, {DA * DA, CP});
  p.out_b = randt(s, {CP});
  Tensor seq = randt(s, {N, L, C});

  Tensor got = outer_product_mean(seq, p);
  REQUIRE(got.shape() == Shape{L, L, CP});

  // Loops from the normed activations onward.
  Tensor x = layer_norm(seq, p.norm_scale, p.norm_offset);
  auto proj = [&](const Tensor& w, int n, int l, int u) {
    double acc = 0.0;
    for (int c = 0; c < C; ++c)
      acc += x.data()[(n * L + l) * C + c] * w.data()[c * DA + u];
    return acc;
  };
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j)
      for (int o = 0; o < CP; ++o) {
        double acc = p.out_b.data()[o];
        for (int u = 0; u < DA; ++u)
          for (int w = 0; w < DA; ++w) {
            double m = 0.0;
            for (int n = 0; n < N; ++n) m += proj(p.proj_a, n, i, u) * proj(p.proj_b, n, j, w);
            acc += m / N * p.out_w.data()[(u * DA + w) * CP + o];
          }
        CHECK(std::abs(got.data()[(i * L + j) * CP + o] - acc) < 1e-10);
      }
}

TEST_CASE("query conditioning is exact identity at zero mix weights") {
  SeedStream s("qc", 41);
  const int N = 3, L = 4, C = 4;
  QueryConditioningParams p;
  p.gate_row_w = randt(s, {C, C});
  p.gate_query_w = randt(s, {C, C});
  p.gate_b = randt(s, {C});
  p.mix_w = Tensor::zeros({C, C});
  Tensor seq = randt(s, {N, L, C});
  Tensor query = randt(s, {L, C});
  CHECK(same_bits(query_conditioning(seq, query, p), seq));

  // With mix active the update is gate-projected query content, per row.
  p.mix_w = randt(s, {C, C});
  Tensor got = query_conditioning(seq, query, p);
  for (int n = 0; n < N; ++n)
    for (int l = 0; l < L; ++l)
      for (int c = 0; c < C; ++c) {
        std::vector<double> gate(C);
        for (int g = 0; g < C; ++g) {
          double acc = p.gate_b.data()[g];
          for (int u = 0; u < C; ++u) {
            acc += seq.data()[(n * L + l) * C + u] * p.gate_row_w.data()[u * C + g];
            acc += query.data()[l * C + u] * p.gate_query_w.data()[u * C + g];
          }
          gate[static_cast<std::size_t>(g)] = 1.0 / (1.0 + std::exp(-acc));
        }
        double mixed = 0.0;
        for (int u = 0; u < C; ++u) mixed += gate[static_cast<std::size_t>(u)] * p.mix_w.data()[u * C + c];
        const double want = seq.data()[(n * L + l) * C + c] + mixed * query.data()[l * C + c];
        CHECK(std::abs(got.data()[(n * L + l) * C + c] - want) < 1e-12);
      }
}

TEST_CASE("a freshly initialized block is a bitwise identity") {
  HyperformerConfig cfg;
  cfg.c_s = 8;
  cfg.c_p = 4;
  cfg.heads = 2;
  cfg.num_buckets = 8;
  cfg.max_distance = 16;
  cfg.transition_factor = 2;
  cfg.opm_dim = 2;
  for (const bool qc : {false, true}) {
    ParamStore store;
    SeedStream root("fresh", qc ? 1u : 2u);
    register_block(store, "blk", cfg, qc, root);
    BlockParams p = block_params(store, "blk", qc);
    SeedStream ds("fresh-data", 5);
    Tensor seq = randt(ds, {3, 4, cfg.c_s});
    Tensor pair = randt(ds, {4, 4, cfg.c_p});
    BlockResult out = hyperformer_block(seq, pair, p, cfg, qc);
    CHECK(same_bits(out.seq, seq));
    CHECK(same_bits(out.pair, pair));
  }
}

TEST_CASE("block treats non-query rows as an unordered set") {
  HyperformerConfig cfg;
  cfg.c_s = 8;
  cfg.c_p = 4;
  cfg.heads = 2;
  cfg.num_buckets = 8;
  cfg.max_distance = 16;
  cfg.transition_factor = 2;
  cfg.opm_dim = 2;
  const int N = 4, L = 5;
  for (const bool qc : {false, true}) {
    ParamStore store;
    BlockParams p = noisy_block(store, cfg, qc, qc ? 7u : 8u);
    SeedStream ds("equiv-data", 9);
    Tensor seq = randt(ds, {N, L, cfg.c_s});
    Tensor pair = randt(ds, {L, L, cfg.c_p});

    const std::vector<std::int64_t> perm = {0, 2, 3, 1};  // query row stays first
    Tensor seq_p = gather(seq, perm, 0);
    BlockResult base = hyperformer_block(seq, pair, p, cfg, qc);
    BlockResult permuted = hyperformer_block(seq_p, pair, p, cfg, qc);

    CHECK(max_abs_diff(gather(base.seq, perm, 0), permuted.seq) < 1e-9);
    CHECK(max_abs_diff(base.pair, permuted.pair) < 1e-9);
  }
}

TEST_CASE("block rejects inconsistent configuration") {
  HyperformerConfig cfg;
  cfg.c_s = 6;
  cfg.heads = 4;  // 6 % 4 != 0
  cfg.c_p = 4;
  ParamStore store;
  SeedStream root("bad", 1);
  register_block(store, "blk", HyperformerConfig{}, false, root);
  BlockParams p = block_params(store, "blk", false);
  Tensor seq = Tensor::zeros({2, 3, 6});
  Tensor pair = Tensor::zeros({3, 3, 4});
  CHECK_THROWS(hyperformer_block(seq, pair, p, cfg, false));

  // Asking for query conditioning without its parameters must fail loudly.
  HyperformerConfig ok;
  Tensor seq2 = Tensor::zeros({2, 3, ok.c_s});
  Tensor pair2 = Tensor::zeros({3, 3, ok.c_p});
  CHECK(!p.has_qc);
  CHECK_THROWS(hyperformer_block(seq2, pair2, p, ok, true));
}

TEST_CASE("registration writes the documented shapes and zero output maps") {
  HyperformerConfig cfg;  // defaults: c_s 32, c_p 16, heads 2, nb 32, tf 4, opm 8
  ParamStore store;
  SeedStream root("shapes", 3);
  register_block(store, "b0", cfg, true, root);

  auto shape_of = [&](const std::string& p) { return store.at("b0/" + p).shape(); };
  CHECK(shape_of("opm/proj_a") == Shape{32, 8});
  CHECK(shape_of("opm/out_w") == Shape{64, 16});
  CHECK(shape_of("row_attn/wq") == Shape{32, 32});
  CHECK(shape_of("row_attn/pair_bias_w") == Shape{16, 2});
  CHECK(shape_of("row_attn/relpos_table") == Shape{32, 2});
  CHECK(shape_of("col_attn/out_b") == Shape{32});
  CHECK(shape_of("seq_transition/w1") == Shape{32, 128});
  CHECK(shape_of("pair_transition/w1") == Shape{16, 64});
  CHECK(shape_of("query_cond/mix_w") == Shape{32, 32});

  // Output projections start at zero (identity block); inputs do not.
  auto is_zero = [&](const std::string& p) {
    for (double v : store.at("b0/" + p).data())
      if (v != 0.0) return false;
    return true;
  };
  CHECK(is_zero("opm/out_w"));
  CHECK(is_zero("row_attn/out_w"));
  CHECK(is_zero("col_attn/out_w"));
  CHECK(is_zero("seq_transition/w2"));
  CHECK(is_zero("pair_transition/w2"));
  CHECK(is_zero("query_cond/mix_w"));
  CHECK(!is_zero("row_attn/wq"));
  CHECK(!is_zero("opm/proj_a"));

  // Resolution hands back the registered tensors unchanged.
  BlockParams p = block_params(store, "b0", true);
  CHECK(same_bits(p.row.wq, store.at("b0/row_attn/wq")));
  CHECK(same_bits(p.opm.proj_b, store.at("b0/opm/proj_b")));
  CHECK(p.has_qc);
}
