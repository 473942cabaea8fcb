#include "evogen/selfcheck.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numbers>

#include "evogen/checkpoint.hpp"
#include "evogen/critic.hpp"
#include "evogen/errors.hpp"
#include "evogen/hyperformer.hpp"
#include "evogen/latent.hpp"
#include "evogen/model.hpp"
#include "evogen/protocols.hpp"
#include "evogen/training.hpp"
#include "evogen/trim.hpp"

namespace evogen {

FdReport finite_difference_check(
    const std::function<Tensor(std::span<const Tensor>)>& build,
    std::span<const Tensor> leaves, double step, double tol) {
  std::vector<Tensor> params;
  params.reserve(leaves.size());
  for (const Tensor& l : leaves) {
    std::span<const double> d = l.data();
    params.push_back(Tensor::param(l.shape(), std::vector<double>(d.begin(), d.end())));
  }
  Tensor loss = build(params);
  if (loss.numel() != 1)
    throw std::invalid_argument("gradient check builder must return a scalar");
  const std::vector<std::vector<double>> gs = grad(loss, params);

  FdReport rep;
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::span<const double> base = params[i].data();
    for (std::size_t j = 0; j < base.size(); ++j) {
      auto probe = [&](double delta) {
        std::vector<Tensor> alt(params.begin(), params.end());
        std::vector<double> vals(base.begin(), base.end());
        vals[j] += delta;
        alt[i] = Tensor::constant(params[i].shape(), std::move(vals));
        return build(alt).item();
      };
      const double fd = (probe(step) - probe(-step)) / (2.0 * step);
      const double an = gs[i][j];
      const double scale = std::max({1.0, std::fabs(fd), std::fabs(an)});
      const double rel = std::fabs(fd - an) / scale;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "input" + std::to_string(i) + "[" + std::to_string(j) + "]";
      }
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

bool all_pass(std::span<const CheckResult> results) {
  for (const CheckResult& r : results)
    if (!r.pass) return false;
  return true;
}

namespace {

using i64 = std::int64_t;

Tensor rand_const(SeedStream& s, Shape shape, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  s.fill_normal(v);
  for (double& x : v) x *= scale;
  return Tensor::constant(std::move(shape), std::move(v));
}

CheckResult run_check(const std::string& name,
                      const std::function<std::string()>& body) {
  CheckResult r;
  r.name = name;
  try {
    const std::string detail = body();
    r.pass = detail.empty();
    r.detail = r.pass ? "ok" : detail;
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  return r;
}

CheckResult fd_case(const std::string& name,
                    const std::function<Tensor(std::span<const Tensor>)>& build,
                    std::vector<Tensor> leaves, double tol = 1e-4,
                    double step = 1e-5) {
  return run_check(name, [&]() -> std::string {
    const FdReport rep = finite_difference_check(build, leaves, step, tol);
    char buf[160];
    std::snprintf(buf, sizeof buf, "max_rel_err=%.3g at %s (tol %.1g)",
                  rep.max_rel_err, rep.worst.c_str(), tol);
    return rep.pass ? "" : buf;
  });
}

std::string expect(bool ok, const std::string& what) { return ok ? "" : what; }

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_enc_blocks = 1;
  cfg.n_dec_blocks = 1;
  cfg.c_s = 8;
  cfg.c_p = 4;
  cfg.heads = 2;
  cfg.latent_dims = {2};
  cfg.latent_hidden = 4;
  cfg.num_buckets = 8;
  cfg.max_distance = 16;
  cfg.transition_factor = 1;
  cfg.opm_dim = 2;
  return cfg;
}

// Random-weight block parameters (the zero-init projections replaced).
BlockParams random_block_params(ParamStore& store, const HyperformerConfig& hf,
                                bool with_qc, std::uint64_t salt) {
  register_block(store, "b", hf, with_qc, SeedStream("blockcheck", salt));
  SeedStream s("blockfill", salt);
  std::vector<std::string> paths;
  for (const auto& [path, t] : store) paths.push_back(path);
  for (const std::string& path : paths) {
    const Shape shape = store.at(path).shape();
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    SeedStream ps = s.fork(path);
    ps.fill_normal(v);
    for (double& x : v) x *= 0.3;
    store.set(path, Tensor::param(Shape(shape), std::move(v)));
  }
  return block_params(store, "b", with_qc);
}

}  // namespace

std::vector<CheckResult> gradient_checks() {
  std::vector<CheckResult> out;
  SeedStream rng("gradcheck", 2024);

  {
    Tensor x = rand_const(rng, {6});
    out.push_back(fd_case(
        "elementwise chain (gelu/sigmoid/tanh/exp/log/clamp)",
        [](std::span<const Tensor> in) {
          Tensor x = in[0];
          Tensor a = mul(gelu(x), sigmoid(x));
          Tensor b = tanh(clamp(x, -2.25, 2.25));
          Tensor c = log(add(exp(x), 1.0));
          return sum_all(a + b + c);
        },
        {x}));
  }
  {
    Tensor a = rand_const(rng, {2, 3});
    Tensor b = rand_const(rng, {3});
    out.push_back(fd_case(
        "broadcast arithmetic (+,-,*,/,neg)",
        [](std::span<const Tensor> in) {
          Tensor a = in[0], b = in[1];
          Tensor d = divide(a, add(exp(b), 0.5));
          return sum_all(mul(d, sub(a, b)) + neg(a));
        },
        {a, b}));
  }
  {
    Tensor a = rand_const(rng, {2, 2, 3});
    Tensor w = rand_const(rng, {3, 4});
    out.push_back(fd_case(
        "matmul / transpose / slice / concat / reshape",
        [](std::span<const Tensor> in) {
          Tensor y = matmul(in[0], in[1]);                 // [2,2,4]
          Tensor yt = transpose(y, {1, 0, 2});
          Tensor z = matmul(yt, transpose(yt, {0, 2, 1})); // [2,2,2]
          Tensor s = slice(z, 2, 0, 1);
          Tensor c = concat({s, s}, 1);                    // [2,4,1]
          return sum_all(mul(reshape(c, {8}), 0.5));
        },
        {a, w}));
  }
  {
    Tensor x = rand_const(rng, {2, 5});
    Tensor scale = rand_const(rng, {5}, 0.5);
    Tensor offset = rand_const(rng, {5}, 0.5);
    SeedStream wr = rng.fork("wsm");
    Tensor w = rand_const(wr, {2, 5});
    out.push_back(fd_case(
        "softmax / log_softmax / layer_norm",
        [w](std::span<const Tensor> in) {
          Tensor sm = mul(softmax(in[0], -1), log_softmax(in[0], -1));
          Tensor ln = layer_norm(in[0], in[1], in[2]);
          return sum_all(mul(sm + ln, w));
        },
        {x, scale, offset}));
  }
  {
    Tensor x = rand_const(rng, {3, 4});
    SeedStream wr = rng.fork("wred");
    Tensor w = rand_const(wr, {4, 3});
    out.push_back(fd_case(
        "reductions / gather / broadcast_to",
        [w](std::span<const Tensor> in) {
          const std::vector<i64> idx = {2, 0, 1, 1};
          Tensor g = gather(in[0], idx, 0);                 // [4,4]
          Tensor m = mean(g, 1);                            // [4]
          Tensor b = broadcast_to(reshape(m, {4, 1}), {4, 3});
          return sum_all(mul(b, w)) + mean_all(sum(in[0], 0));
        },
        {x}));
  }
  {
    Tensor q = rand_const(rng, {2, 4, 6});
    SeedStream wr = rng.fork("wrope");
    Tensor w = rand_const(wr, {2, 4, 6});
    out.push_back(fd_case(
        "rotary transform",
        [w](std::span<const Tensor> in) {
          return sum_all(mul(rope(in[0], 100.0), w));
        },
        {q}));
  }
  {
    Tensor q = rand_const(rng, {2, 3, 4});
    Tensor k = rand_const(rng, {2, 3, 4});
    Tensor v = rand_const(rng, {2, 3, 4});
    Tensor bias = rand_const(rng, {2, 3, 3}, 0.5);
    SeedStream wr = rng.fork("watt");
    Tensor w = rand_const(wr, {2, 3, 4});
    out.push_back(fd_case(
        "biased rotary attention",
        [w](std::span<const Tensor> in) {
          Tensor att = hyper_attention(in[0], in[1], in[2], in[3], true, 50.0);
          return sum_all(mul(att, w));
        },
        {q, k, v, bias}));
  }
  {
    // Whole trunk block at random weights, gradients wrt every block weight.
    HyperformerConfig hf;
    hf.c_s = 4;
    hf.c_p = 2;
    hf.heads = 2;
    hf.num_buckets = 4;
    hf.max_distance = 8;
    hf.transition_factor = 1;
    hf.opm_dim = 2;
    ParamStore store;
    BlockParams bp = random_block_params(store, hf, true, 5);
    std::vector<Tensor> leaves;
    std::vector<std::string> paths;
    for (const auto& [path, t] : store) {
      paths.push_back(path);
      leaves.push_back(t);
    }
    SeedStream dr = rng.fork("blockdata");
    Tensor seq = rand_const(dr, {2, 3, 4});
    Tensor pair = rand_const(dr, {3, 3, 2});
    Tensor ws = rand_const(dr, {2, 3, 4});
    Tensor wp = rand_const(dr, {3, 3, 2});
    out.push_back(fd_case(
        "full block (all weights)",
        [=, &store](std::span<const Tensor> in) {
          for (std::size_t i = 0; i < in.size(); ++i) store.set(paths[i], in[i]);
          BlockParams p = block_params(store, "b", true);
          BlockResult br = hyperformer_block(seq, pair, p, hf, true);
          return sum_all(mul(br.seq, ws)) + sum_all(mul(br.pair, wp));
        },
        leaves, 2e-4));
  }
  {
    // Latent level: refinement, channel-causal draw, divergence, density.
    const int cs = 3, hidden = 4, d = 3, T = 2, L = 2;
    ParamStore store;
    register_latent_level(store, "lv", cs, hidden, d, 0, SeedStream("lvcheck", 3));
    std::vector<std::string> paths;
    std::vector<Tensor> leaves;
    for (const auto& [path, t] : store) {
      paths.push_back(path);
      leaves.push_back(t);
    }
    SeedStream dr = rng.fork("lvdata");
    Tensor ctx = rand_const(dr, {L, cs});
    Tensor tgt = rand_const(dr, {T, L, cs});
    Tensor noise = rand_const(dr, {T, L, d});
    out.push_back(fd_case(
        "latent level (base/refine/draw/divergence/density)",
        [=, &store](std::span<const Tensor> in) {
          for (std::size_t i = 0; i < in.size(); ++i) store.set(paths[i], in[i]);
          LatentLevelParams p = latent_level_params(store, "lv", false);
          LatentBase base = prior_from_context(ctx, Tensor(), T, p);
          LatentBase dev = deviation_from_target(tgt, p);
          AncestralDraw draw =
              ancestral_sample(add_base(base, dev), p.ar_mean_w, p.ar_logvar_w, noise);
          GaussianParams prior =
              conditional_params(base, p.ar_mean_w, p.ar_logvar_w, draw.sample);
          return kl_term(draw.params, prior) +
                 gaussian_log_density(prior, draw.sample) + sum_all(draw.sample);
        },
        leaves, 2e-4));
  }
  {
    // End-to-end reconstruction objective wrt a cross-section of weights.
    ModelConfig cfg = tiny_config();
    auto model = std::make_shared<Model>(cfg, 11);
    SyntheticFamilyConfig sc;
    sc.families = 1;
    sc.depth = 3;
    sc.length = 4;
    sc.seed = 9;
    const Msa msa = synth_corpus(sc)[0].msa;
    const ContextTargetSplit split = split_context_target(msa.depth(), 0.5, 1);
    const TokenGrid ctx = tokenize_rows(msa, split.context);
    const TokenGrid tgt = tokenize_rows(msa, split.targets);
    const std::vector<std::string> paths = {
        "latent/level0/ar_mean_w",  "latent/level0/ar_logvar_w",
        "latent/level0/inject_w",   "latent/level0/shift_head_w",
        "dec/slot",                 "embed/pair_table",
        "enc/block0/row_attn/pair_bias_w", "out/del_b",
    };
    std::vector<Tensor> leaves;
    for (const std::string& p : paths) leaves.push_back(model->params().at(p));
    out.push_back(fd_case(
        "reconstruction objective (weight cross-section)",
        [=](std::span<const Tensor> in) {
          for (std::size_t i = 0; i < in.size(); ++i)
            model->params().set(paths[i], in[i]);
          return model->elbo(ctx, tgt, 0.7, SeedStream("fdnoise", 4)).total;
        },
        leaves, 3e-4));
  }
  return out;
}

std::vector<CheckResult> property_checks() {
  std::vector<CheckResult> out;

  out.push_back(run_check("learning-rate schedule anchors", []() -> std::string {
    TrainConfig cfg;
    if (lr_at_step(0, cfg) != 0.0) return "lr(0) != 0";
    if (std::fabs(lr_at_step(cfg.warmup_steps, cfg) - cfg.lr_peak) > 1e-15)
      return "lr(warmup) != peak";
    const int half = cfg.warmup_steps + cfg.decay_steps / 2;
    const double mid = cfg.lr_final + (cfg.lr_peak - cfg.lr_final) * 0.5;
    if (std::fabs(lr_at_step(half, cfg) - mid) > 1e-12) return "cosine midpoint off";
    if (lr_at_step(cfg.warmup_steps + cfg.decay_steps, cfg) != cfg.lr_final)
      return "lr(end of decay) != final";
    if (lr_at_step(10 * cfg.decay_steps, cfg) != cfg.lr_final)
      return "lr(late) != final";
    double prev = lr_at_step(cfg.warmup_steps, cfg);
    for (int s = cfg.warmup_steps + 1; s <= cfg.warmup_steps + cfg.decay_steps;
         s += 997) {
      const double cur = lr_at_step(s, cfg);
      if (cur > prev + 1e-15) return "decay not monotone";
      prev = cur;
    }
    return "";
  }));

  out.push_back(run_check("divergence-weight ramp", []() -> std::string {
    TrainConfig cfg;
    cfg.total_steps = 1000;
    cfg.kl_warmup_fraction = 0.3;
    if (kl_beta(0, cfg) != 0.0) return "beta(0) != 0";
    if (std::fabs(kl_beta(150, cfg) - 0.5) > 1e-12) return "ramp midpoint off";
    if (kl_beta(300, cfg) != 1.0) return "beta(end of ramp) != 1";
    if (kl_beta(999, cfg) != 1.0) return "beta(late) != 1";
    return "";
  }));

  out.push_back(run_check("objective weight is sqrt(length)", []() -> std::string {
    if (loss_weight(0) != 0.0 || loss_weight(1) != 1.0) return "anchor off";
    if (loss_weight(4) != 2.0 || loss_weight(256) != 16.0) return "sqrt off";
    return "";
  }));

  out.push_back(run_check("relative-position buckets", []() -> std::string {
    const int nb = 32, md = 128, half = 16;
    for (int i : {0, 5, 100})
      if (relpos_bucket(i, i, nb, md) != 0) return "diagonal not bucket 0";
    if (relpos_bucket(5, 4, nb, md) != 1) return "offset +1 not bucket 1";
    if (relpos_bucket(4, 5, nb, md) != half + 1) return "offset -1 off";
    if (relpos_bucket(1000, 0, nb, md) != half - 1) return "far + not clamped";
    if (relpos_bucket(0, 1000, nb, md) != nb - 1) return "far - not clamped";
    int prev = 0;
    for (int r = 1; r < 400; ++r) {
      const int b = relpos_bucket(r, 0, nb, md);
      if (b < prev) return "not monotone in positive offset";
      if (b >= half) return "positive side leaked into upper half";
      prev = b;
    }
    for (int r = 1; r < 400; ++r) {
      const int b = relpos_bucket(0, r, nb, md);
      // |rel| >= 1 implies an in-side bucket >= 1, so index `half` never fires.
      if (b <= half || b >= nb) return "negative side out of range";
      if (b - half != relpos_bucket(r, 0, nb, md)) return "sides not mirrored";
    }
    return "";
  }));

  out.push_back(run_check("rotary transform properties", []() -> std::string {
    SeedStream s("ropecheck", 1);
    std::vector<double> q(8), k(8);
    s.fill_normal(q);
    s.fill_normal(k);
    const double base = 60.0;
    auto dot = [](std::span<const double> a, std::span<const double> b) {
      double d = 0;
      for (std::size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
      return d;
    };
    auto norm2 = [&](std::span<const double> a) { return dot(a, a); };
    const auto q7 = rope_apply(q, 7, base);
    if (std::fabs(norm2(q7) - norm2(q)) > 1e-9) return "norm not preserved";
    const double d1 = dot(rope_apply(q, 3, base), rope_apply(k, 9, base));
    const double d2 = dot(rope_apply(q, 3 + 5, base), rope_apply(k, 9 + 5, base));
    if (std::fabs(d1 - d2) > 1e-9) return "pair score not shift-invariant";
    // Tensor form agrees with the per-vector form at every position.
    Tensor x = Tensor::constant({2, 4}, {q[0], q[1], q[2], q[3], k[0], k[1], k[2], k[3]});
    Tensor r = rope(x, base);
    std::span<const double> rv = r.data();
    const auto row0 = rope_apply(std::span<const double>(q).subspan(0, 4), 0, base);
    const auto row1 = rope_apply(std::span<const double>(k).subspan(0, 4), 1, base);
    for (int j = 0; j < 4; ++j) {
      if (std::fabs(rv[static_cast<std::size_t>(j)] - row0[static_cast<std::size_t>(j)]) > 1e-12 ||
          std::fabs(rv[static_cast<std::size_t>(4 + j)] - row1[static_cast<std::size_t>(j)]) > 1e-12)
        return "tensor and vector forms disagree";
    }
    return "";
  }));

  out.push_back(run_check("straight-through emits the hard sample bit-for-bit",
                          []() -> std::string {
    SeedStream s("stcheck", 7);
    for (int trial = 0; trial < 100; ++trial) {
      SeedStream ts = s.fork("t", static_cast<std::uint64_t>(trial));
      Tensor logits = rand_const(ts, {3, 5, 22}, 2.0);
      SeedStream gs = ts.fork("g");
      GumbelSample g = gumbel_st(logits, 0.7, gs);
      if (!bitwise_equal(g.st.data(), g.hard.data())) return "forward differs from hard";
      std::span<const double> h = g.hard.data();
      for (i64 r = 0; r < 15; ++r) {
        double sumv = 0;
        for (int v = 0; v < 22; ++v) sumv += h[static_cast<std::size_t>(r * 22 + v)];
        if (sumv != 1.0) return "hard sample is not one-hot";
      }
    }
    // Gradient routes to the soft path.
    Tensor logits = Tensor::param({1, 1, 4}, {0.1, 0.2, 0.3, 0.4});
    SeedStream gs("stgrad", 1);
    GumbelSample g = gumbel_st(logits, 1.0, gs);
    Tensor loss = sum_all(mul(g.st, Tensor::constant({1, 1, 4}, {1, 2, 3, 4})));
    backward(loss);
    double gn = 0;
    for (double x : logits.grad()) gn += std::fabs(x);
    if (gn <= 0) return "no gradient reaches the logits";
    return "";
  }));

  out.push_back(run_check("relaxed sampling is stream-deterministic", []() -> std::string {
    SeedStream a("gumdet", 4), b("gumdet", 4), c("gumdet", 5);
    Tensor logits = rand_const(a, {2, 3, 22});
    SeedStream a2 = a.fork("g"), b2 = b.fork("g"), c2 = c.fork("g");
    Tensor l2 = rand_const(b, {2, 3, 22});
    Tensor l3 = rand_const(c, {2, 3, 22});
    GumbelSample g1 = gumbel_st(logits, 1.0, a2);
    GumbelSample g2 = gumbel_st(l2, 1.0, b2);
    GumbelSample g3 = gumbel_st(l3, 1.0, c2);
    if (!bitwise_equal(g1.soft.data(), g2.soft.data())) return "same stream differs";
    if (bitwise_equal(g1.soft.data(), g3.soft.data())) return "different stream agrees";
    return "";
  }));

  out.push_back(run_check("freshly initialized block is the identity", []() -> std::string {
    HyperformerConfig hf;
    hf.c_s = 8;
    hf.c_p = 4;
    hf.heads = 2;
    hf.num_buckets = 8;
    hf.max_distance = 16;
    hf.transition_factor = 2;
    hf.opm_dim = 2;
    ParamStore store;
    register_block(store, "b", hf, true, SeedStream("identcheck", 1));
    BlockParams bp = block_params(store, "b", true);
    SeedStream dr("identdata", 2);
    Tensor seq = rand_const(dr, {3, 5, 8});
    Tensor pair = rand_const(dr, {5, 5, 4});
    BlockResult br = hyperformer_block(seq, pair, bp, hf, true);
    if (!bitwise_equal(br.seq.data(), seq.data())) return "sequence stack changed";
    if (!bitwise_equal(br.pair.data(), pair.data())) return "pair stack changed";
    return "";
  }));

  out.push_back(run_check("block commutes with non-query row permutation",
                          []() -> std::string {
    HyperformerConfig hf;
    hf.c_s = 4;
    hf.c_p = 2;
    hf.heads = 2;
    hf.num_buckets = 4;
    hf.max_distance = 8;
    hf.transition_factor = 1;
    hf.opm_dim = 2;
    ParamStore store;
    BlockParams bp = random_block_params(store, hf, true, 17);
    SeedStream dr("permdata", 3);
    Tensor seq = rand_const(dr, {4, 3, 4});
    Tensor pair = rand_const(dr, {3, 3, 2});
    const std::vector<i64> perm = {0, 3, 1, 2};  // fixes the query row
    Tensor pseq = gather(seq, perm, 0);
    BlockResult plain = hyperformer_block(seq, pair, bp, hf, true);
    BlockResult permuted = hyperformer_block(pseq, pair, bp, hf, true);
    Tensor expected = gather(plain.seq, perm, 0);
    if (max_abs_diff(permuted.seq.data(), expected.data()) > 1e-9)
      return "sequence output not equivariant";
    if (max_abs_diff(permuted.pair.data(), plain.pair.data()) > 1e-9)
      return "pair output not invariant";
    return "";
  }));

  out.push_back(run_check("refined distribution = base + shift (additive)",
                          []() -> std::string {
    SeedStream s("addcheck", 5);
    LatentBase a{rand_const(s, {2, 3, 4}, 0.5), rand_const(s, {2, 3, 4}, 0.5)};
    LatentBase b{rand_const(s, {2, 3, 4}, 0.5), rand_const(s, {2, 3, 4}, 0.5)};
    Tensor m = rand_const(s, {4, 4}, 0.3);
    Tensor v = rand_const(s, {4, 4}, 0.3);
    Tensor z = rand_const(s, {2, 3, 4}, 0.5);
    GaussianParams ga = conditional_params(a, m, v, z);
    GaussianParams gab = conditional_params(add_base(a, b), m, v, z);
    Tensor dm = sub(sub(gab.mean, ga.mean), b.mean);
    Tensor dv = sub(sub(gab.logvar, ga.logvar), b.logvar_raw);
    double worst = 0;
    for (double x : dm.data()) worst = std::max(worst, std::fabs(x));
    for (double x : dv.data()) worst = std::max(worst, std::fabs(x));
    if (worst > 1e-12) return "shift is not additive";
    return "";
  }));

  out.push_back(run_check("channel-causal draw matches its own conditionals",
                          []() -> std::string {
    SeedStream s("archeck", 6);
    LatentBase base{rand_const(s, {3, 2, 5}, 0.5), rand_const(s, {3, 2, 5}, 0.5)};
    Tensor m = rand_const(s, {5, 5}, 0.4);
    Tensor v = rand_const(s, {5, 5}, 0.4);
    Tensor noise = rand_const(s, {3, 2, 5});
    AncestralDraw draw = ancestral_sample(base, m, v, noise);
    GaussianParams cond = conditional_params(base, m, v, draw.sample);
    if (max_abs_diff(cond.mean.data(), draw.params.mean.data()) > 1e-12)
      return "conditional means differ from the draw's";
    if (max_abs_diff(cond.logvar.data(), draw.params.logvar.data()) > 1e-12)
      return "conditional logvars differ from the draw's";
    // Channel t of the sample must not depend on noise at channels > t.
    Tensor noise2 = noise + mul(rand_const(s, {3, 2, 5}), Tensor::constant({5}, {0, 0, 0, 0, 1}));
    AncestralDraw draw2 = ancestral_sample(base, m, v, noise2);
    if (max_abs_diff(slice(draw.sample, -1, 0, 4).data(),
                     slice(draw2.sample, -1, 0, 4).data()) > 0)
      return "later-channel noise leaked into earlier channels";
    return "";
  }));

  out.push_back(run_check("divergence closed form and sign", []() -> std::string {
    // Unit-variance distributions one apart: 1/2 per channel.
    Tensor ones = Tensor::full({3, 2, 4}, 1.0);
    Tensor zeros = Tensor::zeros({3, 2, 4});
    GaussianParams post{ones, zeros};
    GaussianParams prior{zeros, zeros};
    const double got = kl_term(post, prior).item();
    if (std::fabs(got - 0.5 * 2 * 4) > 1e-12) return "closed form off";
    SeedStream s("klsign", 2);
    for (int t = 0; t < 20; ++t) {
      SeedStream ts = s.fork("t", static_cast<std::uint64_t>(t));
      GaussianParams a{rand_const(ts, {2, 2, 3}), clamp(rand_const(ts, {2, 2, 3}), -3, 3)};
      GaussianParams b{rand_const(ts, {2, 2, 3}), clamp(rand_const(ts, {2, 2, 3}), -3, 3)};
      if (kl_term(a, b).item() < -1e-12) return "negative divergence";
      GaussianParams c{a.mean.detach(), a.logvar.detach()};
      if (std::fabs(kl_term(a, c).item()) > 1e-12) return "self divergence nonzero";
    }
    return "";
  }));

  out.push_back(run_check("log-density of the standard normal at zero",
                          []() -> std::string {
    Tensor zeros = Tensor::zeros({2, 3, 4});
    GaussianParams g{zeros, zeros};
    const double want = -0.5 * std::log(2.0 * std::numbers::pi) * 3 * 4;
    if (std::fabs(gaussian_log_density(g, zeros).item() - want) > 1e-12)
      return "density anchor off";
    return "";
  }));

  out.push_back(run_check("alignment text round trip", []() -> std::string {
    SyntheticFamilyConfig sc;
    sc.families = 1;
    sc.depth = 5;
    sc.length = 12;
    sc.gap_rate = 0.2;
    sc.seed = 31;
    Msa msa = synth_corpus(sc)[0].msa;
    msa.rows[2].deletions[3] = 2;  // exercise insertion counts
    msa.rows[4].deletions[0] = 1;
    const Msa back = parse_a3m(write_a3m(msa));
    if (!(back == msa)) return "round trip changed the alignment";
    return "";
  }));

  out.push_back(run_check("depth reduction is idempotent and order-preserving",
                          []() -> std::string {
    SyntheticFamilyConfig sc;
    sc.families = 1;
    sc.depth = 40;
    sc.length = 30;
    sc.mutation_rate = 0.8;
    sc.gap_rate = 0.05;
    sc.seed = 12;
    const Msa msa = synth_corpus(sc)[0].msa;
    TrimConfig tc;
    tc.n_max = 10;
    tc.ident_min = 0.0;  // synthetic rows can drift far from the query
    const Msa once = trim(msa, tc);
    if (once.depth() > tc.n_max) return "cap not enforced";
    if (!(once.rows[0] == msa.rows[0])) return "query not kept first";
    const Msa twice = trim(once, tc);
    if (!(twice == once)) return "not idempotent";
    TrimConfig big;
    big.n_max = 500;
    if (!(trim(msa, big) == msa)) return "under-cap alignment not passed through";
    return "";
  }));

  out.push_back(run_check("context/target split contract", []() -> std::string {
    for (int depth = 2; depth <= 12; ++depth) {
      for (double r : {0.3, 0.5, 0.7, 0.9}) {
        const ContextTargetSplit s = split_context_target(depth, r, 77);
        const ContextTargetSplit s2 = split_context_target(depth, r, 77);
        if (s.context != s2.context || s.targets != s2.targets)
          return "split not deterministic";
        const int want = std::max(1, static_cast<int>(std::floor(r * depth + 1e-9)));
        if (static_cast<int>(s.context.size()) != want) return "context size off";
        if (s.context.empty() || s.context[0] != 0) return "query not in context";
        std::vector<char> seen(static_cast<std::size_t>(depth), 0);
        for (int i : s.context) seen[static_cast<std::size_t>(i)] ^= 1;
        for (int i : s.targets) seen[static_cast<std::size_t>(i)] ^= 1;
        for (char c : seen)
          if (!c) return "context/targets do not partition the rows";
      }
    }
    return "";
  }));

  out.push_back(run_check("weight file round trip is bit-exact", []() -> std::string {
    ModelConfig cfg = tiny_config();
    Model model(cfg, 123);
    const auto dir = std::filesystem::temp_directory_path();
    SeedStream ns("ckptname", 99);
    const std::string path =
        (dir / ("evogen_check_" + std::to_string(ns.next_u64()) + ".ckpt")).string();
    save_checkpoint(path, model.params(), cfg.digest());
    std::uint64_t stored = 0;
    ParamStore loaded = load_checkpoint(path, cfg.digest(), &stored);
    std::string fail;
    if (stored != cfg.digest()) fail = "stored digest differs";
    if (fail.empty() && loaded.size() != model.params().size()) fail = "entry count differs";
    if (fail.empty()) {
      auto it = loaded.begin();
      for (const auto& [p, t] : model.params()) {
        if (it->first != p || !bitwise_equal(it->second.data(), t.data())) {
          fail = "payload differs at " + p;
          break;
        }
        ++it;
      }
    }
    if (fail.empty()) {
      try {
        load_checkpoint(path, cfg.digest() + 1);
        fail = "digest mismatch not rejected";
      } catch (const DataError&) {
      }
    }
    std::filesystem::remove(path);
    return fail;
  }));

  out.push_back(run_check("feature file round trip", []() -> std::string {
    FeatureGrid g;
    g.rows = 2;
    g.length = 3;
    g.query = "ACD";
    g.probs.assign(static_cast<std::size_t>(2 * 3 * kVocabSize), 0.0f);
    for (std::size_t i = 0; i < g.probs.size(); ++i)
      g.probs[i] = static_cast<float>(i) / 7.0f;
    const auto dir = std::filesystem::temp_directory_path();
    SeedStream ns("featname", 98);
    const std::string path =
        (dir / ("evogen_check_" + std::to_string(ns.next_u64()) + ".feat")).string();
    export_features(g, path);
    const FeatureGrid back = import_features(path);
    std::filesystem::remove(path);
    if (!(back == g)) return "round trip changed the grid";
    return "";
  }));

  out.push_back(run_check("config serialization round trip", []() -> std::string {
    ModelConfig cfg = tiny_config();
    cfg.latent_dims = {3, 7, 9};
    cfg.n_dec_blocks = 3;
    const ModelConfig back = config_from_json(config_to_json(cfg));
    if (!(back == cfg)) return "round trip changed the config";
    if (cfg.digest() != back.digest()) return "digest unstable";
    ModelConfig other = cfg;
    other.c_s = cfg.c_s * 2;
    if (other.digest() == cfg.digest()) return "digest insensitive to fields";
    try {
      config_from_json("{\"c_z\": 4}");
      return "unknown key accepted";
    } catch (const DataError&) {
    }
    try {
      config_from_json("not json");
      return "malformed text accepted";
    } catch (const DataError&) {
    }
    return "";
  }));

  out.push_back(run_check("external scorer anchors and boundary gradient",
                          []() -> std::string {
    const std::vector<int> profile = {0, 1, 2, 3};
    auto critic = synthetic_critic(profile);
    const int rows = 2, len = 4;
    std::vector<double> uniform(static_cast<std::size_t>(rows * len * kVocabSize),
                                1.0 / kVocabSize);
    CriticReport u = critic->score_dense(uniform, rows, len);
    if (std::fabs(u.channels.at("fape_like") - std::log(22.0)) > 1e-5)
      return "uniform grid not at log(22)";
    std::vector<double> exact(static_cast<std::size_t>(rows * len * kVocabSize), 0.0);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < len; ++c)
        exact[(static_cast<std::size_t>(r) * len + c) * kVocabSize +
              static_cast<std::size_t>(profile[static_cast<std::size_t>(c)])] = 1.0;
    CriticReport e = critic->score_dense(exact, rows, len);
    if (e.channels.at("fape_like") > 1e-6) return "exact match not near zero";
    if (e.confidence < 99.99) return "confidence not saturating";
    // Boundary gradient agrees with finite differences of the folded score.
    SeedStream s("criticfd", 3);
    std::vector<double> probs(static_cast<std::size_t>(rows * len * kVocabSize));
    SeedStream su = s.fork("u");
    for (double& p : probs) p = 0.02 + su.uniform();
    ChannelWeights w;
    std::vector<double> grad(probs.size(), 0.0);
    critic->grad_dense(probs, rows, len, w, grad);
    const double h = 1e-6;
    for (std::size_t j : {std::size_t{0}, std::size_t{17}, std::size_t{55}, probs.size() - 1}) {
      std::vector<double> p2 = probs;
      p2[j] += h;
      const double up = critic->score_dense(p2, rows, len).weighted_total;
      p2[j] -= 2 * h;
      const double dn = critic->score_dense(p2, rows, len).weighted_total;
      const double fd = (up - dn) / (2 * h);
      if (std::fabs(fd - grad[j]) > 1e-5 * std::max(1.0, std::fabs(fd)))
        return "boundary gradient off at element " + std::to_string(j);
    }
    return "";
  }));

  out.push_back(run_check("external-gradient node applies the chain rule",
                          []() -> std::string {
    Tensor x = Tensor::param({3}, {0.1, -0.4, 0.7});
    Tensor inner = exp(x);
    std::vector<double> g = {2.0, -1.0, 0.5};
    Tensor node = custom_scalar(inner, 42.0, g);
    if (node.item() != 42.0) return "forward value not preserved";
    backward(node);
    std::span<const double> got = x.grad();
    std::span<const double> iv = inner.data();
    for (int i = 0; i < 3; ++i)
      if (std::fabs(got[static_cast<std::size_t>(i)] -
                    g[static_cast<std::size_t>(i)] * iv[static_cast<std::size_t>(i)]) > 1e-12)
        return "chain rule violated";
    return "";
  }));

  out.push_back(run_check("replaying drawn latents reproduces the logits",
                          []() -> std::string {
    ModelConfig cfg = tiny_config();
    cfg.latent_dims = {2};
    Model model(cfg, 5);
    SyntheticFamilyConfig sc;
    sc.families = 1;
    sc.depth = 4;
    sc.length = 6;
    sc.seed = 2;
    const Msa msa = synth_corpus(sc)[0].msa;
    const ContextTargetSplit split = split_context_target(msa.depth(), 0.5, 3);
    const TokenGrid ctx = tokenize_rows(msa, split.context);
    const TokenGrid tgt = tokenize_rows(msa, split.targets);
    const Model::ElboResult res = model.elbo(ctx, tgt, 1.0, SeedStream("noise", 8));
    LatentState provided;
    for (const auto& lv : res.latents.levels) {
      LatentLevelState cp;
      cp.sample = lv.sample.detach();
      provided.levels.push_back(cp);
    }
    const Model::EncodeResult enc = model.encode(ctx, tgt);
    const Model::DecodeResult dec = model.decode(ctx, provided, &enc.skips);
    if (!bitwise_equal(dec.logits.aa.data(), res.logits.aa.data()))
      return "residue logits differ";
    if (!bitwise_equal(dec.logits.del.data(), res.logits.del.data()))
      return "deletion logits differ";
    return "";
  }));

  out.push_back(run_check("generation is seed-deterministic", []() -> std::string {
    ModelConfig cfg = tiny_config();
    Model model(cfg, 6);
    SyntheticFamilyConfig sc;
    sc.families = 1;
    sc.depth = 3;
    sc.length = 5;
    sc.seed = 4;
    const TokenGrid ctx = tokenize(synth_corpus(sc)[0].msa);
    const auto a = model.generate(ctx, 3, SeedStream("gen", 1));
    const auto b = model.generate(ctx, 3, SeedStream("gen", 1));
    const auto c = model.generate(ctx, 3, SeedStream("gen", 2));
    if (!bitwise_equal(a.logits.aa.data(), b.logits.aa.data()))
      return "same seed disagrees";
    if (bitwise_equal(a.logits.aa.data(), c.logits.aa.data()))
      return "different seeds agree";
    return "";
  }));

  out.push_back(run_check("multi-draw evidence estimate dominates single draws",
                          []() -> std::string {
    ModelConfig cfg = tiny_config();
    Model model(cfg, 9);
    SyntheticFamilyConfig sc;
    sc.families = 1;
    sc.depth = 4;
    sc.length = 6;
    sc.seed = 5;
    const Msa msa = synth_corpus(sc)[0].msa;
    const ContextTargetSplit split = split_context_target(msa.depth(), 0.5, 9);
    const TokenGrid ctx = tokenize_rows(msa, split.context);
    const TokenGrid tgt = tokenize_rows(msa, split.targets);
    std::vector<double> lws;
    for (int k = 0; k < 3; ++k) {
      const auto res = model.elbo(ctx, tgt, 1.0, SeedStream("iw", static_cast<std::uint64_t>(k)));
      const double lw = log_importance_weight(res).item();
      if (!std::isfinite(lw)) return "non-finite importance weight";
      lws.push_back(lw);
    }
    double mx = lws[0], mean_lw = 0;
    for (double x : lws) mx = std::max(mx, x);
    double acc = 0;
    for (double x : lws) {
      acc += std::exp(x - mx);
      mean_lw += x / static_cast<double>(lws.size());
    }
    const double lme = mx + std::log(acc / static_cast<double>(lws.size()));
    if (lme < mean_lw - 1e-12) return "log-mean-exp fell below the mean";
    return "";
  }));

  out.push_back(run_check("trial manifest is valid JSON with full trial metadata",
                          []() -> std::string {
    std::vector<TrialRecord> recs;
    recs.push_back({"augment", 0.7, 16, 2, 0xdeadbeefcafef00dULL, 85.5, "context_rows=3"});
    recs.push_back({"probe", 0.5, 4, 0, 1, -1.0, ""});
    const std::string text = trial_manifest_json(recs);
    ModelConfig dummy;  // avoid unused warnings in some configurations
    (void)dummy;
    // Re-parse through the JSON layer used elsewhere: config_from_json only
    // parses objects, so do a structural check by hand here.
    if (text.find("\"protocol\": \"augment\"") == std::string::npos)
      return "protocol missing";
    if (text.find(std::to_string(0xdeadbeefcafef00dULL)) == std::string::npos)
      return "seed fingerprint missing";
    if (text.find("\"confidence\": 85.5") == std::string::npos)
      return "confidence missing";
    return "";
  }));

  out.push_back(run_check("deletion transform and bins are consistent",
                          []() -> std::string {
    if (deletion_transform(0) != 0.0) return "zero count not at zero";
    double prev = -1;
    for (int d = 0; d <= 50; ++d) {
      const double v = deletion_transform(d);
      if (v <= prev) return "transform not strictly increasing";
      if (v < 0 || v >= 1) return "transform out of [0,1)";
      prev = v;
    }
    for (int b = 0; b < kDeletionBins; ++b) {
      if (discretize_deletion(deletion_bin_center(b)) != b)
        return "bin center does not re-discretize to its bin";
      if (deletion_bin_count(b) < 0) return "negative reconstructed count";
    }
    if (discretize_deletion(deletion_transform(0)) != 0) return "count 0 not in bin 0";
    return "";
  }));

  out.push_back(run_check("rewrite protocol keeps context rows verbatim",
                          []() -> std::string {
    ModelConfig cfg = tiny_config();
    Model model(cfg, 21);
    SyntheticFamilyConfig sc;
    sc.families = 1;
    sc.depth = 5;
    sc.length = 6;
    sc.seed = 13;
    const Msa msa = synth_corpus(sc)[0].msa;
    CalibrationConfig cc;
    cc.r_ctx = {0.5, 0.8};
    cc.trials = 2;
    cc.seed = 3;
    const CalibrationResult res = calibrate(msa, model, cc);
    if (res.outputs.size() != 4) return "output count off";
    const FeatureGrid original = features_from_grid(tokenize(msa), msa.query().symbols);
    for (const ProtocolOutput& o : res.outputs) {
      if (o.msa.depth() != msa.depth()) return "row count changed";
      if (!(o.msa.rows[0] == msa.rows[0])) return "query row changed";
      if (o.grid.rows != msa.depth()) return "grid row count off";
      int rewritten = 0;
      for (int r = 0; r < o.msa.depth(); ++r) {
        const bool same_row = o.msa.rows[static_cast<std::size_t>(r)] ==
                              msa.rows[static_cast<std::size_t>(r)];
        if (!same_row) ++rewritten;
        double total = 0;
        bool one_hot = true;
        for (int c = 0; c < o.grid.length; ++c) {
          double cell = 0;
          for (int v = 0; v < kVocabSize; ++v) {
            const float p =
                o.grid.probs[(static_cast<std::size_t>(r) * o.grid.length + c) * kVocabSize +
                             static_cast<std::size_t>(v)];
            if (p != 0.0f && p != 1.0f) one_hot = false;
            cell += p;
          }
          if (std::fabs(cell - 1.0) > 1e-4) return "cell distribution not normalized";
          total += cell;
        }
        (void)total;
        if (same_row && r > 0) {
          // Context rows must carry their exact one-hot features.
          for (int c = 0; c < o.grid.length; ++c)
            for (int v = 0; v < kVocabSize; ++v) {
              const std::size_t at =
                  (static_cast<std::size_t>(r) * o.grid.length + c) * kVocabSize +
                  static_cast<std::size_t>(v);
              if (o.grid.probs[at] != original.probs[at])
                return "context features changed";
            }
        }
        (void)one_hot;
      }
      if (rewritten == 0) return "no rows were rewritten";
    }
    return "";
  }));

  out.push_back(run_check("deepening emits query-led grids of the requested size",
                          []() -> std::string {
    ModelConfig cfg = tiny_config();
    Model model(cfg, 22);
    SyntheticFamilyConfig sc;
    sc.families = 1;
    sc.depth = 4;
    sc.length = 5;
    sc.seed = 14;
    const Msa msa = synth_corpus(sc)[0].msa;
    AugmentationConfig ac;
    ac.n_aug = 6;
    ac.r_ctx = {0.5};
    ac.trials = 2;
    const auto outs = augment(msa, model, ac);
    if (outs.size() != 2) return "output count off";
    for (const ProtocolOutput& o : outs) {
      if (o.msa.depth() != ac.n_aug || o.grid.rows != ac.n_aug) return "depth off";
      if (!(o.msa.rows[0] == msa.rows[0])) return "query not first";
      if (o.grid.query != msa.query().symbols) return "grid query mismatch";
    }
    const auto zs = zero_shot(msa.query().symbols, model, {{3, 4}, 1, false, 7});
    if (zs.size() != 2) return "zero-shot output count off";
    if (zs[0].msa.depth() != 3 || zs[1].msa.depth() != 4) return "zero-shot sizes off";
    try {
      zero_shot("AC-D", model, {});
      return "gap in query accepted";
    } catch (const DataError&) {
    }
    try {
      zero_shot("acd", model, {});
      return "lowercase query accepted";
    } catch (const DataError&) {
    }
    return "";
  }));

  out.push_back(run_check("confidence ranking is stable and descending",
                          []() -> std::string {
    const std::vector<double> conf = {10.0, 80.0, 80.0, 5.0, 90.0};
    const std::vector<int> order = rank_by_confidence(conf);
    const std::vector<int> want = {4, 1, 2, 0, 3};
    if (order != want) return "unexpected order";
    return "";
  }));

  return out;
}

}  // namespace evogen
