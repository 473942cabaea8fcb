// Acceptance gate: one pass/fail line per shipped guarantee.  Each check is
// self-contained, seed-pinned, and prints the measured numbers it judged.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "evogen/checkpoint.hpp"
#include "evogen/critic.hpp"
#include "evogen/featurize.hpp"
#include "evogen/hyperformer.hpp"
#include "evogen/model.hpp"
#include "evogen/msa.hpp"
#include "evogen/optim.hpp"
#include "evogen/params.hpp"
#include "evogen/protocols.hpp"
#include "evogen/random.hpp"
#include "evogen/selfcheck.hpp"
#include "evogen/tensor.hpp"
#include "evogen/training.hpp"
#include "evogen/trim.hpp"

#include "support.hpp"

using namespace evogen;

#define NEED(cond, what)                                      \
  do {                                                        \
    if (!(cond)) {                                            \
      ok = false;                                             \
      if (!note.empty()) note += "; ";                        \
      note += what;                                           \
    }                                                         \
  } while (0)

namespace {

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

ModelConfig small_config(int blocks, std::vector<int> latent) {
  ModelConfig c;
  c.n_enc_blocks = blocks;
  c.n_dec_blocks = blocks;
  c.c_s = 8;
  c.c_p = 4;
  c.heads = 2;
  c.latent_dims = std::move(latent);
  c.latent_hidden = 4;
  c.num_buckets = 8;
  c.max_distance = 16;
  c.transition_factor = 1;
  c.opm_dim = 2;
  return c;
}

bool bits_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients match central finite differences: every primitive via
//    the built-in suite, then a full model objective probed parameter by
//    parameter (strided element sampling keeps the runtime bounded).

bool crit_gradients(std::string& note) {
  bool ok = true;
  const auto t0 = std::chrono::steady_clock::now();

  int prim = 0;
  for (const CheckResult& r : gradient_checks()) {
    ++prim;
    NEED(r.pass, "primitive check failed: " + r.name + " (" + r.detail + ")");
  }

  Model model(small_config(2, {2}), 4242);
  SeedStream ms("acc1-msa");
  const Msa msa = testsupport::random_msa(ms, 3, 6);
  const TokenGrid ctx = tokenize_rows(msa, {0});
  const TokenGrid tgt = tokenize_rows(msa, {1, 2});
  const auto loss_value = [&] {
    return model.elbo(ctx, tgt, 1.0, SeedStream("acc1-noise")).total.item();
  };

  std::vector<std::string> paths;
  std::vector<Tensor> leaves;
  for (const auto& [path, value] : model.params()) {
    paths.push_back(path);
    leaves.push_back(value);
  }
  const Model::ElboResult res = model.elbo(ctx, tgt, 1.0, SeedStream("acc1-noise"));
  const std::vector<std::vector<double>> gs = grad(res.total, leaves);

  const double h = 1e-5;
  double max_rel = 0.0;
  std::string worst;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const std::span<const double> base = leaves[i].data();
    const std::vector<double> orig(base.begin(), base.end());
    const std::int64_t n = leaves[i].numel();
    const std::int64_t stride = std::max<std::int64_t>(1, (n + 23) / 24);
    for (std::int64_t j = 0; j < n; j += stride) {
      std::vector<double> vals = orig;
      vals[j] = orig[j] + h;
      model.params().set(paths[i], Tensor::constant(leaves[i].shape(), vals));
      const double lp = loss_value();
      vals[j] = orig[j] - h;
      model.params().set(paths[i], Tensor::constant(leaves[i].shape(), vals));
      const double lm = loss_value();
      const double fd = (lp - lm) / (2.0 * h);
      const double an = gs[i][static_cast<std::size_t>(j)];
      const double rel = std::fabs(fd - an) / std::max({1.0, std::fabs(fd), std::fabs(an)});
      if (rel > max_rel) {
        max_rel = rel;
        worst = paths[i] + "[" + std::to_string(j) + "]";
      }
    }
    model.params().set(paths[i], Tensor::param(leaves[i].shape(), orig));
  }
  NEED(max_rel < 1e-4, "model finite-difference mismatch at " + worst + ": " +
                           fmt("rel=%.3g", max_rel));

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  NEED(secs < 120.0, fmt("gradient suite too slow: %.1fs", secs));
  if (ok)
    note = std::to_string(prim) + " primitive checks; model max rel err " +
           fmt("%.2g", max_rel);
  return ok;
}

// ---------------------------------------------------------------------------
// 2. The training objective is a true lower bound: its estimate never exceeds
//    the importance-sampled evidence estimate beyond 3 SE, before and after
//    training, and training tightens the gap.

struct BoundEstimate {
  double elbo = 0.0, elbo_se = 0.0;
  double log_ml = 0.0, log_ml_se = 0.0;
  double gap() const { return log_ml - elbo; }
};

BoundEstimate estimate_bound(const Model& model, const TokenGrid& ctx,
                             const TokenGrid& tgt, const std::string& tag, int draws) {
  std::vector<double> elbos(static_cast<std::size_t>(draws));
  std::vector<double> lws(static_cast<std::size_t>(draws));
  for (int k = 0; k < draws; ++k) {
    const Model::ElboResult r =
        model.elbo(ctx, tgt, 1.0, SeedStream(tag, static_cast<std::uint64_t>(k)));
    elbos[static_cast<std::size_t>(k)] = -r.total.item();
    lws[static_cast<std::size_t>(k)] = log_importance_weight(r).item();
  }
  BoundEstimate est;
  double sum = 0.0;
  for (double e : elbos) sum += e;
  est.elbo = sum / draws;
  double sq = 0.0;
  for (double e : elbos) sq += (e - est.elbo) * (e - est.elbo);
  est.elbo_se = std::sqrt(sq / (draws - 1) / draws);

  const double a = *std::max_element(lws.begin(), lws.end());
  double s1 = 0.0, s2 = 0.0;
  for (double l : lws) {
    const double e = std::exp(l - a);
    s1 += e;
    s2 += e * e;
  }
  const double m = s1 / draws;
  const double var = (s2 - draws * m * m) / (draws - 1);
  est.log_ml = a + std::log(m);
  est.log_ml_se = std::sqrt(var / draws) / m;
  return est;
}

bool crit_bound(std::string& note) {
  bool ok = true;
  const int kDraws = 100000;

  Model model(small_config(1, {2}), 777);
  Msa msa;
  msa.rows.push_back({"q", "ACDE", {0, 0, 0, 0}});
  msa.rows.push_back({"h", "AGD-", {0, 1, 0, 0}});
  const TokenGrid ctx = tokenize_rows(msa, {0});
  const TokenGrid tgt = tokenize_rows(msa, {1});

  const BoundEstimate before = estimate_bound(model, ctx, tgt, "acc2-pre", kDraws);
  const double se_b =
      std::sqrt(before.elbo_se * before.elbo_se + before.log_ml_se * before.log_ml_se);
  NEED(before.elbo <= before.log_ml + 3.0 * se_b,
       fmt("bound violated before training: elbo=%.4f evidence=%.4f se=%.4f",
           before.elbo, before.log_ml, se_b));

  TrainConfig tc;
  tc.batch_size = 1;
  tc.crop_length = 16;
  tc.crop_depth = 8;
  tc.lr_peak = 3e-3;
  tc.lr_final = 1e-4;
  tc.warmup_steps = 100;
  tc.decay_steps = 900;
  tc.total_steps = 1000;
  tc.kl_warmup_fraction = 0.3;
  AdamState opt;
  const SeedStream run("acc2-train");
  const std::vector<Msa> data = {msa};
  for (int step = 0; step < 1000; ++step) pretrain_step(model, data, opt, step, tc, run);

  const BoundEstimate after = estimate_bound(model, ctx, tgt, "acc2-post", kDraws);
  const double se_a =
      std::sqrt(after.elbo_se * after.elbo_se + after.log_ml_se * after.log_ml_se);
  NEED(after.elbo <= after.log_ml + 3.0 * se_a,
       fmt("bound violated after training: elbo=%.4f evidence=%.4f se=%.4f",
           after.elbo, after.log_ml, se_a));
  NEED(after.gap() < before.gap(),
       fmt("gap did not shrink: before=%.4f after=%.4f", before.gap(), after.gap()));
  if (ok)
    note = fmt("gap %.3f -> %.3f nats", before.gap(), after.gap()) +
           fmt(" (evidence %.3f -> %.3f)", before.log_ml, after.log_ml);
  return ok;
}

// ---------------------------------------------------------------------------
// 3. Straight-through sampling: the forward value IS the hard one-hot, and the
//    backward adjoint IS the soft path's adjoint, element-exactly.

bool crit_straight_through(std::string& note) {
  bool ok = true;
  SeedStream s("acc3");
  for (int i = 0; i < 100 && ok; ++i) {
    const std::int64_t rows = 1 + static_cast<std::int64_t>(s.uniform_int(6));
    const std::int64_t cols = 2 + static_cast<std::int64_t>(s.uniform_int(9));
    std::vector<double> vals(static_cast<std::size_t>(rows * cols));
    for (double& v : vals) v = 2.0 * s.normal();
    std::vector<double> wv(vals.size());
    for (double& v : wv) v = s.normal();
    const Tensor w = Tensor::constant(Shape{rows, cols}, wv);

    Tensor l1 = Tensor::param(Shape{rows, cols}, vals);
    Tensor l2 = Tensor::param(Shape{rows, cols}, vals);
    SeedStream g1("acc3-g", static_cast<std::uint64_t>(i));
    SeedStream g2("acc3-g", static_cast<std::uint64_t>(i));
    const GumbelSample a = gumbel_st(l1, 0.7, g1);
    const GumbelSample b = gumbel_st(l2, 0.7, g2);

    NEED(bits_equal(a.st.data(), a.hard.data()), "forward is not the hard sample");
    for (std::int64_t r = 0; r < rows && ok; ++r) {
      int ones = 0;
      for (std::int64_t c = 0; c < cols; ++c) {
        const double v = a.hard.data()[static_cast<std::size_t>(r * cols + c)];
        if (v == 1.0) ++ones;
        else NEED(v == 0.0, "hard sample is not one-hot");
      }
      NEED(ones == 1, "hard sample row does not have exactly one 1");
    }

    const std::vector<Tensor> leaves1 = {l1};
    const std::vector<Tensor> leaves2 = {l2};
    const std::vector<double> ga = grad(sum_all(mul(a.st, w)), leaves1)[0];
    const std::vector<double> gb = grad(sum_all(mul(b.soft, w)), leaves2)[0];
    NEED(ga == gb, "backward adjoint differs from the soft path");
  }
  if (ok) note = "100 random logit tensors, forward and backward exact";
  return ok;
}

// ---------------------------------------------------------------------------
// 4. Rotary phases make attention scores depend only on relative offsets, and
//    with rotation off the kernel is plain biased attention.

bool crit_rotary(std::string& note) {
  bool ok = true;
  SeedStream s("acc4");
  double max_res = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int d = 2 * (1 + static_cast<int>(s.uniform_int(8)));
    const int pi = static_cast<int>(s.uniform_int(64));
    const int pj = static_cast<int>(s.uniform_int(64));
    const int shift = static_cast<int>(s.uniform_int(32));
    std::vector<double> q(static_cast<std::size_t>(d)), k(static_cast<std::size_t>(d));
    for (double& v : q) v = s.normal();
    for (double& v : k) v = s.normal();
    const auto dot = [d](const std::vector<double>& a, const std::vector<double>& b) {
      double r = 0.0;
      for (int t = 0; t < d; ++t)
        r += a[static_cast<std::size_t>(t)] * b[static_cast<std::size_t>(t)];
      return r;
    };
    const double base = dot(rope_apply(q, pi, 1e4), rope_apply(k, pj, 1e4));
    const double moved =
        dot(rope_apply(q, pi + shift, 1e4), rope_apply(k, pj + shift, 1e4));
    max_res = std::max(max_res, std::fabs(base - moved));
  }
  NEED(max_res < 1e-6, fmt("shift residual %.3g exceeds 1e-6", max_res));

  double max_attn = 0.0;
  for (int t = 0; t < 5; ++t) {
    const std::int64_t B = 2, L = 3 + static_cast<std::int64_t>(s.uniform_int(4));
    const std::int64_t d = 2 * (1 + static_cast<std::int64_t>(s.uniform_int(4)));
    const auto rand_t = [&](Shape shape) {
      std::int64_t n = 1;
      for (std::int64_t e : shape) n *= e;
      std::vector<double> v(static_cast<std::size_t>(n));
      for (double& x : v) x = s.normal();
      return Tensor::constant(shape, v);
    };
    const Tensor q = rand_t({B, L, d}), k = rand_t({B, L, d}), v = rand_t({B, L, d});
    const Tensor bias = rand_t({B, L, L});
    const Tensor out = hyper_attention(q, k, v, bias, false, 1e4);

    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < L; ++i) {
        std::vector<double> logits(static_cast<std::size_t>(L));
        for (std::int64_t j = 0; j < L; ++j) {
          double dotqk = 0.0;
          for (std::int64_t c = 0; c < d; ++c)
            dotqk += q.data()[static_cast<std::size_t>((b * L + i) * d + c)] *
                     k.data()[static_cast<std::size_t>((b * L + j) * d + c)];
          logits[static_cast<std::size_t>(j)] =
              dotqk / std::sqrt(static_cast<double>(d)) +
              bias.data()[static_cast<std::size_t>((b * L + i) * L + j)];
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double& l : logits) {
          l = std::exp(l - mx);
          z += l;
        }
        for (std::int64_t c = 0; c < d; ++c) {
          double want = 0.0;
          for (std::int64_t j = 0; j < L; ++j)
            want += logits[static_cast<std::size_t>(j)] / z *
                    v.data()[static_cast<std::size_t>((b * L + j) * d + c)];
          const double got = out.data()[static_cast<std::size_t>((b * L + i) * d + c)];
          max_attn = std::max(max_attn, std::fabs(want - got));
        }
      }
  }
  NEED(max_attn < 1e-10, fmt("attention reduction residual %.3g exceeds 1e-10", max_attn));
  if (ok) note = fmt("shift residual %.2g; reduction residual %.2g", max_res, max_attn);
  return ok;
}

// ---------------------------------------------------------------------------
// 5. Row curation equals an independent brute-force reimplementation, and is
//    deterministic and idempotent, on 200 random instances.

bool crit_trim(std::string& note) {
  bool ok = true;
  SeedStream s("acc5");
  for (int i = 0; i < 200 && ok; ++i) {
    const int depth = 2 + static_cast<int>(s.uniform_int(49));
    const int length = 5 + static_cast<int>(s.uniform_int(36));
    const Msa msa = testsupport::random_msa(s, depth, length);
    TrimConfig cfg;
    cfg.n_max = 1 + static_cast<int>(s.uniform_int(static_cast<std::uint64_t>(depth + 4)));
    cfg.cov_min = 0.3 + 0.5 * s.uniform();
    cfg.ident_max = 0.5 + 0.5 * s.uniform();
    cfg.ident_min = 0.3 * s.uniform();

    const Msa got = trim(msa, cfg);
    const Msa want = testsupport::oracle_trim(msa, cfg);
    NEED(got == want, "trim disagrees with the brute-force reference at case " +
                          std::to_string(i));
    NEED(trim(msa, cfg) == got, "trim is not deterministic at case " + std::to_string(i));
    NEED(trim(got, cfg) == got, "trim is not idempotent at case " + std::to_string(i));
  }
  if (ok) note = "200 random instances (depth <= 50, length <= 40)";
  return ok;
}

// ---------------------------------------------------------------------------
// 6. Conditioning on the query row of a deep alignment is bit-identical to
//    conditioning on a standalone single-row alignment.

bool crit_singleton_context(std::string& note) {
  bool ok = true;
  const Model model(small_config(1, {2}), 6262);
  SeedStream s("acc6");
  for (int i = 0; i < 20 && ok; ++i) {
    const int depth = 2 + static_cast<int>(s.uniform_int(5));
    const int length = 4 + static_cast<int>(s.uniform_int(8));
    const Msa msa = testsupport::random_msa(s, depth, length);
    std::vector<int> targets;
    for (int r = 1; r < depth; ++r) targets.push_back(r);

    Msa solo;
    solo.rows.push_back(msa.rows[0]);
    const TokenGrid tgt = tokenize_rows(msa, targets);
    const Model::ElboResult a = model.elbo(tokenize_rows(msa, {0}), tgt, 1.0,
                                           SeedStream("acc6-n", static_cast<std::uint64_t>(i)));
    const Model::ElboResult b = model.elbo(tokenize(solo), tgt, 1.0,
                                           SeedStream("acc6-n", static_cast<std::uint64_t>(i)));
    NEED(bits_equal(a.total.data(), b.total.data()), "objective differs");
    NEED(bits_equal(a.recon_aa.data(), b.recon_aa.data()), "residue term differs");
    NEED(bits_equal(a.recon_del.data(), b.recon_del.data()), "deletion term differs");
    NEED(a.kl.size() == b.kl.size(), "level count differs");
    for (std::size_t k = 0; k < a.kl.size() && ok; ++k)
      NEED(bits_equal(a.kl[k].data(), b.kl[k].data()), "divergence term differs");
    NEED(bits_equal(a.logits.aa.data(), b.logits.aa.data()), "logits differ");
  }
  if (ok) note = "20 random inputs, all terms bit-exact";
  return ok;
}

// ---------------------------------------------------------------------------
// 7. Optimization plumbing: learning-rate anchors, the global clip bound, and
//    the optimizer's stabilizer, all at their shipped defaults.

bool crit_schedule(std::string& note) {
  bool ok = true;
  const TrainConfig d;
  NEED(lr_at_step(0, d) == 0.0, "lr at step 0 is nonzero");
  NEED(std::fabs(lr_at_step(3000, d) - 5e-4) < 1e-12, "peak lr anchor off");
  NEED(std::fabs(lr_at_step(103000, d) - 1e-5) < 1e-12, "floor lr anchor off");
  NEED(d.clip_norm == 0.1, "default clip bound is not 0.1");
  NEED(d.adam.eps == 1e-6, "default optimizer eps is not 1e-6");

  SeedStream s("acc7");
  for (int t = 0; t < 50; ++t) {
    GradMap g;
    const double scale = std::pow(10.0, static_cast<double>(t % 5) - 2.0);
    for (const char* name : {"a", "b", "c"}) {
      std::vector<double> v(3 + s.uniform_int(6));
      for (double& x : v) x = scale * s.normal();
      g[name] = std::move(v);
    }
    const double pre = clip_by_global_norm(g, 0.1);
    const double post = global_norm(g);
    NEED(post <= 0.1 * (1.0 + 1e-12), fmt("post-clip norm %.17g exceeds 0.1", post));
    if (pre <= 0.1) NEED(post == pre, "small gradients were rescaled");
  }

  ParamStore ps;
  ps.add("w", Tensor::param(Shape{1}, {0.5}));
  GradMap g;
  g["w"] = {1e-5};
  AdamState st;
  adam_step(ps, g, st, 1e-3);
  const double m = 0.1 * 1e-5;
  const double v = 0.001 * 1e-10;
  const double mhat = m / (1.0 - 0.9);
  const double vhat = v / (1.0 - 0.999);
  const double want = 0.5 - 1e-3 * mhat / (std::sqrt(vhat) + 1e-6);
  const double got = ps.at("w").data()[0];
  NEED(std::fabs(got - want) < 1e-15,
       fmt("optimizer update %.17g != hand value %.17g", got, want));
  if (ok) note = "anchors exact; 50 random clip cases; one-step optimizer hand check";
  return ok;
}

// ---------------------------------------------------------------------------
// 8. Desk-scale learnability: after a bounded single-core pretraining run on a
//    synthetic corpus, held-out reconstruction at conserved columns beats the
//    column-frequency baseline by at least 10 percentage points.

// Pinned observed metrics of this exact seeded run; a drifting result fails
// loudly rather than silently.
constexpr double kExpectedModelAcc = 1.000;
constexpr double kExpectedBaseAcc = 0.678;

bool crit_learnability(std::string& note) {
  bool ok = true;
  const auto t0 = std::chrono::steady_clock::now();

  SyntheticFamilyConfig sc;
  sc.families = 100;
  sc.depth = 32;
  sc.length = 48;
  sc.conserved_fraction = 0.5;
  sc.mutation_rate = 0.9;
  sc.gap_rate = 0.3;
  sc.seed = 1234;
  const std::vector<SyntheticFamily> corpus = synth_corpus(sc);
  std::vector<Msa> train;
  for (int f = 0; f < 90; ++f) train.push_back(corpus[static_cast<std::size_t>(f)].msa);

  ModelConfig mc;
  mc.n_enc_blocks = 1;
  mc.n_dec_blocks = 1;
  mc.c_s = 16;
  mc.c_p = 8;
  mc.heads = 2;
  mc.latent_dims = {4};
  mc.latent_hidden = 8;
  mc.num_buckets = 16;
  mc.max_distance = 64;
  mc.transition_factor = 2;
  mc.opm_dim = 4;
  Model model(mc, 8888);

  TrainConfig tc;
  tc.batch_size = 4;
  tc.crop_length = 48;
  tc.crop_depth = 12;
  tc.lr_peak = 2e-3;
  tc.lr_final = 2e-4;
  tc.warmup_steps = 50;
  tc.decay_steps = 350;
  tc.total_steps = 400;
  tc.kl_warmup_fraction = 0.3;
  const int kSteps = tc.total_steps;

  AdamState opt;
  const SeedStream run("acc8-train");
  std::vector<Msa> batch;
  for (int step = 0; step < kSteps; ++step) {
    batch.clear();
    for (int j = 0; j < tc.batch_size; ++j)
      batch.push_back(train[static_cast<std::size_t>(
          (static_cast<std::size_t>(step) * tc.batch_size + j) % train.size())]);
    pretrain_step(model, batch, opt, step, tc, run);
  }
  const double train_secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  NEED(train_secs < 1800.0, fmt("training exceeded the 30-minute budget: %.0fs", train_secs));

  // Held-out families: reconstruct a random half from the other half and score
  // target tokens at conserved columns only.
  std::int64_t cells = 0, model_hits = 0, base_hits = 0;
  for (int f = 90; f < 100; ++f) {
    const SyntheticFamily& fam = corpus[static_cast<std::size_t>(f)];
    const ContextTargetSplit split =
        split_context_target(fam.msa.depth(), 0.5, 9900 + static_cast<std::uint64_t>(f));
    const TokenGrid ctx = tokenize_rows(fam.msa, split.context);
    const TokenGrid tgt = tokenize_rows(fam.msa, split.targets);
    const Model::ElboResult res =
        model.elbo(ctx, tgt, 1.0, SeedStream("acc8-eval", static_cast<std::uint64_t>(f)));

    const int L = fam.msa.length();
    std::vector<int> column_mode(static_cast<std::size_t>(L));
    for (int c = 0; c < L; ++c) {
      int counts[kVocabSize] = {0};
      for (int r = 0; r < ctx.rows; ++r) ++counts[ctx.token(r, c)];
      int best = 0;
      for (int v = 1; v < kVocabSize; ++v)
        if (counts[v] > counts[best]) best = v;
      column_mode[static_cast<std::size_t>(c)] = best;
    }

    const std::span<const double> logits = res.logits.aa.data();
    for (int t = 0; t < tgt.rows; ++t)
      for (int c = 0; c < L; ++c) {
        if (!fam.conserved[static_cast<std::size_t>(c)]) continue;
        const std::size_t off =
            (static_cast<std::size_t>(t) * static_cast<std::size_t>(L) +
             static_cast<std::size_t>(c)) *
            kVocabSize;
        int arg = 0;
        for (int v = 1; v < kVocabSize; ++v)
          if (logits[off + static_cast<std::size_t>(v)] >
              logits[off + static_cast<std::size_t>(arg)])
            arg = v;
        const int truth = tgt.token(t, c);
        ++cells;
        model_hits += (arg == truth);
        base_hits += (column_mode[static_cast<std::size_t>(c)] == truth);
      }
  }
  const double acc_model = static_cast<double>(model_hits) / static_cast<double>(cells);
  const double acc_base = static_cast<double>(base_hits) / static_cast<double>(cells);
  NEED(acc_model >= acc_base + 0.10,
       fmt("accuracy %.3f vs baseline %.3f: margin under 10 points", acc_model, acc_base));
  if (kExpectedModelAcc > 0.0)
    NEED(std::fabs(acc_model - kExpectedModelAcc) < 0.02,
         fmt("accuracy drifted from the pinned run: %.3f vs %.3f", acc_model,
             kExpectedModelAcc));
  if (kExpectedBaseAcc > 0.0)
    NEED(std::fabs(acc_base - kExpectedBaseAcc) < 0.02,
         fmt("baseline drifted from the pinned run: %.3f vs %.3f", acc_base,
             kExpectedBaseAcc));
  note = fmt("held-out accuracy %.3f vs baseline %.3f", acc_model, acc_base) + " (" +
         std::to_string(kSteps) + " steps, " + fmt("%.0fs", train_secs) + ")";
  return ok;
}

// ---------------------------------------------------------------------------
// 9. Critic-guided refinement learns: 500 steps cut the cross-entropy channel
//    by at least 20%, and gradients provably flow through the discrete
//    sampling path into the generator's parameters.

bool crit_refinement(std::string& note) {
  bool ok = true;

  SyntheticFamilyConfig sc;
  sc.families = 1;
  sc.depth = 6;
  sc.length = 16;
  sc.conserved_fraction = 0.5;
  sc.mutation_rate = 0.5;
  sc.gap_rate = 0.1;
  sc.seed = 5;
  const Msa msa = synth_corpus(sc)[0].msa;
  std::vector<int> profile;
  for (char ch : msa.query().symbols) profile.push_back(token_id(ch));
  const auto critic = synthetic_critic(profile);
  const std::vector<FinetuneExample> batch = {{&msa, critic.get()}};

  Model model(small_config(1, {2}), 909);
  TrainConfig tc;
  tc.lr_peak = 1e-3;
  tc.lr_final = 1e-4;
  tc.warmup_steps = 50;
  tc.decay_steps = 450;
  tc.total_steps = 500;
  tc.finetune_gen_rows = 4;
  AdamState opt;
  const SeedStream run("acc9");

  double first = 0.0, last = 0.0;
  for (int step = 0; step < 500; ++step) {
    const FinetuneMetrics m = finetune_step(model, batch, opt, step, tc, run);
    if (step == 0) first = m.channels.at("fape_like");
    if (step == 499) last = m.channels.at("fape_like");
  }
  NEED(last <= 0.8 * first,
       fmt("channel did not drop 20%%: %.4f -> %.4f", first, last));

  Model fresh(small_config(1, {2}), 909);
  TrainConfig hard = tc;
  hard.hard_tokens = true;
  hard.elbo_weight = 0.0;
  AdamState opt2;
  const FinetuneMetrics hm = finetune_step(fresh, batch, opt2, 0, hard, SeedStream("acc9-hard"));
  NEED(hm.grad_norm > 0.0, "no gradient flow through the discrete sampling path");
  if (ok)
    note = fmt("channel %.3f -> %.3f; discrete-path grad norm %.3g", first, last,
               hm.grad_norm);
  return ok;
}

// ---------------------------------------------------------------------------
// 10. Inference protocol contracts: shipped default grids, depth/query
//     preservation, exact emitted sizes, and bare-query operation.

bool crit_protocols(std::string& note) {
  bool ok = true;
  const ProbeConfig pc;
  NEED(pc.n_max == (std::vector<int>{512, 1024}), "probe depth caps changed");
  NEED(pc.n_sub == (std::vector<int>{16, 32, 64}), "probe subset sizes changed");
  NEED(pc.r_ctx == (std::vector<double>{0.25, 0.5, 0.75}), "probe context grid changed");
  const CalibrationConfig cc;
  NEED(cc.r_ctx == (std::vector<double>{0.5, 0.7, 0.9}), "calibration context grid changed");
  NEED(cc.trials == 5, "calibration trial count changed");
  const AugmentationConfig ac;
  NEED(ac.n_aug == 128, "augmentation default size changed");
  const ZeroShotConfig zc;
  NEED(zc.trials == 2, "zero-shot trial count changed");

  const Model model(small_config(1, {2}), 3131);
  SeedStream s("acc10");
  const Msa msa = testsupport::random_msa(s, 5, 6);

  const CalibrationResult cal = calibrate(msa, model, cc);
  NEED(cal.outputs.size() == 15, "calibration trial grid incomplete");
  for (const ProtocolOutput& out : cal.outputs) {
    NEED(out.msa.depth() == msa.depth(), "calibration changed the depth");
    NEED(out.msa.rows[0] == msa.rows[0], "calibration changed the query");
  }

  const auto aug = augment(msa, model, ac);
  NEED(aug.size() == 15, "augmentation trial grid incomplete");
  for (const ProtocolOutput& out : aug) {
    NEED(out.msa.depth() == 128, "augmentation row count is not the asked 128");
    NEED(out.grid.rows == 128, "augmentation grid row count mismatch");
    NEED(out.msa.rows[0].symbols == msa.query().symbols, "augmentation lost the query");
  }

  const auto zs = zero_shot("ACDEFGHIKLM", model, zc);
  NEED(zs.size() == zc.n_aug.size() * 2, "zero-shot trial grid incomplete");
  for (const ProtocolOutput& out : zs)
    NEED(out.msa.rows[0].symbols == "ACDEFGHIKLM", "zero-shot lost the query");
  if (ok) note = "defaults intact; 15+15 trials verified; zero-shot from a bare query";
  return ok;
}

// ---------------------------------------------------------------------------
// 11. Serialization: alignment text and feature containers round-trip exactly;
//     reloaded checkpoints reproduce inference bit-for-bit.

bool crit_serialization(std::string& note) {
  bool ok = true;
  SeedStream s("acc11");
  const Msa msa = testsupport::random_msa(s, 4, 12);
  const std::string text = write_a3m(msa);
  const Msa back = parse_a3m(text);
  NEED(back == msa, "alignment round trip changed the rows");
  NEED(write_a3m(back) == text, "alignment re-serialization is not byte-stable");

  FeatureGrid grid;
  grid.rows = 3;
  grid.length = 5;
  grid.query = "ACDEF";
  grid.probs.resize(3 * 5 * static_cast<std::size_t>(kVocabSize));
  for (float& p : grid.probs) p = static_cast<float>(s.uniform());
  const std::string feat_path =
      (std::filesystem::temp_directory_path() / "acc11.feat").string();
  export_features(grid, feat_path);
  const FeatureGrid grid_back = import_features(feat_path);
  NEED(grid_back == grid, "feature container round trip is not bit-exact");
  std::filesystem::remove(feat_path);

  const ModelConfig mc = small_config(1, {2});
  const Model model(mc, 1441);
  const TokenGrid ctx = tokenize_rows(msa, {0});
  const TokenGrid tgt = tokenize_rows(msa, {1, 2, 3});
  const Model::ElboResult r1 = model.elbo(ctx, tgt, 1.0, SeedStream("acc11-n"));
  const Model::DecodeResult g1 = model.generate(ctx, 3, SeedStream("acc11-g"));

  const std::string ckpt_path =
      (std::filesystem::temp_directory_path() / "acc11.ckpt").string();
  save_checkpoint(ckpt_path, model.params(), mc.digest());
  const Model reloaded(mc, load_checkpoint(ckpt_path, mc.digest()));
  const Model::ElboResult r2 = reloaded.elbo(ctx, tgt, 1.0, SeedStream("acc11-n"));
  const Model::DecodeResult g2 = reloaded.generate(ctx, 3, SeedStream("acc11-g"));
  NEED(bits_equal(r1.total.data(), r2.total.data()), "reloaded objective differs");
  NEED(bits_equal(r1.logits.aa.data(), r2.logits.aa.data()), "reloaded logits differ");
  NEED(bits_equal(g1.logits.aa.data(), g2.logits.aa.data()),
       "reloaded generation differs");
  std::filesystem::remove(ckpt_path);
  if (ok) note = "alignment text, feature container, and checkpoint all exact";
  return ok;
}

}  // namespace

int main() {
  using Criterion = std::pair<const char*, bool (*)(std::string&)>;
  const std::vector<Criterion> criteria = {
      {"gradients match finite differences (primitives + full model)", crit_gradients},
      {"variational objective lower-bounds the sampled evidence", crit_bound},
      {"straight-through sampling: hard forward, soft backward", crit_straight_through},
      {"rotary attention is shift-invariant and reduces to plain attention", crit_rotary},
      {"row curation matches a brute-force reference", crit_trim},
      {"query-only context equals the singleton path bit-exactly", crit_singleton_context},
      {"schedule anchors, clip bound, and optimizer stabilizer", crit_schedule},
      {"pretraining beats the column-frequency baseline on held-out data", crit_learnability},
      {"critic-guided refinement learns through the discrete path", crit_refinement},
      {"inference protocol defaults and contracts hold", crit_protocols},
      {"alignments, features, and checkpoints round-trip exactly", crit_serialization},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string note;
    bool ok = false;
    try {
      ok = criteria[i].second(note);
    } catch (const std::exception& e) {
      ok = false;
      note = std::string("unhandled exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %2zu/11 %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", i + 1,
                criteria[i].first, secs, note.empty() ? "" : " -- ", note.c_str());
    std::fflush(stdout);
    if (!ok) ++failed;
  }
  std::printf("%d/11 acceptance criteria passed\n",
              static_cast<int>(criteria.size()) - failed);
  return failed == 0 ? 0 : 1;
}
