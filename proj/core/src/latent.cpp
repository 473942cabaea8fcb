#include "evogen/latent.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace evogen {

namespace {

using i64 = std::int64_t;

// Strictly upper-triangular mask (s < t) as a constant; multiplying the
// autoregression matrices by it keeps channel t blind to channels >= t while
// still letting gradients reach the unmasked entries.
Tensor strict_mask(i64 d) {
  std::vector<double> m(static_cast<std::size_t>(d * d), 0.0);
  for (i64 s = 0; s < d; ++s)
    for (i64 t = s + 1; t < d; ++t) m[static_cast<std::size_t>(s * d + t)] = 1.0;
  return Tensor::constant({d, d}, std::move(m));
}

Tensor split_mean(const Tensor& packed, i64 d) { return slice(packed, -1, 0, d); }
Tensor split_logvar(const Tensor& packed, i64 d) { return slice(packed, -1, d, 2 * d); }

}  // namespace

void register_latent_level(ParamStore& store, const std::string& prefix,
                           int c_s, int hidden, int dim, int prev_dim,
                           const SeedStream& root) {
  const double trunk_std = 1.0 / std::sqrt(static_cast<double>(c_s));
  const double head_std = 1.0 / std::sqrt(static_cast<double>(hidden));
  auto dense = [&](const std::string& name, Shape shape, double stddev) {
    store.add(name, init_normal(name, std::move(shape), stddev, root));
  };
  dense(prefix + "/trunk_w", {c_s, hidden}, trunk_std);
  store.add(prefix + "/trunk_b", init_zeros(prefix + "/trunk_b", {hidden}));
  if (prev_dim > 0)
    dense(prefix + "/prev_w", {prev_dim, hidden},
          1.0 / std::sqrt(static_cast<double>(prev_dim)));
  dense(prefix + "/base_head_w", {hidden, 2 * dim}, head_std);
  store.add(prefix + "/base_head_b", init_zeros(prefix + "/base_head_b", {2 * dim}));
  dense(prefix + "/shift_head_w", {hidden, 2 * dim}, head_std);
  store.add(prefix + "/shift_head_b", init_zeros(prefix + "/shift_head_b", {2 * dim}));
  store.add(prefix + "/ar_mean_w", init_zeros(prefix + "/ar_mean_w", {dim, dim}));
  store.add(prefix + "/ar_logvar_w", init_zeros(prefix + "/ar_logvar_w", {dim, dim}));
  dense(prefix + "/inject_w", {dim, c_s}, 1.0 / std::sqrt(static_cast<double>(dim)));
}

LatentLevelParams latent_level_params(const ParamStore& store,
                                      const std::string& prefix, bool has_prev) {
  LatentLevelParams p;
  p.trunk_w = store.at(prefix + "/trunk_w");
  p.trunk_b = store.at(prefix + "/trunk_b");
  if (has_prev) p.prev_w = store.at(prefix + "/prev_w");
  p.base_head_w = store.at(prefix + "/base_head_w");
  p.base_head_b = store.at(prefix + "/base_head_b");
  p.shift_head_w = store.at(prefix + "/shift_head_w");
  p.shift_head_b = store.at(prefix + "/shift_head_b");
  p.ar_mean_w = store.at(prefix + "/ar_mean_w");
  p.ar_logvar_w = store.at(prefix + "/ar_logvar_w");
  p.inject_w = store.at(prefix + "/inject_w");
  return p;
}

LatentBase prior_from_context(const Tensor& context_summary, const Tensor& prev_sample,
                              std::int64_t n_rows, const LatentLevelParams& p) {
  const i64 d = p.inject_w.dim(0);
  const i64 len = context_summary.dim(0);
  Tensor h = matmul(context_summary, p.trunk_w) + p.trunk_b;  // [L, hidden]
  Tensor packed;
  if (prev_sample.defined()) {
    if (!p.prev_w.defined())
      throw std::invalid_argument("level has no previous-sample projection");
    Tensor hr = gelu(h + matmul(prev_sample, p.prev_w));  // [T, L, hidden]
    packed = matmul(hr, p.base_head_w) + p.base_head_b;
  } else {
    Tensor ha = gelu(h);
    packed = broadcast_to(matmul(ha, p.base_head_w) + p.base_head_b,
                          {n_rows, len, 2 * d});
  }
  return {split_mean(packed, d), split_logvar(packed, d)};
}

LatentBase deviation_from_target(const Tensor& target_summary, const LatentLevelParams& p) {
  const i64 d = p.inject_w.dim(0);
  Tensor h = gelu(matmul(target_summary, p.trunk_w) + p.trunk_b);
  Tensor packed = matmul(h, p.shift_head_w) + p.shift_head_b;
  return {split_mean(packed, d), split_logvar(packed, d)};
}

LatentBase add_base(const LatentBase& a, const LatentBase& b) {
  return {a.mean + b.mean, a.logvar_raw + b.logvar_raw};
}

GaussianParams clamp_params(const LatentBase& base) {
  return {base.mean, clamp(base.logvar_raw, -kLogVarBound, kLogVarBound)};
}

GaussianParams conditional_params(const LatentBase& base, const Tensor& ar_mean_w,
                                  const Tensor& ar_logvar_w, const Tensor& path) {
  const i64 d = ar_mean_w.dim(0);
  Tensor mask = strict_mask(d);
  Tensor mean = base.mean + matmul(path, mul(ar_mean_w, mask));
  Tensor logvar = clamp(base.logvar_raw + matmul(path, mul(ar_logvar_w, mask)),
                        -kLogVarBound, kLogVarBound);
  return {mean, logvar};
}

AncestralDraw ancestral_sample(const LatentBase& base, const Tensor& ar_mean_w,
                               const Tensor& ar_logvar_w, const Tensor& noise) {
  const i64 d = ar_mean_w.dim(0);
  if (noise.dim(noise.ndim() - 1) != d)
    throw std::invalid_argument("noise channel count does not match the level");
  Tensor mask = strict_mask(d);
  Tensor mu_w = mul(ar_mean_w, mask);
  Tensor lv_w = mul(ar_logvar_w, mask);
  std::vector<Tensor> zs, mus, lvs;
  zs.reserve(d);
  mus.reserve(d);
  lvs.reserve(d);
  Tensor prefix;  // concat of channels drawn so far, [T, L, t]
  for (i64 t = 0; t < d; ++t) {
    Tensor mu_t = slice(base.mean, -1, t, t + 1);
    Tensor lv_t = slice(base.logvar_raw, -1, t, t + 1);
    if (t > 0) {
      // Column t of the masked matrices restricted to the drawn channels.
      Tensor mu_col = slice(slice(mu_w, 1, t, t + 1), 0, 0, t);  // [t, 1]
      Tensor lv_col = slice(slice(lv_w, 1, t, t + 1), 0, 0, t);
      mu_t = mu_t + matmul(prefix, mu_col);
      lv_t = lv_t + matmul(prefix, lv_col);
    }
    lv_t = clamp(lv_t, -kLogVarBound, kLogVarBound);
    Tensor z_t = mu_t + mul(exp(mul(lv_t, 0.5)), slice(noise, -1, t, t + 1));
    mus.push_back(mu_t);
    lvs.push_back(lv_t);
    zs.push_back(z_t);
    prefix = (t == 0) ? z_t : concat({prefix, z_t}, -1);
  }
  AncestralDraw out;
  out.sample = (d == 1) ? zs[0] : concat(zs, -1);
  out.params.mean = (d == 1) ? mus[0] : concat(mus, -1);
  out.params.logvar = (d == 1) ? lvs[0] : concat(lvs, -1);
  return out;
}

Tensor sample_reparam(const GaussianParams& g, const Tensor& noise) {
  return g.mean + mul(exp(mul(g.logvar, 0.5)), noise);
}

Tensor kl_term(const GaussianParams& post, const GaussianParams& prior) {
  Tensor dlv = post.logvar - prior.logvar;
  Tensor dm = post.mean - prior.mean;
  Tensor e = exp(dlv) + mul(mul(dm, dm), exp(neg(prior.logvar))) - 1.0 - dlv;
  Tensor per_row = sum(sum(mul(e, 0.5), -1), -1);
  return mean(per_row, 0);
}

Tensor gaussian_log_density(const GaussianParams& g, const Tensor& x) {
  constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
  Tensor dm = x - g.mean;
  Tensor e = mul(mul(dm, dm), exp(neg(g.logvar))) + g.logvar + kLog2Pi;
  Tensor per_row = sum(sum(mul(e, -0.5), -1), -1);
  return mean(per_row, 0);
}

}  // namespace evogen
