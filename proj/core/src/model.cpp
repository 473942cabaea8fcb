#include "evogen/model.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "evogen/errors.hpp"

namespace evogen {

namespace {

using i64 = std::int64_t;
using nlohmann::json;

json config_json(const ModelConfig& c) {
  json j;
  j["n_enc_blocks"] = c.n_enc_blocks;
  j["n_dec_blocks"] = c.n_dec_blocks;
  j["c_s"] = c.c_s;
  j["c_p"] = c.c_p;
  j["heads"] = c.heads;
  j["latent_dims"] = c.latent_dims;
  j["latent_hidden"] = c.latent_hidden;
  j["num_buckets"] = c.num_buckets;
  j["max_distance"] = c.max_distance;
  j["rope_base"] = c.rope_base;
  j["transition_factor"] = c.transition_factor;
  j["opm_dim"] = c.opm_dim;
  return j;
}

void register_model(ParamStore& s, const ModelConfig& cfg, const SeedStream& root) {
  const HyperformerConfig hf = cfg.hyperformer();
  const i64 c = cfg.c_s, cp = cfg.c_p;
  const double ss = 1.0 / std::sqrt(static_cast<double>(c));
  auto dense = [&](const std::string& name, Shape shape, double stddev) {
    s.add(name, init_normal(name, std::move(shape), stddev, root));
  };
  auto zero = [&](const std::string& name, Shape shape) {
    s.add(name, init_zeros(name, std::move(shape)));
  };
  dense("embed/seq_w", {kVocabSize + 1, c}, 1.0 / std::sqrt(kVocabSize + 1.0));
  zero("embed/seq_b", {c});
  dense("embed/pair_table", {cfg.num_buckets, cp}, 1.0 / std::sqrt(static_cast<double>(cp)));
  for (int i = 0; i < cfg.n_enc_blocks; ++i)
    register_block(s, "enc/block" + std::to_string(i), hf, /*with_qc=*/true, root);
  for (int i = 0; i < cfg.n_dec_blocks; ++i)
    register_block(s, "dec/block" + std::to_string(i), hf, /*with_qc=*/false, root);
  for (int k = 0; k < cfg.levels(); ++k)
    register_latent_level(s, "latent/level" + std::to_string(k), cfg.c_s,
                          cfg.latent_hidden, cfg.latent_dims[static_cast<std::size_t>(k)],
                          k > 0 ? cfg.latent_dims[static_cast<std::size_t>(k - 1)] : 0, root);
  dense("dec/slot", {c}, ss);
  s.add("out/norm_scale", init_full("out/norm_scale", {c}, 1.0));
  zero("out/norm_offset", {c});
  dense("out/trunk_w", {c, c}, ss);
  zero("out/trunk_b", {c});
  dense("out/aa_w", {c, kVocabSize}, ss);
  zero("out/aa_b", {kVocabSize});
  dense("out/del_w", {c, kDeletionBins}, ss);
  zero("out/del_b", {kDeletionBins});
}

TokenGrid merge_grids(const TokenGrid& a, const TokenGrid& b) {
  if (a.length != b.length)
    throw std::invalid_argument("cannot merge grids of different lengths");
  TokenGrid g;
  g.rows = a.rows + b.rows;
  g.length = a.length;
  g.tokens = a.tokens;
  g.tokens.insert(g.tokens.end(), b.tokens.begin(), b.tokens.end());
  g.del_raw = a.del_raw;
  g.del_raw.insert(g.del_raw.end(), b.del_raw.begin(), b.del_raw.end());
  g.del_value = a.del_value;
  g.del_value.insert(g.del_value.end(), b.del_value.begin(), b.del_value.end());
  return g;
}

// Mean over rows of the per-row summed cross-entropy against integer labels.
Tensor ce_vs_ids(const Tensor& logits, const std::vector<int>& ids, int depth) {
  const i64 t = logits.dim(0), l = logits.dim(1);
  Tensor oh = reshape(one_hot(ids, depth), {t, l, depth});
  Tensor lp = log_softmax(logits, -1);
  Tensor per_row = sum(sum(mul(oh, lp), -1), -1);
  return neg(mean(per_row, 0));
}

}  // namespace

HyperformerConfig ModelConfig::hyperformer() const {
  HyperformerConfig hf;
  hf.c_s = c_s;
  hf.c_p = c_p;
  hf.heads = heads;
  hf.num_buckets = num_buckets;
  hf.max_distance = max_distance;
  hf.rope_base = rope_base;
  hf.transition_factor = transition_factor;
  hf.opm_dim = opm_dim;
  return hf;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (n_enc_blocks < 1 || n_dec_blocks < 1) fail("block counts must be positive");
  if (c_s < 2 || c_p < 1) fail("channel widths must be positive");
  if (heads < 1 || c_s % heads != 0) fail("heads must divide the sequence width");
  if ((c_s / heads) % 2 != 0) fail("per-head width must be even for the rotary transform");
  if (latent_dims.empty()) fail("at least one latent level is required");
  for (std::size_t k = 0; k < latent_dims.size(); ++k) {
    if (latent_dims[k] < 1) fail("latent dims must be positive");
    if (k > 0 && latent_dims[k] <= latent_dims[k - 1])
      fail("latent dims must strictly increase level to level");
  }
  if (n_dec_blocks < levels()) fail("need at least one decoder block per latent level");
  if (latent_hidden < 1) fail("latent hidden width must be positive");
  if (num_buckets < 4 || num_buckets % 2 != 0) fail("bucket count must be even and >= 4");
  if (max_distance <= num_buckets / 4) fail("max_distance too small for the bucket count");
  if (rope_base <= 1.0) fail("rope_base must exceed 1");
  if (transition_factor < 1) fail("transition factor must be positive");
  if (opm_dim < 1) fail("outer-product width must be positive");
}

std::uint64_t ModelConfig::digest() const {
  return fnv1a64(config_json(*this).dump());
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.n_enc_blocks = 12;
  c.n_dec_blocks = 12;
  c.c_s = 256;
  c.c_p = 128;
  c.heads = 8;
  c.latent_dims = {64, 128, 256};
  c.latent_hidden = 256;
  c.num_buckets = 32;
  c.max_distance = 128;
  c.rope_base = 10000.0;
  c.transition_factor = 4;
  c.opm_dim = 32;
  return c;
}

std::string config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("config parse: ") + e.what());
  }
  if (!j.is_object()) throw DataError("config must be a JSON object");
  ModelConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_enc_blocks") c.n_enc_blocks = v.get<int>();
      else if (key == "n_dec_blocks") c.n_dec_blocks = v.get<int>();
      else if (key == "c_s") c.c_s = v.get<int>();
      else if (key == "c_p") c.c_p = v.get<int>();
      else if (key == "heads") c.heads = v.get<int>();
      else if (key == "latent_dims") c.latent_dims = v.get<std::vector<int>>();
      else if (key == "latent_hidden") c.latent_hidden = v.get<int>();
      else if (key == "num_buckets") c.num_buckets = v.get<int>();
      else if (key == "max_distance") c.max_distance = v.get<int>();
      else if (key == "rope_base") c.rope_base = v.get<double>();
      else if (key == "transition_factor") c.transition_factor = v.get<int>();
      else if (key == "opm_dim") c.opm_dim = v.get<int>();
      else throw DataError("unknown config key: " + key);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("config field: ") + e.what());
  }
  return c;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  register_model(params_, config_, SeedStream("model", seed));
}

Model::Model(ModelConfig config, ParamStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  ParamStore expect;
  register_model(expect, config_, SeedStream("model", 0));
  if (expect.size() != params_.size())
    throw DataError("weight set does not match the configured layout");
  auto it = params_.begin();
  for (const auto& [path, value] : expect) {
    if (it->first != path)
      throw DataError("unexpected weight path: " + it->first);
    if (it->second.shape() != value.shape())
      throw DataError("weight shape mismatch at " + path);
    ++it;
  }
}

std::vector<int> Model::injection_depths() const {
  std::vector<int> d(static_cast<std::size_t>(config_.levels()));
  for (int k = 0; k < config_.levels(); ++k)
    d[static_cast<std::size_t>(k)] = static_cast<int>(
        (static_cast<i64>(k) * config_.n_dec_blocks) / config_.levels());
  return d;
}

std::vector<int> Model::mirror_depths() const {
  std::vector<int> m(static_cast<std::size_t>(config_.levels()));
  const auto inj = injection_depths();
  for (int k = 0; k < config_.levels(); ++k) {
    int depth = config_.n_enc_blocks - inj[static_cast<std::size_t>(k)];
    if (depth < 0) depth = 0;
    m[static_cast<std::size_t>(k)] = depth;
  }
  return m;
}

Model::Embedded Model::embed(const TokenGrid& grid) const {
  if (grid.rows < 1 || grid.length < 1)
    throw std::invalid_argument("cannot embed an empty grid");
  const i64 n = grid.rows, len = grid.length;
  Tensor aa = reshape(one_hot(grid.tokens, kVocabSize), {n, len, kVocabSize});
  Tensor del = Tensor::constant({n, len, 1}, std::vector<double>(grid.del_value.begin(),
                                                                 grid.del_value.end()));
  Tensor feat = concat({aa, del}, -1);
  Embedded out;
  out.seq = matmul(feat, params_.at("embed/seq_w")) + params_.at("embed/seq_b");
  std::vector<i64> ids(static_cast<std::size_t>(len * len));
  for (i64 i = 0; i < len; ++i)
    for (i64 j = 0; j < len; ++j)
      ids[static_cast<std::size_t>(i * len + j)] =
          relpos_bucket(static_cast<int>(i), static_cast<int>(j),
                        config_.num_buckets, config_.max_distance);
  out.pair = reshape(gather(params_.at("embed/pair_table"), ids, 0),
                     {len, len, config_.c_p});
  return out;
}

Model::EncodeResult Model::encode(const TokenGrid& context, const TokenGrid& targets) const {
  if (context.rows < 1 || targets.rows < 1)
    throw std::invalid_argument("encode needs context and target rows");
  const TokenGrid merged = merge_grids(context, targets);
  const HyperformerConfig hf = config_.hyperformer();
  Embedded emb = embed(merged);
  std::vector<Tensor> acts;
  acts.reserve(static_cast<std::size_t>(config_.n_enc_blocks) + 1);
  acts.push_back(emb.seq);
  Tensor seq = emb.seq, pair = emb.pair;
  for (int i = 0; i < config_.n_enc_blocks; ++i) {
    const BlockParams bp = block_params(params_, "enc/block" + std::to_string(i), true);
    BlockResult br = hyperformer_block(seq, pair, bp, hf, /*use_query_conditioning=*/true);
    seq = br.seq;
    pair = br.pair;
    acts.push_back(seq);
  }
  EncodeResult r;
  r.skips.assign(acts.begin() + 1, acts.end());
  const auto mirrors = mirror_depths();
  for (int k = 0; k < config_.levels(); ++k) {
    const auto lp = latent_level_params(params_, "latent/level" + std::to_string(k), k > 0);
    const Tensor& at = acts[static_cast<std::size_t>(mirrors[static_cast<std::size_t>(k)])];
    Tensor target_rows = slice(at, 0, context.rows, context.rows + targets.rows);
    r.deviations.push_back(deviation_from_target(target_rows, lp));
  }
  return r;
}

Model::SweepOut Model::sweep(const TokenGrid& context, int n_out, LatentMode mode,
                             const std::vector<LatentBase>* deviations,
                             const LatentState* provided, const std::vector<Tensor>* skips,
                             SeedStream* noise) const {
  if (n_out < 1) throw std::invalid_argument("need at least one output row");
  const i64 cn = context.rows, t = n_out, len = context.length;
  const HyperformerConfig hf = config_.hyperformer();
  Embedded emb = embed(context);
  Tensor slot = broadcast_to(reshape(params_.at("dec/slot"), {1, 1, config_.c_s}),
                             {t, len, config_.c_s});
  Tensor seq = concat({emb.seq, slot}, 0);
  Tensor pair = emb.pair;
  const auto depths = injection_depths();
  SweepOut out;
  out.latents.levels.resize(static_cast<std::size_t>(config_.levels()));
  Tensor prev_sample;
  for (int d = 0; d < config_.n_dec_blocks; ++d) {
    for (int k = 0; k < config_.levels(); ++k) {
      if (depths[static_cast<std::size_t>(k)] != d) continue;
      const i64 dk = config_.latent_dims[static_cast<std::size_t>(k)];
      const auto lp = latent_level_params(params_, "latent/level" + std::to_string(k), k > 0);
      Tensor ctx_summary = mean(slice(seq, 0, 0, cn), 0);  // [L, c_s]
      LatentBase base = prior_from_context(ctx_summary, prev_sample, t, lp);
      LatentLevelState st;
      if (mode == LatentMode::kProvided) {
        if (!provided || provided->levels.size() != static_cast<std::size_t>(config_.levels()))
          throw std::invalid_argument("provided latent state has the wrong level count");
        st = provided->levels[static_cast<std::size_t>(k)];
        if (!st.sample.defined() || st.sample.shape() != Shape{t, len, dk})
          throw std::invalid_argument("provided latent sample has the wrong shape");
        st.prior = conditional_params(base, lp.ar_mean_w, lp.ar_logvar_w, st.sample);
      } else {
        std::vector<double> buf(static_cast<std::size_t>(t * len * dk));
        SeedStream ls = noise->fork("level", static_cast<std::uint64_t>(k));
        ls.fill_normal(buf);
        Tensor eps = Tensor::constant({t, len, dk}, std::move(buf));
        if (mode == LatentMode::kPrior) {
          AncestralDraw draw = ancestral_sample(base, lp.ar_mean_w, lp.ar_logvar_w, eps);
          st.sample = draw.sample;
          st.prior = draw.params;
        } else {
          LatentBase refined = add_base(base, (*deviations)[static_cast<std::size_t>(k)]);
          AncestralDraw draw = ancestral_sample(refined, lp.ar_mean_w, lp.ar_logvar_w, eps);
          st.sample = draw.sample;
          st.posterior = draw.params;
          st.prior = conditional_params(base, lp.ar_mean_w, lp.ar_logvar_w, st.sample);
          out.kls.push_back(kl_term(st.posterior, st.prior));
        }
      }
      Tensor upd = matmul(st.sample, lp.inject_w);
      Tensor new_rows = slice(seq, 0, cn, cn + t) + upd;
      seq = concat({slice(seq, 0, 0, cn), new_rows}, 0);
      prev_sample = st.sample;
      out.latents.levels[static_cast<std::size_t>(k)] = std::move(st);
    }
    if (skips) {
      const int idx = config_.n_enc_blocks - 1 - d;
      if (idx >= 0 && idx < static_cast<int>(skips->size()))
        seq = seq + (*skips)[static_cast<std::size_t>(idx)];
    }
    const BlockParams bp = block_params(params_, "dec/block" + std::to_string(d), false);
    BlockResult br = hyperformer_block(seq, pair, bp, hf, /*use_query_conditioning=*/false);
    seq = br.seq;
    pair = br.pair;
  }
  Tensor new_rows = slice(seq, 0, cn, cn + t);
  Tensor x = layer_norm(new_rows, params_.at("out/norm_scale"), params_.at("out/norm_offset"));
  Tensor h = gelu(matmul(x, params_.at("out/trunk_w")) + params_.at("out/trunk_b"));
  out.logits.aa = matmul(h, params_.at("out/aa_w")) + params_.at("out/aa_b");
  out.logits.del = matmul(h, params_.at("out/del_w")) + params_.at("out/del_b");
  return out;
}

Model::DecodeResult Model::decode(const TokenGrid& context, const LatentState& provided,
                                  const std::vector<Tensor>* skips) const {
  if (provided.levels.empty()) throw std::invalid_argument("no latent samples provided");
  const int t = static_cast<int>(provided.levels.front().sample.dim(0));
  SweepOut sw = sweep(context, t, LatentMode::kProvided, nullptr, &provided, skips, nullptr);
  return {std::move(sw.logits), std::move(sw.latents)};
}

Model::ElboResult Model::elbo(const TokenGrid& context, const TokenGrid& targets,
                              double beta, SeedStream noise) const {
  EncodeResult enc = encode(context, targets);
  SweepOut sw = sweep(context, targets.rows, LatentMode::kPosterior, &enc.deviations,
                      nullptr, &enc.skips, &noise);
  ElboResult r;
  r.logits = sw.logits;
  r.latents = std::move(sw.latents);
  r.kl = std::move(sw.kls);
  r.recon_aa = ce_vs_ids(r.logits.aa, targets.tokens, kVocabSize);
  std::vector<int> bins(targets.del_value.size());
  for (std::size_t i = 0; i < bins.size(); ++i)
    bins[i] = discretize_deletion(targets.del_value[i]);
  r.recon_del = ce_vs_ids(r.logits.del, bins, kDeletionBins);
  Tensor kl_sum = Tensor::scalar(0.0);
  for (const Tensor& k : r.kl) kl_sum = kl_sum + k;
  r.total = r.recon_aa + r.recon_del + mul(kl_sum, beta);
  return r;
}

Model::DecodeResult Model::generate(const TokenGrid& context, int n_out,
                                    SeedStream noise) const {
  SweepOut sw = sweep(context, n_out, LatentMode::kPrior, nullptr, nullptr, nullptr, &noise);
  return {std::move(sw.logits), std::move(sw.latents)};
}

Tensor log_importance_weight(const Model::ElboResult& r) {
  Tensor lw = neg(r.recon_aa + r.recon_del);
  for (const auto& lv : r.latents.levels) {
    if (!lv.posterior.mean.defined())
      throw std::invalid_argument("importance weights need a posterior round trip");
    lw = lw + gaussian_log_density(lv.prior, lv.sample) -
         gaussian_log_density(lv.posterior, lv.sample);
  }
  return lw;
}

}  // namespace evogen
