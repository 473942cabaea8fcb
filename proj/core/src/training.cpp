#include "evogen/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace evogen {

double lr_at_step(int step, const TrainConfig& cfg) {
  if (step < 0) throw std::invalid_argument("negative step");
  if (step < cfg.warmup_steps)
    return cfg.lr_peak * static_cast<double>(step) / cfg.warmup_steps;
  const int past = step - cfg.warmup_steps;
  if (past < cfg.decay_steps) {
    const double t = static_cast<double>(past) / cfg.decay_steps;
    const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    return cfg.lr_final + (cfg.lr_peak - cfg.lr_final) * c;
  }
  return cfg.lr_final;
}

double kl_beta(int step, const TrainConfig& cfg) {
  if (step < 0) throw std::invalid_argument("negative step");
  const double ramp = cfg.kl_warmup_fraction * cfg.total_steps;
  if (ramp <= 0.0) return 1.0;
  const double b = static_cast<double>(step) / ramp;
  return b >= 1.0 ? 1.0 : b;
}

double loss_weight(int length) {
  if (length < 0) throw std::invalid_argument("negative length");
  return std::sqrt(static_cast<double>(length));
}

std::string metrics_line(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "step=%d lr=%.6g beta=%.4g loss=%.6g recon_aa=%.6g recon_del=%.6g "
                "kl=%.6g grad_norm=%.6g used=%d skipped=%d",
                m.step, m.lr, m.beta, m.loss, m.recon_aa, m.recon_del, m.kl,
                m.grad_norm, m.used, m.skipped);
  return buf;
}

std::string metrics_line(const FinetuneMetrics& m) {
  auto ch = [&](const char* key) {
    auto it = m.channels.find(key);
    return it == m.channels.end() ? 0.0 : it->second;
  };
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "step=%d lr=%.6g total=%.6g fape=%.6g torsion=%.6g violation=%.6g "
                "conf_pen=%.6g confidence=%.4g elbo=%.6g grad_norm=%.6g used=%d",
                m.step, m.lr, m.total, ch("fape_like"), ch("torsion_like"),
                ch("violation_like"), ch("confidence_like"), m.confidence,
                m.elbo_term, m.grad_norm, m.used);
  return buf;
}

std::vector<SyntheticFamily> synth_corpus(const SyntheticFamilyConfig& cfg) {
  if (cfg.families < 1 || cfg.depth < 1 || cfg.length < 1)
    throw std::invalid_argument("corpus dimensions must be positive");
  for (double r : {cfg.conserved_fraction, cfg.mutation_rate, cfg.gap_rate})
    if (r < 0.0 || r > 1.0) throw std::invalid_argument("rates must lie in [0, 1]");
  static constexpr char kCanon[] = "ACDEFGHIKLMNPQRSTVWY";
  SeedStream root("synth", cfg.seed);
  std::vector<SyntheticFamily> out;
  out.reserve(static_cast<std::size_t>(cfg.families));
  for (int f = 0; f < cfg.families; ++f) {
    SeedStream fs = root.fork("family", static_cast<std::uint64_t>(f));
    SeedStream anc = fs.fork("ancestor");
    std::string ancestor(static_cast<std::size_t>(cfg.length), 'A');
    for (char& c : ancestor) c = kCanon[anc.uniform_int(20)];

    // Random subset of columns is conserved.
    const int n_cons = static_cast<int>(std::llround(cfg.conserved_fraction * cfg.length));
    std::vector<int> cols(static_cast<std::size_t>(cfg.length));
    for (int i = 0; i < cfg.length; ++i) cols[static_cast<std::size_t>(i)] = i;
    SeedStream cs = fs.fork("conserved");
    for (int i = 0; i < n_cons; ++i) {
      const auto j = i + static_cast<int>(cs.uniform_int(static_cast<std::uint64_t>(cfg.length - i)));
      std::swap(cols[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]);
    }
    SyntheticFamily fam;
    fam.conserved.assign(static_cast<std::size_t>(cfg.length), 0);
    for (int i = 0; i < n_cons; ++i) fam.conserved[static_cast<std::size_t>(cols[i])] = 1;

    AlignedRow query;
    query.header = "family" + std::to_string(f) + "|query";
    query.symbols = ancestor;
    query.deletions.assign(static_cast<std::size_t>(cfg.length), 0);
    fam.msa.rows.push_back(std::move(query));
    for (int r = 1; r < cfg.depth; ++r) {
      SeedStream rs = fs.fork("row", static_cast<std::uint64_t>(r));
      AlignedRow row;
      row.header = "family" + std::to_string(f) + "|row" + std::to_string(r);
      row.symbols.resize(static_cast<std::size_t>(cfg.length));
      row.deletions.assign(static_cast<std::size_t>(cfg.length), 0);
      for (int pos = 0; pos < cfg.length; ++pos) {
        char c = ancestor[static_cast<std::size_t>(pos)];
        if (!fam.conserved[static_cast<std::size_t>(pos)] && rs.uniform() < cfg.mutation_rate)
          c = kCanon[rs.uniform_int(20)];
        if (rs.uniform() < cfg.gap_rate) c = '-';
        row.symbols[static_cast<std::size_t>(pos)] = c;
      }
      fam.msa.rows.push_back(std::move(row));
    }
    out.push_back(std::move(fam));
  }
  return out;
}

GumbelSample gumbel_st(const Tensor& logits, double temperature, SeedStream& stream) {
  if (temperature <= 0.0) throw std::invalid_argument("temperature must be positive");
  const std::int64_t depth = logits.dim(logits.ndim() - 1);
  std::vector<double> noise(static_cast<std::size_t>(logits.numel()));
  for (double& g : noise) {
    const double u = stream.uniform_open();   // (0, 1]
    double e = -std::log(u);                  // Exp(1), zero only at u == 1
    if (e <= 0.0) e = std::numeric_limits<double>::min();
    g = -std::log(e);
  }
  GumbelSample s;
  Tensor g = Tensor::constant(logits.shape(), std::move(noise));
  s.soft = softmax(mul(logits + g, 1.0 / temperature), -1);
  const std::vector<std::int64_t> picks = argmax(s.soft, -1);
  std::vector<int> ids(picks.size());
  for (std::size_t i = 0; i < picks.size(); ++i) ids[i] = static_cast<int>(picks[i]);
  s.hard = reshape(one_hot(ids, static_cast<int>(depth)), logits.shape());
  s.st = straight_through(s.soft, s.hard);
  return s;
}

Msa crop_columns(const Msa& msa, int offset, int new_length) {
  if (offset < 0 || new_length < 1 || offset + new_length > msa.length())
    throw std::invalid_argument("bad column crop");
  Msa out;
  out.rows.reserve(msa.rows.size());
  for (const AlignedRow& r : msa.rows) {
    AlignedRow c;
    c.header = r.header;
    c.symbols = r.symbols.substr(static_cast<std::size_t>(offset),
                                 static_cast<std::size_t>(new_length));
    c.deletions.assign(r.deletions.begin() + offset,
                       r.deletions.begin() + offset + new_length);
    out.rows.push_back(std::move(c));
  }
  return out;
}

Msa subsample_rows(const Msa& msa, const std::vector<int>& keep) {
  if (keep.empty() || keep.front() != 0)
    throw std::invalid_argument("row subsample must keep the query first");
  Msa out;
  out.rows.reserve(keep.size());
  int prev = -1;
  for (int idx : keep) {
    if (idx <= prev || idx >= msa.depth())
      throw std::invalid_argument("row subsample indices must be sorted and in range");
    prev = idx;
    out.rows.push_back(msa.rows[static_cast<std::size_t>(idx)]);
  }
  return out;
}

namespace {

// Random row/column crops shared by both step kinds.
Msa prepare_example(const Msa& msa, const TrainConfig& cfg, SeedStream& es) {
  Msa local = msa;
  if (local.depth() > cfg.crop_depth) {
    std::vector<int> pool(static_cast<std::size_t>(local.depth() - 1));
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int>(i) + 1;
    SeedStream rs = es.fork("rowcrop");
    const int want = cfg.crop_depth - 1;
    for (int i = 0; i < want; ++i) {
      const auto j = i + static_cast<int>(rs.uniform_int(pool.size() - static_cast<std::size_t>(i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    std::vector<int> keep(pool.begin(), pool.begin() + want);
    std::sort(keep.begin(), keep.end());
    keep.insert(keep.begin(), 0);
    local = subsample_rows(local, keep);
  }
  if (local.length() > cfg.crop_length) {
    SeedStream cs = es.fork("colcrop");
    const auto offset = cs.uniform_int(
        static_cast<std::uint64_t>(local.length() - cfg.crop_length + 1));
    local = crop_columns(local, static_cast<int>(offset), cfg.crop_length);
  }
  return local;
}

}  // namespace

StepMetrics pretrain_step(Model& model, std::span<const Msa> batch, AdamState& opt,
                          int step, const TrainConfig& cfg, const SeedStream& run) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  StepMetrics mt;
  mt.step = step;
  mt.lr = lr_at_step(step, cfg);
  mt.beta = kl_beta(step, cfg);
  SeedStream ss = run.fork("step", static_cast<std::uint64_t>(step));
  Tensor loss = Tensor::scalar(0.0);
  double sum_aa = 0.0, sum_del = 0.0, sum_kl = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    SeedStream es = ss.fork("item", static_cast<std::uint64_t>(b));
    Msa local = prepare_example(batch[b], cfg, es);
    if (local.depth() < 2) {
      ++mt.skipped;
      continue;
    }
    const double r = cfg.r_ctx_min +
                     es.fork("rctx").uniform() * (cfg.r_ctx_max - cfg.r_ctx_min);
    const ContextTargetSplit split =
        split_context_target(local.depth(), r, es.fork("split").next_u64());
    if (split.targets.empty()) {
      ++mt.skipped;
      continue;
    }
    TokenGrid ctx = tokenize_rows(local, split.context);
    TokenGrid tgt = tokenize_rows(local, split.targets);
    Model::ElboResult res = model.elbo(ctx, tgt, mt.beta, es.fork("noise"));
    loss = loss + mul(res.total, loss_weight(local.length()));
    sum_aa += res.recon_aa.item();
    sum_del += res.recon_del.item();
    for (const Tensor& k : res.kl) sum_kl += k.item();
    ++mt.used;
  }
  if (mt.used == 0) return mt;
  GradMap grads = collect_grads(loss, model.params());
  mt.grad_norm = clip_by_global_norm(grads, cfg.clip_norm);
  adam_step(model.params(), grads, opt, mt.lr, cfg.adam);
  mt.loss = loss.item();
  mt.recon_aa = sum_aa / mt.used;
  mt.recon_del = sum_del / mt.used;
  mt.kl = sum_kl / mt.used;
  return mt;
}

FinetuneMetrics finetune_step(Model& model, std::span<const FinetuneExample> batch,
                              AdamState& opt, int step, const TrainConfig& cfg,
                              const SeedStream& run) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  FinetuneMetrics mt;
  mt.step = step;
  mt.lr = lr_at_step(step, cfg);
  SeedStream ss = run.fork("ft", static_cast<std::uint64_t>(step));
  Tensor loss = Tensor::scalar(0.0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const FinetuneExample& ex = batch[b];
    if (!ex.msa || !ex.critic) throw std::invalid_argument("incomplete example");
    SeedStream es = ss.fork("item", static_cast<std::uint64_t>(b));
    Msa local = prepare_example(*ex.msa, cfg, es);
    TokenGrid full = tokenize(local);

    // Generate rows conditioned on the whole alignment and score their
    // distribution grid (query row prepended, one-hot).
    Model::DecodeResult gen =
        model.generate(full, cfg.finetune_gen_rows, es.fork("gen"));
    Tensor row_probs;
    if (cfg.hard_tokens) {
      SeedStream gs = es.fork("gumbel");
      row_probs = gumbel_st(gen.logits.aa, cfg.gumbel_temperature, gs).st;
    } else {
      row_probs = softmax(gen.logits.aa, -1);
    }
    std::vector<int> qtok(full.tokens.begin(), full.tokens.begin() + full.length);
    Tensor query_oh = reshape(one_hot(qtok, kVocabSize), {1, full.length, kVocabSize});
    Tensor feats = concat({query_oh, row_probs}, 0);
    const int rows = cfg.finetune_gen_rows + 1;
    std::span<const double> fd = feats.data();
    std::vector<double> dense(fd.begin(), fd.end());
    std::vector<double> grad(dense.size(), 0.0);
    CriticReport rep =
        ex.critic->grad_dense(dense, rows, full.length, cfg.critic_weights, grad);
    Tensor critic_node = custom_scalar(feats, rep.weighted_total, std::move(grad));

    Tensor item = critic_node;
    if (local.depth() >= 2) {
      const double r = cfg.r_ctx_min +
                       es.fork("rctx").uniform() * (cfg.r_ctx_max - cfg.r_ctx_min);
      const ContextTargetSplit split =
          split_context_target(local.depth(), r, es.fork("split").next_u64());
      if (!split.targets.empty()) {
        TokenGrid ctx = tokenize_rows(local, split.context);
        TokenGrid tgt = tokenize_rows(local, split.targets);
        Model::ElboResult res = model.elbo(ctx, tgt, 1.0, es.fork("noise"));
        item = item + mul(res.total, cfg.elbo_weight);
        mt.elbo_term += res.total.item();
      }
    }
    loss = loss + item;
    for (const auto& [key, value] : rep.channels) mt.channels[key] += value;
    mt.confidence += rep.confidence;
    ++mt.used;
  }
  if (mt.used == 0) return mt;
  loss = mul(loss, 1.0 / mt.used);
  GradMap grads = collect_grads(loss, model.params());
  mt.grad_norm = clip_by_global_norm(grads, cfg.clip_norm);
  adam_step(model.params(), grads, opt, mt.lr, cfg.adam);
  mt.total = loss.item();
  for (auto& [key, value] : mt.channels) value /= mt.used;
  mt.confidence /= mt.used;
  mt.elbo_term /= mt.used;
  return mt;
}

}  // namespace evogen
