#include "evogen/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "evogen/errors.hpp"
#include "evogen/training.hpp"

namespace evogen {

namespace {

using nlohmann::json;

std::uint64_t stream_fingerprint(const SeedStream& s) { return fnv1a64(s.name()); }

// Writes a row's one-hot distribution into a float grid at row index r.
void write_one_hot_row(FeatureGrid& grid, int r, const TokenGrid& tokens, int token_row) {
  for (int c = 0; c < grid.length; ++c) {
    const int t = tokens.token(token_row, c);
    grid.probs[(static_cast<std::size_t>(r) * grid.length + c) * kVocabSize +
               static_cast<std::size_t>(t)] = 1.0f;
  }
}

FeatureGrid empty_grid(int rows, int length, std::string query) {
  FeatureGrid g;
  g.rows = rows;
  g.length = length;
  g.query = std::move(query);
  g.probs.assign(static_cast<std::size_t>(rows) * length * kVocabSize, 0.0f);
  return g;
}

struct RewriteOut {
  Msa msa;
  FeatureGrid grid;
  bool passthrough = false;
};

// Posterior rewrite of the non-context rows at context fraction r.
RewriteOut rewrite_rows(const Msa& msa, const Model& model, double r, bool hard,
                        SeedStream ts) {
  RewriteOut out;
  out.msa = msa;
  const int depth = msa.depth(), length = msa.length();
  const ContextTargetSplit split =
      split_context_target(depth, r, ts.fork("split").next_u64());
  if (split.targets.empty()) {
    out.grid = features_from_grid(tokenize(msa), msa.query().symbols);
    out.passthrough = true;
    return out;
  }
  TokenGrid ctx = tokenize_rows(msa, split.context);
  TokenGrid tgt = tokenize_rows(msa, split.targets);
  Model::ElboResult res = model.elbo(ctx, tgt, 1.0, ts.fork("noise"));

  std::vector<AlignedRow> rewritten;
  if (hard) {
    SeedStream tk = ts.fork("tokens");
    rewritten = detokenize(res.logits, DetokenizeMode::kSample, &tk);
  } else {
    rewritten = detokenize(res.logits, DetokenizeMode::kArgmax);
  }
  for (std::size_t i = 0; i < split.targets.size(); ++i) {
    AlignedRow& dst = out.msa.rows[static_cast<std::size_t>(split.targets[i])];
    dst.symbols = rewritten[i].symbols;
    dst.deletions = rewritten[i].deletions;
  }

  out.grid = features_from_grid(tokenize(out.msa), msa.query().symbols);
  if (!hard) {
    // Replace the rewritten rows' one-hots with the full distributions.
    Tensor probs = softmax(res.logits.aa, -1);
    std::span<const double> p = probs.data();
    for (std::size_t i = 0; i < split.targets.size(); ++i) {
      const std::size_t dst_off =
          static_cast<std::size_t>(split.targets[i]) * length * kVocabSize;
      const std::size_t src_off = i * static_cast<std::size_t>(length) * kVocabSize;
      for (std::size_t e = 0; e < static_cast<std::size_t>(length) * kVocabSize; ++e)
        out.grid.probs[dst_off + e] = static_cast<float>(p[src_off + e]);
    }
  }
  return out;
}

// Query row plus n_aug - 1 rows drawn from the generative path, conditioned on
// the given context rows.
ProtocolOutput generate_rows(const Msa& context, const Model& model, int n_aug,
                             bool hard, SeedStream ts) {
  ProtocolOutput out;
  const int length = context.length();
  TokenGrid ctx = tokenize(context);
  Model::DecodeResult gen = model.generate(ctx, n_aug - 1, ts.fork("noise"));
  std::vector<AlignedRow> rows;
  if (hard) {
    SeedStream tk = ts.fork("tokens");
    rows = detokenize(gen.logits, DetokenizeMode::kSample, &tk);
  } else {
    rows = detokenize(gen.logits, DetokenizeMode::kArgmax);
  }
  out.msa.rows.push_back(context.query());
  for (AlignedRow& r : rows) out.msa.rows.push_back(std::move(r));

  out.grid = empty_grid(n_aug, length, context.query().symbols);
  TokenGrid all = tokenize(out.msa);
  write_one_hot_row(out.grid, 0, all, 0);
  if (hard) {
    for (int r = 1; r < n_aug; ++r) write_one_hot_row(out.grid, r, all, r);
  } else {
    Tensor probs = softmax(gen.logits.aa, -1);
    std::span<const double> p = probs.data();
    const std::size_t row_elems = static_cast<std::size_t>(length) * kVocabSize;
    for (std::size_t e = 0; e < p.size(); ++e)
      out.grid.probs[row_elems + e] = static_cast<float>(p[e]);
  }
  return out;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }
};

}  // namespace

std::string trial_manifest_json(std::span<const TrialRecord> records) {
  json arr = json::array();
  for (const TrialRecord& r : records) {
    json o;
    o["protocol"] = r.protocol;
    o["r_ctx"] = r.r_ctx;
    o["n_rows"] = r.n_rows;
    o["trial"] = r.trial;
    o["seed"] = std::to_string(r.seed);  // string: preserves all 64 bits
    o["confidence"] = r.confidence;
    o["note"] = r.note;
    arr.push_back(std::move(o));
  }
  return arr.dump(2) + "\n";
}

CalibrationResult calibrate(const Msa& msa, const Model& model,
                            const CalibrationConfig& cfg) {
  if (msa.depth() < 1) throw std::invalid_argument("empty alignment");
  if (cfg.trials < 1 || cfg.r_ctx.empty())
    throw std::invalid_argument("need at least one fraction and one trial");
  CalibrationResult result;
  SeedStream root("calibrate", cfg.seed);
  if (msa.depth() < 2) {
    ProtocolOutput out;
    out.meta = {"calibrate", 1.0, msa.depth(), 0, stream_fingerprint(root), -1.0,
                "too shallow to rewrite; passthrough"};
    out.msa = msa;
    out.grid = features_from_grid(tokenize(msa), msa.query().symbols);
    result.outputs.push_back(std::move(out));
    result.depth_too_small = true;
    return result;
  }
  for (std::size_t ri = 0; ri < cfg.r_ctx.size(); ++ri) {
    for (int t = 0; t < cfg.trials; ++t) {
      SeedStream ts = root.fork("r", ri).fork("trial", static_cast<std::uint64_t>(t));
      const std::uint64_t fp = stream_fingerprint(ts);
      RewriteOut rw = rewrite_rows(msa, model, cfg.r_ctx[ri], cfg.hard_tokens,
                                   std::move(ts));
      ProtocolOutput out;
      out.meta = {"calibrate", cfg.r_ctx[ri], msa.depth(), t, fp, -1.0,
                  rw.passthrough ? "all rows in context; passthrough" : ""};
      out.msa = std::move(rw.msa);
      out.grid = std::move(rw.grid);
      result.outputs.push_back(std::move(out));
    }
  }
  return result;
}

std::vector<ProtocolOutput> augment(const Msa& msa, const Model& model,
                                    const AugmentationConfig& cfg) {
  if (msa.depth() < 1) throw std::invalid_argument("empty alignment");
  if (cfg.n_aug < 2) throw std::invalid_argument("n_aug must be at least 2");
  if (cfg.trials < 1 || cfg.r_ctx.empty())
    throw std::invalid_argument("need at least one fraction and one trial");
  std::vector<ProtocolOutput> outputs;
  SeedStream root("augment", cfg.seed);
  for (std::size_t ri = 0; ri < cfg.r_ctx.size(); ++ri) {
    for (int t = 0; t < cfg.trials; ++t) {
      SeedStream ts = root.fork("r", ri).fork("trial", static_cast<std::uint64_t>(t));
      const std::uint64_t fp = stream_fingerprint(ts);
      Msa context;
      if (msa.depth() >= 2) {
        const ContextTargetSplit split = split_context_target(
            msa.depth(), cfg.r_ctx[ri], ts.fork("ctxpick").next_u64());
        context = subsample_rows(msa, split.context);
      } else {
        context = msa;
      }
      ProtocolOutput out =
          generate_rows(context, model, cfg.n_aug, cfg.hard_tokens, std::move(ts));
      out.meta = {"augment", cfg.r_ctx[ri], cfg.n_aug, t, fp, -1.0,
                  "context_rows=" + std::to_string(context.depth())};
      outputs.push_back(std::move(out));
    }
  }
  return outputs;
}

std::vector<ProtocolOutput> zero_shot(const std::string& query, const Model& model,
                                      const ZeroShotConfig& cfg) {
  if (query.empty()) throw DataError("empty query sequence");
  AlignedRow qrow;
  qrow.header = "query";
  qrow.symbols.reserve(query.size());
  for (char c : query) {
    if (c < 'A' || c > 'Z') throw DataError("query must be uppercase residue letters");
    qrow.symbols.push_back(canonical_symbol(c));
  }
  qrow.deletions.assign(query.size(), 0);
  Msa base;
  base.rows.push_back(std::move(qrow));

  if (cfg.trials < 1 || cfg.n_aug.empty())
    throw std::invalid_argument("need at least one size and one trial");
  std::vector<ProtocolOutput> outputs;
  SeedStream root("zeroshot", cfg.seed);
  for (std::size_t ni = 0; ni < cfg.n_aug.size(); ++ni) {
    const int n = cfg.n_aug[ni];
    if (n < 2) throw std::invalid_argument("n_aug entries must be at least 2");
    for (int t = 0; t < cfg.trials; ++t) {
      SeedStream ts = root.fork("n", ni).fork("trial", static_cast<std::uint64_t>(t));
      const std::uint64_t fp = stream_fingerprint(ts);
      ProtocolOutput out = generate_rows(base, model, n, cfg.hard_tokens, std::move(ts));
      out.meta = {"zeroshot", 1.0, n, t, fp, -1.0, ""};
      outputs.push_back(std::move(out));
    }
  }
  return outputs;
}

std::vector<int> rank_by_confidence(std::span<const double> confidences) {
  std::vector<int> idx(confidences.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return confidences[static_cast<std::size_t>(a)] >
           confidences[static_cast<std::size_t>(b)];
  });
  return idx;
}

double profile_similarity(const FeatureGrid& a, const FeatureGrid& b) {
  if (a.length != b.length || a.length < 1)
    throw std::invalid_argument("grids must share a positive length");
  double tv_sum = 0.0;
  for (int c = 0; c < a.length; ++c) {
    double tv = 0.0;
    for (int v = 0; v < kVocabSize; ++v) {
      double pa = 0.0, pb = 0.0;
      for (int r = 0; r < a.rows; ++r)
        pa += a.probs[(static_cast<std::size_t>(r) * a.length + c) * kVocabSize + v];
      for (int r = 0; r < b.rows; ++r)
        pb += b.probs[(static_cast<std::size_t>(r) * b.length + c) * kVocabSize + v];
      tv += std::fabs(pa / a.rows - pb / b.rows);
    }
    tv_sum += 0.5 * tv;
  }
  return 1.0 - tv_sum / a.length;
}

ProbeResult probe(const Msa& msa, const Model& model, const Critic& critic,
                  const ProbeConfig& cfg, const SimilarityFn& similarity) {
  if (cfg.n_max.empty() || cfg.n_sub.empty() || cfg.r_ctx.empty() || cfg.trials < 1)
    throw std::invalid_argument("need at least one cap, subset size, fraction and trial");
  const int min_sub = *std::min_element(cfg.n_sub.begin(), cfg.n_sub.end());
  if (min_sub < 2) throw std::invalid_argument("subset sizes must be >= 2");
  if (*std::max_element(cfg.n_sub.begin(), cfg.n_sub.end()) >
      *std::min_element(cfg.n_max.begin(), cfg.n_max.end()))
    throw std::invalid_argument("every subset size must fit under every depth cap");
  ProbeResult result;
  const SimilarityFn sim = similarity ? similarity : profile_similarity;
  SeedStream root("probe", cfg.seed);
  for (std::size_t mi = 0; mi < cfg.n_max.size(); ++mi) {
    TrimConfig tc;
    tc.n_max = cfg.n_max[mi];
    const Msa trimmed = trim(msa, tc);
    if (trimmed.depth() < min_sub)
      throw DataError("alignment too shallow to probe: " +
                      std::to_string(trimmed.depth()) + " rows < smallest subset " +
                      std::to_string(min_sub));
    for (std::size_t si = 0; si < cfg.n_sub.size(); ++si) {
      const int ns = std::min(cfg.n_sub[si], trimmed.depth());
      for (std::size_t rj = 0; rj < cfg.r_ctx.size(); ++rj) {
        for (int t = 0; t < cfg.trials; ++t) {
          SeedStream ts = root.fork("nmax", mi).fork("sub", si).fork("r", rj)
                              .fork("trial", static_cast<std::uint64_t>(t));
          const std::uint64_t fp = stream_fingerprint(ts);
          // Random subset: query plus ns - 1 distinct other rows.
          std::vector<int> pool(static_cast<std::size_t>(trimmed.depth() - 1));
          std::iota(pool.begin(), pool.end(), 1);
          SeedStream rows_stream = ts.fork("rows");
          for (int i = 0; i < ns - 1; ++i) {
            const auto j = i + static_cast<int>(rows_stream.uniform_int(pool.size() - static_cast<std::size_t>(i)));
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
          }
          std::vector<int> keep(pool.begin(), pool.begin() + (ns - 1));
          std::sort(keep.begin(), keep.end());
          keep.insert(keep.begin(), 0);
          const Msa sub = subsample_rows(trimmed, keep);

          RewriteOut rw = rewrite_rows(sub, model, cfg.r_ctx[rj], /*hard=*/false,
                                       std::move(ts));
          ProbeItem item;
          item.report = critic.score(rw.grid);
          item.grid = std::move(rw.grid);
          item.meta = {"probe", cfg.r_ctx[rj], ns, t, fp, item.report.confidence,
                       "n_max=" + std::to_string(cfg.n_max[mi]) +
                           (rw.passthrough ? ";passthrough" : "")};
          result.items.push_back(std::move(item));
        }
      }
    }
  }

  // Single-linkage grouping of the confident rewrites.
  std::vector<int> confident;
  for (std::size_t i = 0; i < result.items.size(); ++i)
    if (result.items[i].report.confidence >= cfg.confidence_min)
      confident.push_back(static_cast<int>(i));
  UnionFind uf(static_cast<int>(confident.size()));
  for (std::size_t i = 0; i < confident.size(); ++i)
    for (std::size_t j = i + 1; j < confident.size(); ++j)
      if (sim(result.items[static_cast<std::size_t>(confident[i])].grid,
              result.items[static_cast<std::size_t>(confident[j])].grid) >=
          cfg.similarity_threshold)
        uf.unite(static_cast<int>(i), static_cast<int>(j));
  std::map<int, std::vector<int>> groups;
  for (std::size_t i = 0; i < confident.size(); ++i)
    groups[uf.find(static_cast<int>(i))].push_back(confident[i]);
  for (auto& kv : groups) result.ensembles.push_back(kv.second);
  std::stable_sort(result.ensembles.begin(), result.ensembles.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return result;
}

}  // namespace evogen
