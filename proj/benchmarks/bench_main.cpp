// Microbenchmarks for the hot paths: featurization, curation, attention
// kernels, the posterior round trip (forward and backward), generation, and
// critic scoring.  Run the binary directly; it is not part of ctest.

#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "evogen/critic.hpp"
#include "evogen/featurize.hpp"
#include "evogen/hyperformer.hpp"
#include "evogen/model.hpp"
#include "evogen/msa.hpp"
#include "evogen/params.hpp"
#include "evogen/random.hpp"
#include "evogen/tensor.hpp"
#include "evogen/training.hpp"
#include "evogen/trim.hpp"

namespace {

using namespace evogen;

const std::string kResidues = "ACDEFGHIKLMNPQRSTVWY";

Msa random_msa(SeedStream& s, int depth, int length) {
  Msa m;
  for (int r = 0; r < depth; ++r) {
    AlignedRow row;
    row.header = "row" + std::to_string(r);
    for (int c = 0; c < length; ++c) {
      if (r > 0 && s.uniform() < 0.15) {
        row.symbols.push_back('-');
      } else {
        row.symbols.push_back(kResidues[s.uniform_int(20)]);
      }
      row.deletions.push_back(r > 0 && s.uniform() < 0.05 ? 1 : 0);
    }
    m.rows.push_back(std::move(row));
  }
  for (int c = 0; c < length; ++c) m.rows[0].deletions[static_cast<std::size_t>(c)] = 0;
  return m;
}

Tensor random_tensor(SeedStream& s, Shape shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) n *= e;
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = s.normal();
  return Tensor::constant(std::move(shape), std::move(v));
}

ModelConfig bench_config() {
  ModelConfig c;
  c.n_enc_blocks = 2;
  c.n_dec_blocks = 2;
  c.c_s = 32;
  c.c_p = 16;
  c.heads = 2;
  c.latent_dims = {8};
  c.latent_hidden = 32;
  c.transition_factor = 2;
  c.opm_dim = 8;
  return c;
}

void bm_tokenize(benchmark::State& state) {
  SeedStream s("bench-tok");
  const Msa msa = random_msa(s, 64, 128);
  for (auto _ : state) benchmark::DoNotOptimize(tokenize(msa));
}
BENCHMARK(bm_tokenize);

void bm_trim(benchmark::State& state) {
  SeedStream s("bench-trim");
  const Msa msa = random_msa(s, 300, 60);
  TrimConfig cfg;
  cfg.n_max = 64;
  for (auto _ : state) benchmark::DoNotOptimize(trim(msa, cfg));
}
BENCHMARK(bm_trim);

void bm_relpos_bucket(benchmark::State& state) {
  for (auto _ : state) {
    int acc = 0;
    for (int i = 0; i < 128; ++i)
      for (int j = 0; j < 128; ++j) acc += relpos_bucket(i, j);
    benchmark::DoNotOptimize(acc);
  }
}
BENCHMARK(bm_relpos_bucket);

void bm_rope(benchmark::State& state) {
  SeedStream s("bench-rope");
  const Tensor x = random_tensor(s, {8, 64, 32});
  for (auto _ : state) benchmark::DoNotOptimize(rope(x, 1e4));
}
BENCHMARK(bm_rope);

void bm_attention(benchmark::State& state) {
  SeedStream s("bench-attn");
  const Tensor q = random_tensor(s, {4, 64, 32});
  const Tensor k = random_tensor(s, {4, 64, 32});
  const Tensor v = random_tensor(s, {4, 64, 32});
  const Tensor bias = random_tensor(s, {4, 64, 64});
  for (auto _ : state)
    benchmark::DoNotOptimize(hyper_attention(q, k, v, bias, true, 1e4));
}
BENCHMARK(bm_attention);

void bm_elbo_forward(benchmark::State& state) {
  const Model model(bench_config(), 1);
  SeedStream s("bench-elbo");
  const Msa msa = random_msa(s, 16, 48);
  const TokenGrid ctx = tokenize_rows(msa, {0, 1, 2, 3, 4, 5, 6, 7});
  const TokenGrid tgt = tokenize_rows(msa, {8, 9, 10, 11, 12, 13, 14, 15});
  for (auto _ : state)
    benchmark::DoNotOptimize(model.elbo(ctx, tgt, 1.0, SeedStream("bench-noise")));
}
BENCHMARK(bm_elbo_forward);

void bm_elbo_backward(benchmark::State& state) {
  Model model(bench_config(), 1);
  SeedStream s("bench-elbo-b");
  const Msa msa = random_msa(s, 16, 48);
  const TokenGrid ctx = tokenize_rows(msa, {0, 1, 2, 3, 4, 5, 6, 7});
  const TokenGrid tgt = tokenize_rows(msa, {8, 9, 10, 11, 12, 13, 14, 15});
  for (auto _ : state) {
    const Model::ElboResult res = model.elbo(ctx, tgt, 1.0, SeedStream("bench-noise"));
    benchmark::DoNotOptimize(collect_grads(res.total, model.params()));
  }
}
BENCHMARK(bm_elbo_backward);

void bm_generate(benchmark::State& state) {
  const Model model(bench_config(), 1);
  SeedStream s("bench-gen");
  const Msa msa = random_msa(s, 4, 48);
  const TokenGrid ctx = tokenize(msa);
  for (auto _ : state)
    benchmark::DoNotOptimize(model.generate(ctx, 16, SeedStream("bench-noise")));
}
BENCHMARK(bm_generate);

void bm_critic_grad(benchmark::State& state) {
  SeedStream s("bench-critic");
  const int rows = 32, length = 48;
  std::vector<int> profile;
  for (int c = 0; c < length; ++c)
    profile.push_back(static_cast<int>(s.uniform_int(20)));
  const auto critic = synthetic_critic(profile);
  std::vector<double> probs(static_cast<std::size_t>(rows * length) * kVocabSize);
  for (double& p : probs) p = s.uniform();
  std::vector<double> grad(probs.size());
  for (auto _ : state)
    benchmark::DoNotOptimize(
        critic->grad_dense(probs, rows, length, ChannelWeights{}, grad));
}
BENCHMARK(bm_critic_grad);

}  // namespace

BENCHMARK_MAIN();
