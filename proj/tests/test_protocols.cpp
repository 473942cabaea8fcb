#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "evogen/critic.hpp"
#include "evogen/errors.hpp"
#include "evogen/model.hpp"
#include "evogen/protocols.hpp"
#include "evogen/random.hpp"

#include "support.hpp"

using namespace evogen;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.n_enc_blocks = 1;
  c.n_dec_blocks = 1;
  c.c_s = 8;
  c.c_p = 4;
  c.heads = 2;
  c.latent_dims = {2};
  c.latent_hidden = 4;
  c.num_buckets = 8;
  c.max_distance = 16;
  c.transition_factor = 1;
  c.opm_dim = 2;
  return c;
}

int unchanged_rows(const Msa& out, const Msa& in) {
  int n = 0;
  for (std::size_t r = 0; r < in.rows.size(); ++r)
    if (out.rows[r].symbols == in.rows[r].symbols &&
        out.rows[r].deletions == in.rows[r].deletions)
      ++n;
  return n;
}

// Every cell of every listed row sums to ~1 over the vocabulary.
void check_normalized(const FeatureGrid& g) {
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.length; ++c) {
      double total = 0.0;
      for (int v = 0; v < kVocabSize; ++v)
        total += g.probs[(static_cast<std::size_t>(r) * g.length + c) * kVocabSize + v];
      CHECK(total == doctest::Approx(1.0).epsilon(1e-4));
    }
}

bool is_one_hot_row(const FeatureGrid& g, int r) {
  for (int c = 0; c < g.length; ++c) {
    int ones = 0;
    for (int v = 0; v < kVocabSize; ++v) {
      const float p =
          g.probs[(static_cast<std::size_t>(r) * g.length + c) * kVocabSize + v];
      if (p == 1.0f)
        ++ones;
      else if (p != 0.0f)
        return false;
    }
    if (ones != 1) return false;
  }
  return true;
}

// Scores a grid against two reference profiles and reports whichever side the
// grid sits closer to.  Confidence has two separate peaks.
class TwoBasinCritic final : public Critic {
 public:
  TwoBasinCritic(std::vector<int> a, std::vector<int> b)
      : a_(synthetic_critic(std::move(a))), b_(synthetic_critic(std::move(b))) {}

  CriticReport score_dense(std::span<const double> probs, int rows,
                           int length) const override {
    const CriticReport ra = a_->score_dense(probs, rows, length);
    const CriticReport rb = b_->score_dense(probs, rows, length);
    return ra.confidence >= rb.confidence ? ra : rb;
  }

  CriticReport grad_dense(std::span<const double> probs, int rows, int length,
                          const ChannelWeights& weights,
                          std::span<double> grad_out) const override {
    const CriticReport ra = a_->score_dense(probs, rows, length);
    const CriticReport rb = b_->score_dense(probs, rows, length);
    return (ra.confidence >= rb.confidence ? a_ : b_)
        ->grad_dense(probs, rows, length, weights, grad_out);
  }

 private:
  std::unique_ptr<Critic> a_, b_;
};

Msa two_family_msa(int length, int a_rows, int b_rows) {
  Msa m;
  auto push = [&](const std::string& name, char ch) {
    AlignedRow r;
    r.header = name;
    r.symbols.assign(static_cast<std::size_t>(length), ch);
    r.deletions.assign(static_cast<std::size_t>(length), 0);
    m.rows.push_back(std::move(r));
  };
  push("query", 'A');
  for (int i = 0; i < a_rows; ++i) push("a" + std::to_string(i), 'A');
  for (int i = 0; i < b_rows; ++i) push("b" + std::to_string(i), 'W');
  return m;
}

}  // namespace

TEST_CASE("rewrite calibration: verbatim context, rewritten remainder") {
  const Model model(tiny(), 3);
  SeedStream s("cal-msa", 1);
  const Msa msa = testsupport::random_msa(s, 6, 10);

  CalibrationConfig cfg;
  cfg.r_ctx = {0.5};
  cfg.trials = 3;
  cfg.seed = 11;
  const CalibrationResult res = calibrate(msa, model, cfg);
  REQUIRE(res.outputs.size() == 3);
  CHECK(!res.depth_too_small);

  for (const ProtocolOutput& out : res.outputs) {
    CHECK(out.meta.protocol == "calibrate");
    CHECK(out.meta.r_ctx == 0.5);
    CHECK(out.meta.n_rows == 6);
    CHECK(out.msa.depth() == 6);
    CHECK(out.msa.length() == 10);
    // The query heads the alignment untouched; the context stays verbatim.
    CHECK(out.msa.rows[0] == msa.rows[0]);
    CHECK(unchanged_rows(out.msa, msa) >= 3);
    CHECK(unchanged_rows(out.msa, msa) < 6);  // something was rewritten
    CHECK(out.grid.rows == 6);
    CHECK(out.grid.query == msa.query().symbols);
    check_normalized(out.grid);
  }
}

TEST_CASE("rewrite calibration is a passthrough when everything is context") {
  const Model model(tiny(), 3);
  SeedStream s("cal-full", 2);
  const Msa msa = testsupport::random_msa(s, 5, 8);

  CalibrationConfig cfg;
  cfg.r_ctx = {1.0};
  cfg.trials = 2;
  const CalibrationResult res = calibrate(msa, model, cfg);
  REQUIRE(res.outputs.size() == 2);
  for (const ProtocolOutput& out : res.outputs) {
    CHECK(out.msa == msa);
    CHECK(out.meta.note.find("passthrough") != std::string::npos);
    for (int r = 0; r < 5; ++r) CHECK(is_one_hot_row(out.grid, r));
  }
}

TEST_CASE("rewrite calibration flags single-row alignments") {
  const Model model(tiny(), 3);
  Msa lone;
  lone.rows.push_back({"q", "ACDEFGH", std::vector<int>(7, 0)});
  const CalibrationResult res = calibrate(lone, model, CalibrationConfig{});
  CHECK(res.depth_too_small);
  REQUIRE(res.outputs.size() == 1);
  CHECK(res.outputs[0].msa == lone);
  CHECK(res.outputs[0].meta.note.find("passthrough") != std::string::npos);

  CHECK_THROWS(calibrate(Msa{}, model, CalibrationConfig{}));
  CalibrationConfig bad;
  bad.r_ctx = {};
  SeedStream s("cal-bad", 3);
  CHECK_THROWS(calibrate(testsupport::random_msa(s, 4, 6), model, bad));
}

TEST_CASE("identical settings replay identical calibration outputs") {
  const Model model(tiny(), 5);
  SeedStream s("cal-det", 4);
  const Msa msa = testsupport::random_msa(s, 7, 9);

  CalibrationConfig cfg;
  cfg.r_ctx = {0.4, 0.7};
  cfg.trials = 2;
  cfg.seed = 21;
  const CalibrationResult a = calibrate(msa, model, cfg);
  const CalibrationResult b = calibrate(msa, model, cfg);
  REQUIRE(a.outputs.size() == b.outputs.size());
  for (std::size_t i = 0; i < a.outputs.size(); ++i) {
    CHECK(a.outputs[i].msa == b.outputs[i].msa);
    CHECK(a.outputs[i].grid == b.outputs[i].grid);
    CHECK(a.outputs[i].meta.seed == b.outputs[i].meta.seed);
  }

  CalibrationConfig other = cfg;
  other.seed = 22;
  const CalibrationResult c = calibrate(msa, model, other);
  bool any_differs = false;
  for (std::size_t i = 0; i < a.outputs.size(); ++i)
    any_differs = any_differs || !(a.outputs[i].msa == c.outputs[i].msa);
  CHECK(any_differs);

  // Hard mode emits strictly one-hot grids.
  CalibrationConfig hard = cfg;
  hard.hard_tokens = true;
  for (const ProtocolOutput& out : calibrate(msa, model, hard).outputs)
    for (int r = 0; r < out.grid.rows; ++r) CHECK(is_one_hot_row(out.grid, r));
}

TEST_CASE("generative deepening emits query-led alignments of the asked size") {
  const Model model(tiny(), 7);
  SeedStream s("aug-msa", 5);
  const Msa msa = testsupport::random_msa(s, 5, 8);

  AugmentationConfig cfg;
  cfg.n_aug = 6;
  cfg.r_ctx = {0.5, 0.9};
  cfg.trials = 2;
  cfg.seed = 31;
  const auto outs = augment(msa, model, cfg);
  REQUIRE(outs.size() == 4);
  for (const ProtocolOutput& out : outs) {
    CHECK(out.meta.protocol == "augment");
    CHECK(out.meta.n_rows == 6);
    CHECK(out.msa.depth() == 6);
    CHECK(out.msa.rows[0].symbols == msa.query().symbols);
    CHECK(out.msa.length() == msa.length());
    CHECK(out.grid.rows == 6);
    CHECK(is_one_hot_row(out.grid, 0));  // the query row stays exact
    check_normalized(out.grid);
    CHECK(out.meta.note.find("context_rows=") != std::string::npos);
  }

  const auto again = augment(msa, model, cfg);
  for (std::size_t i = 0; i < outs.size(); ++i) CHECK(outs[i].msa == again[i].msa);

  AugmentationConfig bad = cfg;
  bad.n_aug = 1;
  CHECK_THROWS(augment(msa, model, bad));
}

TEST_CASE("zero-shot generation works from a bare sequence and validates it") {
  const Model model(tiny(), 9);
  ZeroShotConfig cfg;
  cfg.n_aug = {4, 6};
  cfg.trials = 2;
  cfg.seed = 41;
  const auto outs = zero_shot("ACDEFGHIKL", model, cfg);
  REQUIRE(outs.size() == 4);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const ProtocolOutput& out = outs[i];
    CHECK(out.meta.protocol == "zeroshot");
    const int want_rows = i < 2 ? 4 : 6;
    CHECK(out.msa.depth() == want_rows);
    CHECK(out.grid.rows == want_rows);
    CHECK(out.msa.rows[0].symbols == "ACDEFGHIKL");
    CHECK(out.msa.length() == 10);
    check_normalized(out.grid);
  }

  // Rare residues collapse to 'X'; anything else is refused.
  const auto rare = zero_shot("ABZ", model, ZeroShotConfig{{2}, 1, false, 0});
  CHECK(rare[0].msa.rows[0].symbols == "AXX");
  CHECK_THROWS_AS((void)zero_shot("AC-DE", model, cfg), DataError);
  CHECK_THROWS_AS((void)zero_shot("acde", model, cfg), DataError);
  CHECK_THROWS_AS((void)zero_shot("", model, cfg), DataError);
  ZeroShotConfig bad = cfg;
  bad.n_aug = {1};
  CHECK_THROWS(zero_shot("ACDE", model, bad));
}

TEST_CASE("confidence ranking is stable, descending, and scale-free") {
  const std::vector<double> conf = {10.0, 80.0, 80.0, 5.0, 90.0};
  CHECK(rank_by_confidence(conf) == std::vector<int>{4, 1, 2, 0, 3});

  // Any strictly increasing transform leaves the ranking unchanged.
  std::vector<double> squashed;
  for (double c : conf) squashed.push_back(std::tanh(c / 25.0) * 3.0 - 1.0);
  CHECK(rank_by_confidence(squashed) == rank_by_confidence(conf));

  CHECK(rank_by_confidence(std::vector<double>{}) == std::vector<int>{});
  CHECK(rank_by_confidence(std::vector<double>{7.0}) == std::vector<int>{0});
}

TEST_CASE("profile similarity is a bounded symmetric overlap score") {
  FeatureGrid a;
  a.rows = 2;
  a.length = 3;
  a.query = "ACD";
  a.probs.assign(2 * 3 * kVocabSize, 0.0f);
  auto set_row = [](FeatureGrid& g, int r, int tok) {
    for (int c = 0; c < g.length; ++c)
      g.probs[(static_cast<std::size_t>(r) * g.length + c) * kVocabSize + tok] = 1.0f;
  };
  set_row(a, 0, 0);
  set_row(a, 1, 0);

  FeatureGrid b = a;
  CHECK(profile_similarity(a, b) == doctest::Approx(1.0).epsilon(1e-7));

  // Disjoint support: zero similarity.
  FeatureGrid c = a;
  std::fill(c.probs.begin(), c.probs.end(), 0.0f);
  set_row(c, 0, 5);
  set_row(c, 1, 5);
  CHECK(profile_similarity(a, c) == doctest::Approx(0.0).epsilon(1e-7));

  // Half the rows moved: similarity one half.
  FeatureGrid d = a;
  std::fill(d.probs.begin(), d.probs.end(), 0.0f);
  set_row(d, 0, 0);
  set_row(d, 1, 5);
  CHECK(profile_similarity(a, d) == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(profile_similarity(d, a) == doctest::Approx(0.5).epsilon(1e-7));

  // Row counts may differ; lengths may not.
  FeatureGrid e;
  e.rows = 1;
  e.length = 3;
  e.query = "ACD";
  e.probs.assign(1 * 3 * kVocabSize, 0.0f);
  set_row(e, 0, 0);
  CHECK(profile_similarity(a, e) == doctest::Approx(1.0).epsilon(1e-7));
  FeatureGrid f = e;
  f.length = 2;
  f.probs.resize(2 * kVocabSize);
  CHECK_THROWS(profile_similarity(a, f));
}

TEST_CASE("subset probing sweeps its grids and partitions confident rewrites") {
  const Model model(tiny(), 13);
  SeedStream s("probe-msa", 6);
  const Msa msa = testsupport::random_msa(s, 10, 8);
  const auto critic = synthetic_critic(
      std::vector<int>(8, 0));  // all-alanine reference profile

  ProbeConfig cfg;
  cfg.n_max = {8, 10};
  cfg.n_sub = {3, 4};
  cfg.r_ctx = {0.5};
  cfg.trials = 2;
  cfg.confidence_min = 0.0;  // keep everything; partition must cover all items
  cfg.seed = 51;
  const ProbeResult res = probe(msa, model, *critic, cfg);
  REQUIRE(res.items.size() == 2 * 2 * 1 * 2);

  for (const ProbeItem& item : res.items) {
    CHECK(item.meta.protocol == "probe");
    CHECK((item.meta.n_rows == 3 || item.meta.n_rows == 4));
    CHECK(item.grid.rows == item.meta.n_rows);
    CHECK(item.grid.query == msa.query().symbols);
    CHECK(item.meta.note.find("n_max=") != std::string::npos);
    CHECK(item.meta.confidence == item.report.confidence);
  }

  // The ensembles partition the confident item indices exactly.
  std::set<int> seen;
  std::size_t covered = 0;
  for (const auto& group : res.ensembles) {
    for (int idx : group) {
      CHECK(seen.insert(idx).second);
      ++covered;
    }
  }
  CHECK(covered == res.items.size());
  for (std::size_t g = 1; g < res.ensembles.size(); ++g)
    CHECK(res.ensembles[g - 1].size() >= res.ensembles[g].size());

  // Determinism of the whole sweep.
  const ProbeResult again = probe(msa, model, *critic, cfg);
  CHECK(again.ensembles == res.ensembles);
  REQUIRE(again.items.size() == res.items.size());
  for (std::size_t i = 0; i < res.items.size(); ++i) {
    CHECK(again.items[i].grid == res.items[i].grid);
    CHECK(again.items[i].report.confidence == res.items[i].report.confidence);
  }

  // Pools shallower than the smallest subset size are a data error.
  ProbeConfig deep = cfg;
  deep.n_sub = {16, 32};
  deep.n_max = {64};
  CHECK_THROWS_AS((void)probe(msa, model, *critic, deep), DataError);

  // Grid mistakes are configuration errors.
  ProbeConfig bad = cfg;
  bad.n_sub = {};
  CHECK_THROWS_AS((void)probe(msa, model, *critic, bad), std::invalid_argument);
  ProbeConfig bad2 = cfg;
  bad2.n_sub = {12};
  bad2.n_max = {8};
  CHECK_THROWS_AS((void)probe(msa, model, *critic, bad2), std::invalid_argument);
}

TEST_CASE("a custom similarity controls the grouping") {
  const Model model(tiny(), 13);
  SeedStream s("probe-sim", 7);
  const Msa msa = testsupport::random_msa(s, 8, 6);
  const auto critic = synthetic_critic(std::vector<int>(6, 0));

  ProbeConfig cfg;
  cfg.n_max = {8};
  cfg.n_sub = {3};
  cfg.r_ctx = {0.5};
  cfg.trials = 4;
  cfg.confidence_min = 0.0;
  cfg.seed = 61;

  // Nothing alike: every item is its own ensemble.
  const ProbeResult apart =
      probe(msa, model, *critic, cfg,
            [](const FeatureGrid&, const FeatureGrid&) { return 0.0; });
  CHECK(apart.ensembles.size() == 4);

  // Everything alike: one ensemble holding all items.
  const ProbeResult together =
      probe(msa, model, *critic, cfg,
            [](const FeatureGrid&, const FeatureGrid&) { return 1.0; });
  REQUIRE(together.ensembles.size() == 1);
  CHECK(together.ensembles[0].size() == 4);
}

TEST_CASE("an alignment with two subfamilies probes into multiple ensembles") {
  // Two internally identical families: 'A' rows (with the query) and 'W' rows.
  // Subsets land with different family mixes; their verbatim context rows pull
  // the rewritten grids toward different profiles, and a critic with a basin
  // around each family keeps both kinds confident.
  const Msa msa = two_family_msa(8, 5, 6);
  const Model model(tiny(), 17);
  const TwoBasinCritic critic(std::vector<int>(8, token_id('A')),
                              std::vector<int>(8, token_id('W')));

  ProbeConfig cfg;
  cfg.n_max = {12};
  cfg.n_sub = {6};
  cfg.r_ctx = {0.9};  // five verbatim rows, one rewritten
  cfg.trials = 16;
  cfg.similarity_threshold = 0.9;
  cfg.confidence_min = 0.0;
  cfg.seed = 71;
  const ProbeResult res = probe(msa, model, critic, cfg);
  REQUIRE(res.items.size() == 16);

  CHECK(res.ensembles.size() >= 2);

  // The grouping is driven by family mix: grids in one ensemble agree more
  // with each other than the two largest ensembles agree across.
  REQUIRE(res.ensembles[0].size() >= 2);
  const auto& g0 = res.ensembles[0];
  const auto& g1 = res.ensembles[1];
  const double within = profile_similarity(res.items[static_cast<std::size_t>(g0[0])].grid,
                                           res.items[static_cast<std::size_t>(g0[1])].grid);
  const double across = profile_similarity(res.items[static_cast<std::size_t>(g0[0])].grid,
                                           res.items[static_cast<std::size_t>(g1[0])].grid);
  CHECK(within > across);
}
