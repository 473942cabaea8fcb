#include "evogen/critic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "evogen/tensor.hpp"

namespace evogen {

CriticReport Critic::score(const FeatureGrid& grid) const {
  std::vector<double> dense(grid.probs.begin(), grid.probs.end());
  return score_dense(dense, grid.rows, grid.length);
}

namespace {

using i64 = std::int64_t;

class SyntheticCritic final : public Critic {
 public:
  SyntheticCritic(std::vector<int> profile, ChannelWeights weights)
      : profile_(std::move(profile)), weights_(weights) {
    for (int t : profile_)
      if (t < 0 || t >= kVocabSize)
        throw std::invalid_argument("profile token out of range");
  }

  CriticReport score_dense(std::span<const double> probs, int rows,
                           int length) const override {
    return evaluate(probs, rows, length, weights_, nullptr);
  }

  CriticReport grad_dense(std::span<const double> probs, int rows, int length,
                          const ChannelWeights& weights,
                          std::span<double> grad_out) const override {
    return evaluate(probs, rows, length, weights, &grad_out);
  }

 private:
  CriticReport evaluate(std::span<const double> probs, int rows, int length,
                        const ChannelWeights& w, std::span<double>* grad_out) const {
    if (length != static_cast<int>(profile_.size()))
      throw std::invalid_argument("grid length does not match the profile");
    if (static_cast<i64>(probs.size()) != static_cast<i64>(rows) * length * kVocabSize)
      throw std::invalid_argument("dense grid size mismatch");
    if (grad_out && grad_out->size() != probs.size())
      throw std::invalid_argument("gradient buffer size mismatch");

    // Internal graph: differentiably smooth the cells away from exact zeros,
    // then reduce.  Backward on the folded scalar yields the grid gradient.
    Tensor p = Tensor::param({rows, length, kVocabSize},
                             std::vector<double>(probs.begin(), probs.end()));
    constexpr double kEps = 1e-8;
    Tensor ps = mul(add(p, kEps), 1.0 / (1.0 + kVocabSize * kEps));
    Tensor oh = reshape(one_hot(profile_, kVocabSize), {1, length, kVocabSize});
    Tensor match = sum(mul(oh, log(ps)), -1);           // [rows, length]
    Tensor fape = neg(mean_all(match));
    Tensor diff = ps - oh;
    Tensor torsion = mean_all(sum(mul(diff, diff), -1));
    Tensor violation = mean_all(slice(ps, -1, kGapToken, kGapToken + 1));
    Tensor conf_pen = add(neg(exp(neg(fape))), 1.0);    // 1 - exp(-fape)
    Tensor total = mul(fape, w.fape) + mul(torsion, w.torsion) +
                   mul(violation, w.violation) + mul(conf_pen, w.confidence);

    CriticReport r;
    r.channels["fape_like"] = fape.item();
    r.channels["torsion_like"] = torsion.item();
    r.channels["violation_like"] = violation.item();
    r.channels["confidence_like"] = conf_pen.item();
    r.confidence = 100.0 * std::exp(-fape.item());
    r.weighted_total = total.item();
    if (grad_out) {
      backward(total);
      std::span<const double> g = p.grad();
      std::copy(g.begin(), g.end(), grad_out->begin());
    }
    return r;
  }

  std::vector<int> profile_;
  ChannelWeights weights_;
};

}  // namespace

std::unique_ptr<Critic> synthetic_critic(std::vector<int> profile_tokens,
                                         ChannelWeights weights) {
  return std::make_unique<SyntheticCritic>(std::move(profile_tokens), weights);
}

}  // namespace evogen
