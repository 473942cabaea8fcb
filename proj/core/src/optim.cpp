#include "evogen/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace evogen {

double global_norm(const GradMap& grads) {
  double sq = 0.0;
  for (const auto& [path, g] : grads)
    for (double v : g) sq += v * v;
  return std::sqrt(sq);
}

double clip_by_global_norm(GradMap& grads, double bound) {
  if (bound <= 0.0) throw std::invalid_argument("clip bound must be positive");
  const double norm = global_norm(grads);
  if (norm > bound) {
    const double scale = bound / norm;
    for (auto& [path, g] : grads)
      for (double& v : g) v *= scale;
  }
  return norm;
}

void adam_step(ParamStore& params, const GradMap& grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& [path, t] : params) {
    auto git = grads.find(path);
    if (git == grads.end()) throw std::invalid_argument("missing gradient for " + path);
    const std::vector<double>& g = git->second;
    if (g.size() != static_cast<std::size_t>(t.numel()))
      throw std::invalid_argument("gradient size mismatch for " + path);
    auto& m = state.m[path];
    auto& v = state.v[path];
    if (m.empty()) m.assign(g.size(), 0.0);
    if (v.empty()) v.assign(g.size(), 0.0);
    std::vector<double> next(t.data().begin(), t.data().end());
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      next[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    params.set(path, Tensor::param(t.shape(), std::move(next)));
  }
}

}  // namespace evogen
