#include "evogen/params.hpp"

#include <stdexcept>

namespace evogen {

void ParamStore::add(const std::string& path, Tensor value) {
  if (!value.requires_grad())
    throw std::invalid_argument("ParamStore::add expects a trainable leaf: " + path);
  auto [it, inserted] = params_.emplace(path, std::move(value));
  if (!inserted) throw std::invalid_argument("duplicate parameter path: " + path);
}

bool ParamStore::contains(const std::string& path) const { return params_.count(path) != 0; }

const Tensor& ParamStore::at(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::invalid_argument("unknown parameter path: " + path);
  return it->second;
}

void ParamStore::set(const std::string& path, Tensor value) {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::invalid_argument("unknown parameter path: " + path);
  if (value.shape() != it->second.shape())
    throw std::invalid_argument("parameter shape change at " + path);
  it->second = std::move(value);
}

std::int64_t ParamStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& [path, t] : params_) n += t.numel();
  return n;
}

GradMap collect_grads(const Tensor& loss, const ParamStore& params) {
  std::vector<Tensor> leaves;
  leaves.reserve(params.size());
  for (const auto& [path, t] : params) leaves.push_back(t);
  std::vector<std::vector<double>> gs = grad(loss, leaves);
  GradMap out;
  std::size_t i = 0;
  for (const auto& [path, t] : params) out.emplace(path, std::move(gs[i++]));
  return out;
}

Tensor init_normal(const std::string& name, Shape shape, double stddev, const SeedStream& root) {
  std::vector<double> v(shape_numel(shape));
  SeedStream s = root.fork("init").fork(name);
  s.fill_normal(v);
  for (double& x : v) x *= stddev;
  return Tensor::param(std::move(shape), std::move(v));
}

Tensor init_zeros(const std::string& name, Shape shape) {
  (void)name;
  std::vector<double> v(shape_numel(shape), 0.0);
  return Tensor::param(std::move(shape), std::move(v));
}

Tensor init_full(const std::string& name, Shape shape, double value) {
  (void)name;
  std::vector<double> v(shape_numel(shape), value);
  return Tensor::param(std::move(shape), std::move(v));
}

}  // namespace evogen
