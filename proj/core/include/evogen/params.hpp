#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evogen/random.hpp"
#include "evogen/tensor.hpp"

namespace evogen {

// Ordered collection of named trainable tensors.  Paths use '/'-separated
// segments ("enc/block0/row_attn/wq").  Iteration order is lexicographic,
// which keeps serialization and gradient maps deterministic.
class ParamStore {
 public:
  // Registers a trainable leaf; throws if the path already exists.
  void add(const std::string& path, Tensor value);
  bool contains(const std::string& path) const;
  const Tensor& at(const std::string& path) const;
  // Replaces the value at an existing path (optimizer updates install fresh
  // leaf tensors; old graph references keep the previous values alive).
  void set(const std::string& path, Tensor value);

  std::size_t size() const { return params_.size(); }
  std::int64_t total_elements() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

// Gradients keyed by parameter path.
using GradMap = std::map<std::string, std::vector<double>>;

// Collects adjoints for every parameter after a backward sweep; parameters
// that the loss does not reach get zero gradients.
GradMap collect_grads(const Tensor& loss, const ParamStore& params);

// --- initializers ------------------------------------------------------------

// Normal(0, std) draws from a stream derived from `name`, so values depend on
// the parameter's identity rather than on registration order.
Tensor init_normal(const std::string& name, Shape shape, double stddev, const SeedStream& root);
Tensor init_zeros(const std::string& name, Shape shape);
Tensor init_full(const std::string& name, Shape shape, double value);

}  // namespace evogen
