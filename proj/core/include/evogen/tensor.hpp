#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace evogen {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Immutable dense double tensor participating in a dynamically recorded
// computation graph.  Ops never mutate their inputs; each op yields a fresh
// node holding the result and a closure that scatters adjoints back to its
// parents.  Copying a Tensor copies a handle, not the data.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  // Trainable leaf: participates in grad() and keeps its adjoint after a
  // backward sweep.
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int ndim() const;
  std::int64_t numel() const;
  std::int64_t dim(int axis) const;

  std::span<const double> data() const;
  double item() const;  // numel() must be 1
  bool requires_grad() const;
  // Adjoint buffer filled by the most recent backward(); empty before that.
  std::span<const double> grad() const;

  // Value copy detached from the graph.
  Tensor detach() const;

  struct Node;
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend class TensorOps;
};

// --- elementwise arithmetic (shapes broadcast together, numpy rules) -------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return divide(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor divide(const Tensor& a, double b);
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, double b) { return divide(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }

// --- elementwise functions --------------------------------------------------
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form
Tensor clamp(const Tensor& x, double lo, double hi);

// --- linear algebra ----------------------------------------------------------
// A [*, m, k] x B [*, k, n] with identical batch prefixes, or A [..., k] with
// a rank-2 B [k, n] (linear-map application over trailing axis).
Tensor matmul(const Tensor& a, const Tensor& b);

// --- normalization / reduction ----------------------------------------------
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);
// Normalizes over `axis` with learnable per-channel scale/offset of length
// dim(axis).  Composite of primitive ops, so its gradient comes for free.
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& offset,
                  int axis = -1);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// --- shape surgery ------------------------------------------------------------
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t stop);
Tensor transpose(const Tensor& x, std::span<const int> perm);
Tensor transpose(const Tensor& x, std::initializer_list<int> perm);
Tensor reshape(const Tensor& x, Shape shape);
Tensor broadcast_to(const Tensor& x, Shape shape);
Tensor gather(const Tensor& x, std::span<const std::int64_t> indices, int axis);

// --- structure / flow ----------------------------------------------------------
Tensor stop_gradient(const Tensor& x);
Tensor one_hot(std::span<const int> ids, int depth);  // constant [n, depth]
// Rotary position transform: even/odd channel pairs of the last axis rotated
// by angle pos * base^(-2t/d) where pos indexes the second-to-last axis.
Tensor rope(const Tensor& x, double base);
// Forward emits `hard` exactly (bit-for-bit); backward routes the adjoint to
// `soft` unchanged.
Tensor straight_through(const Tensor& soft, const Tensor& hard);
// Scalar node whose forward value and input-gradient were computed outside
// the graph (boundary to external differentiable scorers).
Tensor custom_scalar(const Tensor& input, double value,
                     std::vector<double> grad_wrt_input);

// --- autodiff ------------------------------------------------------------------
// Reverse sweep from a scalar loss; fills .grad() on every reachable node that
// requires grad.  Adjoints from multiple paths accumulate by summation.
void backward(const Tensor& loss);
// backward() + adjoint copies for the given leaves, in order.
std::vector<std::vector<double>> grad(const Tensor& loss,
                                      std::span<const Tensor> leaves);

// --- non-differentiable utilities -----------------------------------------------
// Argmax along `axis`; ties resolve to the lowest index.
std::vector<std::int64_t> argmax(const Tensor& x, int axis);

}  // namespace evogen
