#include "evogen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace evogen {

namespace {
using i64 = std::int64_t;
}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  i64 n = 1;
  for (i64 d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Graph node
// ---------------------------------------------------------------------------

struct Tensor::Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> adj;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
};

namespace {

using Node = Tensor::Node;
using NodePtr = std::shared_ptr<Node>;

std::vector<double>& ensure_adj(Node& n) {
  if (n.adj.empty()) n.adj.assign(n.value.size(), 0.0);
  return n.adj;
}

int norm_axis(int axis, int ndim) {
  const int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) throw std::invalid_argument("axis out of range");
  return a;
}

// Row-major view of one axis: numel == outer * d * inner, element (o, t, i)
// lives at offset (o * d + t) * inner + i.
struct AxisView {
  i64 outer = 1, d = 1, inner = 1;
};

AxisView axis_view(const Shape& s, int axis) {
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[i];
  v.d = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

std::vector<i64> row_major_strides(const Shape& s) {
  std::vector<i64> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const i64 da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const i64 db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("shapes do not broadcast: " + shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

namespace {

Tensor wrap(NodePtr n);

NodePtr new_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  if (static_cast<i64>(value.size()) != shape_numel(shape))
    throw std::invalid_argument("value size does not match shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

Tensor make_op(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
               std::function<void(Node&)> backprop) {
  auto n = new_node(std::move(shape), std::move(value));
  bool rg = false;
  for (const NodePtr& p : parents) rg = rg || (p && p->requires_grad);
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return wrap(n);
}

}  // namespace

class TensorOps {
 public:
  static Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }
};

namespace {
Tensor wrap(NodePtr n) { return TensorOps::wrap(std::move(n)); }
}  // namespace

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return wrap(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return constant(Shape{}, {value}); }

Tensor Tensor::zeros(Shape shape) {
  const i64 n = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  const i64 n = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  auto n = new_node(std::move(shape), std::move(values));
  n->requires_grad = true;
  return wrap(n);
}

const Shape& Tensor::shape() const {
  if (!node_) throw std::invalid_argument("use of undefined tensor");
  return node_->shape;
}

int Tensor::ndim() const { return static_cast<int>(shape().size()); }

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

std::int64_t Tensor::dim(int axis) const { return shape()[norm_axis(axis, ndim())]; }

std::span<const double> Tensor::data() const {
  if (!node_) throw std::invalid_argument("use of undefined tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() requires a single-element tensor");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::grad() const {
  if (!node_) throw std::invalid_argument("use of undefined tensor");
  return node_->adj;
}

Tensor Tensor::detach() const { return constant(shape(), {data().begin(), data().end()}); }

// ---------------------------------------------------------------------------
// Broadcasting helper: returns x expanded to `shape` (identity if equal).
// ---------------------------------------------------------------------------

Tensor broadcast_to(const Tensor& x, Shape shape) {
  if (x.shape() == shape) return x;
  const Shape& in = x.shape();
  const std::size_t r = shape.size();
  if (in.size() > r) throw std::invalid_argument("broadcast_to cannot drop axes");
  // Input strides aligned to the output rank; stride 0 on expanded axes.
  const std::vector<i64> in_st = row_major_strides(in);
  std::vector<i64> st(r, 0);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t o = r - in.size() + i;
    const i64 din = in[i];
    if (din != shape[o] && din != 1)
      throw std::invalid_argument("broadcast_to: incompatible shapes " + shape_str(in) +
                                  " -> " + shape_str(shape));
    st[o] = din == 1 ? 0 : in_st[i];
  }
  const i64 n_out = shape_numel(shape);
  std::vector<double> out(n_out);
  const std::vector<i64> out_st = row_major_strides(shape);
  std::span<const double> src = x.data();
  for (i64 idx = 0; idx < n_out; ++idx) {
    i64 rem = idx, off = 0;
    for (std::size_t i = 0; i < r; ++i) {
      const i64 c = rem / out_st[i];
      rem -= c * out_st[i];
      off += c * st[i];
    }
    out[idx] = src[off];
  }
  auto px = x.node();
  Shape out_shape = shape;
  return make_op(
      std::move(shape), std::move(out), {px},
      [px, st, out_st, out_shape, r](Node& self) {
        auto& pa = ensure_adj(*px);
        const i64 n = static_cast<i64>(self.adj.size());
        for (i64 idx = 0; idx < n; ++idx) {
          i64 rem = idx, off = 0;
          for (std::size_t i = 0; i < r; ++i) {
            const i64 c = rem / out_st[i];
            rem -= c * out_st[i];
            off += c * st[i];
          }
          pa[off] += self.adj[idx];
        }
      });
}

namespace {

// Broadcasts both operands to their common shape before an elementwise op.
std::pair<Tensor, Tensor> broadcast_pair(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return {a, b};
  Shape s = broadcast_shapes(a.shape(), b.shape());
  return {broadcast_to(a, s), broadcast_to(b, s)};
}

template <class Fwd, class Bwd>
Tensor binary_op(const Tensor& a_in, const Tensor& b_in, Fwd fwd, Bwd bwd) {
  auto [a, b] = broadcast_pair(a_in, b_in);
  const i64 n = a.numel();
  std::vector<double> out(n);
  std::span<const double> va = a.data(), vb = b.data();
  for (i64 i = 0; i < n; ++i) out[i] = fwd(va[i], vb[i]);
  auto pa = a.node(), pb = b.node();
  return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb, bwd](Node& self) {
    const i64 n = static_cast<i64>(self.value.size());
    double* ga = pa->requires_grad ? ensure_adj(*pa).data() : nullptr;
    double* gb = pb->requires_grad ? ensure_adj(*pb).data() : nullptr;
    for (i64 i = 0; i < n; ++i)
      bwd(self.adj[i], pa->value[i], pb->value[i], self.value[i],
          ga ? &ga[i] : nullptr, gb ? &gb[i] : nullptr);
  });
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd bwd) {
  const i64 n = x.numel();
  std::vector<double> out(n);
  std::span<const double> vx = x.data();
  for (i64 i = 0; i < n; ++i) out[i] = fwd(vx[i]);
  auto px = x.node();
  return make_op(x.shape(), std::move(out), {px}, [px, bwd](Node& self) {
    auto& g = ensure_adj(*px);
    const i64 n = static_cast<i64>(self.value.size());
    for (i64 i = 0; i < n; ++i) g[i] += bwd(self.adj[i], px->value[i], self.value[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double d, double, double, double, double* ga, double* gb) {
        if (ga) *ga += d;
        if (gb) *gb += d;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double d, double, double, double, double* ga, double* gb) {
        if (ga) *ga += d;
        if (gb) *gb -= d;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double d, double x, double y, double, double* ga, double* gb) {
        if (ga) *ga += d * y;
        if (gb) *gb += d * x;
      });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](double d, double, double y, double v, double* ga, double* gb) {
        if (ga) *ga += d / y;
        if (gb) *gb -= d * v / y;
      });
}

Tensor neg(const Tensor& x) {
  return unary_op(
      x, [](double v) { return -v; },
      [](double d, double, double) { return -d; });
}

Tensor add(const Tensor& a, double b) {
  return unary_op(
      a, [b](double v) { return v + b; },
      [](double d, double, double) { return d; });
}

Tensor sub(const Tensor& a, double b) { return add(a, -b); }

Tensor mul(const Tensor& a, double b) {
  return unary_op(
      a, [b](double v) { return v * b; },
      [b](double d, double, double) { return d * b; });
}

Tensor divide(const Tensor& a, double b) { return mul(a, 1.0 / b); }

// ---------------------------------------------------------------------------
// Elementwise functions
// ---------------------------------------------------------------------------

Tensor exp(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); },
      [](double d, double, double y) { return d * y; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::log(v); },
      [](double d, double v, double) { return d / v; });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::tanh(v); },
      [](double d, double, double y) { return d * (1.0 - y * y); });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double d, double, double y) { return d * y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
  constexpr double inv_sqrt2pi = 0.3989422804014327;  // 1/sqrt(2*pi)
  return unary_op(
      x,
      [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [=](double d, double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        return d * (cdf + v * pdf);
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary_op(
      x, [=](double v) { return std::min(std::max(v, lo), hi); },
      [=](double d, double v, double) { return (v >= lo && v <= hi) ? d : 0.0; });
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

namespace {

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* A, const double* B, double* C, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    double* c_row = C + i * n;
    for (i64 p = 0; p < k; ++p) {
      const double a = a_row[p];
      const double* b_row = B + p * n;
      for (i64 j = 0; j < n; ++j) c_row[j] += a * b_row[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* A, const double* B, double* C, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    double* c_row = C + i * n;
    for (i64 j = 0; j < n; ++j) {
      const double* b_row = B + j * k;
      double acc = 0.0;
      for (i64 p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
      c_row[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* A, const double* B, double* C, i64 m, i64 k, i64 n) {
  for (i64 p = 0; p < m; ++p) {
    const double* a_row = A + p * k;
    const double* b_row = B + p * n;
    for (i64 i = 0; i < k; ++i) {
      const double a = a_row[i];
      double* c_row = C + i * n;
      for (i64 j = 0; j < n; ++j) c_row[j] += a * b_row[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sb.empty()) throw std::invalid_argument("matmul requires rank >= 1");

  if (sb.size() == 2 && sa.size() >= 1 && sa.size() != sb.size()) {
    // Linear map over the trailing axis: A [..., k] x B [k, n].
    const i64 k = sa.back(), n = sb[1];
    if (sb[0] != k)
      throw std::invalid_argument("matmul: inner dims differ " + shape_str(sa) + " x " + shape_str(sb));
    const i64 m = a.numel() / k;
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    Shape os(sa.begin(), sa.end() - 1);
    os.push_back(n);
    auto pa = a.node(), pb = b.node();
    return make_op(std::move(os), std::move(out), {pa, pb}, [pa, pb, m, k, n](Node& self) {
      if (pa->requires_grad)
        gemm_nt(self.adj.data(), pb->value.data(), ensure_adj(*pa).data(), m, n, k);
      if (pb->requires_grad)
        gemm_tn(pa->value.data(), self.adj.data(), ensure_adj(*pb).data(), m, k, n);
    });
  }

  if (sa.size() != sb.size() || sa.size() < 2)
    throw std::invalid_argument("matmul: incompatible ranks " + shape_str(sa) + " x " + shape_str(sb));
  for (std::size_t i = 0; i + 2 < sa.size(); ++i)
    if (sa[i] != sb[i])
      throw std::invalid_argument("matmul: batch dims differ " + shape_str(sa) + " x " + shape_str(sb));
  const i64 m = sa[sa.size() - 2], k = sa.back(), n = sb.back();
  if (sb[sb.size() - 2] != k)
    throw std::invalid_argument("matmul: inner dims differ " + shape_str(sa) + " x " + shape_str(sb));
  i64 batch = 1;
  for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
  std::vector<double> out(batch * m * n, 0.0);
  for (i64 bi = 0; bi < batch; ++bi)
    gemm_nn(a.data().data() + bi * m * k, b.data().data() + bi * k * n, out.data() + bi * m * n, m, k, n);
  Shape os(sa.begin(), sa.end() - 2);
  os.push_back(m);
  os.push_back(n);
  auto pa = a.node(), pb = b.node();
  return make_op(std::move(os), std::move(out), {pa, pb}, [pa, pb, batch, m, k, n](Node& self) {
    for (i64 bi = 0; bi < batch; ++bi) {
      const double* dc = self.adj.data() + bi * m * n;
      if (pa->requires_grad)
        gemm_nt(dc, pb->value.data() + bi * k * n, ensure_adj(*pa).data() + bi * m * k, m, n, k);
      if (pb->requires_grad)
        gemm_tn(pa->value.data() + bi * m * k, dc, ensure_adj(*pb).data() + bi * k * n, m, k, n);
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  const int a = norm_axis(axis, x.ndim());
  const AxisView v = axis_view(x.shape(), a);
  std::vector<double> out(x.numel());
  std::span<const double> vx = x.data();
  for (i64 o = 0; o < v.outer; ++o) {
    for (i64 i = 0; i < v.inner; ++i) {
      const i64 base = o * v.d * v.inner + i;
      double mx = -HUGE_VAL;
      for (i64 t = 0; t < v.d; ++t) mx = std::max(mx, vx[base + t * v.inner]);
      double z = 0.0;
      for (i64 t = 0; t < v.d; ++t) {
        const double e = std::exp(vx[base + t * v.inner] - mx);
        out[base + t * v.inner] = e;
        z += e;
      }
      for (i64 t = 0; t < v.d; ++t) out[base + t * v.inner] /= z;
    }
  }
  auto px = x.node();
  return make_op(x.shape(), std::move(out), {px}, [px, v](Node& self) {
    auto& g = ensure_adj(*px);
    for (i64 o = 0; o < v.outer; ++o) {
      for (i64 i = 0; i < v.inner; ++i) {
        const i64 base = o * v.d * v.inner + i;
        double dot = 0.0;
        for (i64 t = 0; t < v.d; ++t) dot += self.adj[base + t * v.inner] * self.value[base + t * v.inner];
        for (i64 t = 0; t < v.d; ++t) {
          const i64 k = base + t * v.inner;
          g[k] += self.value[k] * (self.adj[k] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const int a = norm_axis(axis, x.ndim());
  const AxisView v = axis_view(x.shape(), a);
  std::vector<double> out(x.numel());
  std::span<const double> vx = x.data();
  for (i64 o = 0; o < v.outer; ++o) {
    for (i64 i = 0; i < v.inner; ++i) {
      const i64 base = o * v.d * v.inner + i;
      double mx = -HUGE_VAL;
      for (i64 t = 0; t < v.d; ++t) mx = std::max(mx, vx[base + t * v.inner]);
      double z = 0.0;
      for (i64 t = 0; t < v.d; ++t) z += std::exp(vx[base + t * v.inner] - mx);
      const double lz = mx + std::log(z);
      for (i64 t = 0; t < v.d; ++t) out[base + t * v.inner] = vx[base + t * v.inner] - lz;
    }
  }
  auto px = x.node();
  return make_op(x.shape(), std::move(out), {px}, [px, v](Node& self) {
    auto& g = ensure_adj(*px);
    for (i64 o = 0; o < v.outer; ++o) {
      for (i64 i = 0; i < v.inner; ++i) {
        const i64 base = o * v.d * v.inner + i;
        double dsum = 0.0;
        for (i64 t = 0; t < v.d; ++t) dsum += self.adj[base + t * v.inner];
        for (i64 t = 0; t < v.d; ++t) {
          const i64 k = base + t * v.inner;
          g[k] += self.adj[k] - std::exp(self.value[k]) * dsum;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace {

Tensor reduce_axis(const Tensor& x, int axis, bool take_mean) {
  const int a = norm_axis(axis, x.ndim());
  const AxisView v = axis_view(x.shape(), a);
  std::vector<double> out(v.outer * v.inner, 0.0);
  std::span<const double> vx = x.data();
  for (i64 o = 0; o < v.outer; ++o)
    for (i64 t = 0; t < v.d; ++t)
      for (i64 i = 0; i < v.inner; ++i) out[o * v.inner + i] += vx[(o * v.d + t) * v.inner + i];
  const double scale = take_mean ? 1.0 / static_cast<double>(v.d) : 1.0;
  if (take_mean)
    for (double& e : out) e *= scale;
  Shape os;
  for (int i = 0; i < x.ndim(); ++i)
    if (i != a) os.push_back(x.shape()[i]);
  auto px = x.node();
  return make_op(std::move(os), std::move(out), {px}, [px, v, scale](Node& self) {
    auto& g = ensure_adj(*px);
    for (i64 o = 0; o < v.outer; ++o)
      for (i64 t = 0; t < v.d; ++t)
        for (i64 i = 0; i < v.inner; ++i)
          g[(o * v.d + t) * v.inner + i] += self.adj[o * v.inner + i] * scale;
  });
}

}  // namespace

Tensor sum(const Tensor& x, int axis) { return reduce_axis(x, axis, false); }
Tensor mean(const Tensor& x, int axis) { return reduce_axis(x, axis, true); }

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  auto px = x.node();
  return make_op(Shape{}, {acc}, {px}, [px](Node& self) {
    auto& g = ensure_adj(*px);
    const double d = self.adj[0];
    for (double& e : g) e += d;
  });
}

Tensor mean_all(const Tensor& x) { return divide(sum_all(x), static_cast<double>(x.numel())); }

// ---------------------------------------------------------------------------
// Layer norm (composite; gradient follows from the primitives)
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& offset, int axis) {
  const int a = norm_axis(axis, x.ndim());
  const i64 d = x.shape()[a];
  if (scale.numel() != d || offset.numel() != d)
    throw std::invalid_argument("layer_norm: scale/offset must have dim(axis) elements");
  Shape keep = x.shape();
  keep[a] = 1;
  Tensor mu = broadcast_to(reshape(mean(x, a), keep), x.shape());
  Tensor xc = sub(x, mu);
  Tensor var = broadcast_to(reshape(mean(mul(xc, xc), a), keep), x.shape());
  constexpr double eps = 1e-5;
  Tensor inv = exp(mul(log(add(var, eps)), -0.5));
  Tensor y = mul(xc, inv);
  // Align scale/offset with `axis`.
  Shape unit(x.ndim(), 1);
  unit[a] = d;
  Tensor s = broadcast_to(reshape(scale, unit), x.shape());
  Tensor o = broadcast_to(reshape(offset, unit), x.shape());
  return add(mul(y, s), o);
}

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const int nd = parts[0].ndim();
  const int a = norm_axis(axis, nd);
  Shape os = parts[0].shape();
  i64 total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != nd) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < nd; ++i)
      if (i != a && p.shape()[i] != os[i]) throw std::invalid_argument("concat: shape mismatch");
    total += p.shape()[a];
  }
  os[a] = total;
  const AxisView vo = axis_view(os, a);
  std::vector<double> out(shape_numel(os));
  std::vector<NodePtr> nodes;
  std::vector<i64> offsets;  // start of each part along the axis
  i64 at = 0;
  for (const Tensor& p : parts) {
    const i64 dp = p.shape()[a];
    std::span<const double> vp = p.data();
    for (i64 o = 0; o < vo.outer; ++o)
      std::copy_n(vp.data() + o * dp * vo.inner, dp * vo.inner,
                  out.data() + (o * vo.d + at) * vo.inner);
    nodes.push_back(p.node());
    offsets.push_back(at);
    at += dp;
  }
  auto parents = nodes;
  return make_op(std::move(os), std::move(out), std::move(nodes),
                 [parents, offsets, vo](Node& self) {
                   for (std::size_t pi = 0; pi < parents.size(); ++pi) {
                     const NodePtr& p = parents[pi];
                     if (!p->requires_grad) continue;
                     auto& g = ensure_adj(*p);
                     const i64 dp = static_cast<i64>(p->value.size()) / (vo.outer * vo.inner);
                     for (i64 o = 0; o < vo.outer; ++o)
                       for (i64 t = 0; t < dp; ++t)
                         for (i64 i = 0; i < vo.inner; ++i)
                           g[(o * dp + t) * vo.inner + i] +=
                               self.adj[(o * vo.d + offsets[pi] + t) * vo.inner + i];
                   }
                 });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  std::vector<Tensor> v(parts);
  return concat(std::span<const Tensor>(v), axis);
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t stop) {
  const int a = norm_axis(axis, x.ndim());
  const i64 d = x.shape()[a];
  if (start < 0 || stop > d || start > stop)
    throw std::invalid_argument("slice: bad range [" + std::to_string(start) + "," +
                                std::to_string(stop) + ") for dim " + std::to_string(d));
  const AxisView v = axis_view(x.shape(), a);
  const i64 dn = stop - start;
  Shape os = x.shape();
  os[a] = dn;
  std::vector<double> out(shape_numel(os));
  std::span<const double> vx = x.data();
  for (i64 o = 0; o < v.outer; ++o)
    std::copy_n(vx.data() + (o * v.d + start) * v.inner, dn * v.inner,
                out.data() + o * dn * v.inner);
  auto px = x.node();
  return make_op(std::move(os), std::move(out), {px}, [px, v, start, dn](Node& self) {
    auto& g = ensure_adj(*px);
    for (i64 o = 0; o < v.outer; ++o)
      for (i64 t = 0; t < dn; ++t)
        for (i64 i = 0; i < v.inner; ++i)
          g[(o * v.d + start + t) * v.inner + i] += self.adj[(o * dn + t) * v.inner + i];
  });
}

Tensor transpose(const Tensor& x, std::span<const int> perm) {
  const int nd = x.ndim();
  if (static_cast<int>(perm.size()) != nd) throw std::invalid_argument("transpose: perm rank mismatch");
  std::vector<bool> seen(nd, false);
  Shape os(nd);
  for (int i = 0; i < nd; ++i) {
    const int p = perm[i];
    if (p < 0 || p >= nd || seen[p]) throw std::invalid_argument("transpose: invalid permutation");
    seen[p] = true;
    os[i] = x.shape()[p];
  }
  const std::vector<i64> in_st = row_major_strides(x.shape());
  const std::vector<i64> out_st = row_major_strides(os);
  std::vector<i64> gather_st(nd);
  for (int i = 0; i < nd; ++i) gather_st[i] = in_st[perm[i]];
  const i64 n = x.numel();
  std::vector<double> out(n);
  std::span<const double> vx = x.data();
  for (i64 idx = 0; idx < n; ++idx) {
    i64 rem = idx, off = 0;
    for (int i = 0; i < nd; ++i) {
      const i64 c = rem / out_st[i];
      rem -= c * out_st[i];
      off += c * gather_st[i];
    }
    out[idx] = vx[off];
  }
  auto px = x.node();
  return make_op(std::move(os), std::move(out), {px}, [px, out_st, gather_st, nd](Node& self) {
    auto& g = ensure_adj(*px);
    const i64 n = static_cast<i64>(self.value.size());
    for (i64 idx = 0; idx < n; ++idx) {
      i64 rem = idx, off = 0;
      for (int i = 0; i < nd; ++i) {
        const i64 c = rem / out_st[i];
        rem -= c * out_st[i];
        off += c * gather_st[i];
      }
      g[off] += self.adj[idx];
    }
  });
}

Tensor transpose(const Tensor& x, std::initializer_list<int> perm) {
  std::vector<int> v(perm);
  return transpose(x, std::span<const int>(v));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(x.shape()) +
                                " -> " + shape_str(shape));
  auto px = x.node();
  return make_op(std::move(shape), {x.data().begin(), x.data().end()}, {px}, [px](Node& self) {
    auto& g = ensure_adj(*px);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.adj[i];
  });
}

Tensor gather(const Tensor& x, std::span<const std::int64_t> indices, int axis) {
  const int a = norm_axis(axis, x.ndim());
  const AxisView v = axis_view(x.shape(), a);
  for (i64 idx : indices)
    if (idx < 0 || idx >= v.d) throw std::invalid_argument("gather: index out of range");
  Shape os = x.shape();
  os[a] = static_cast<i64>(indices.size());
  const i64 dn = os[a];
  std::vector<double> out(shape_numel(os));
  std::span<const double> vx = x.data();
  std::vector<i64> idx_copy(indices.begin(), indices.end());
  for (i64 o = 0; o < v.outer; ++o)
    for (i64 t = 0; t < dn; ++t)
      std::copy_n(vx.data() + (o * v.d + idx_copy[t]) * v.inner, v.inner,
                  out.data() + (o * dn + t) * v.inner);
  auto px = x.node();
  return make_op(std::move(os), std::move(out), {px}, [px, v, idx_copy, dn](Node& self) {
    auto& g = ensure_adj(*px);
    for (i64 o = 0; o < v.outer; ++o)
      for (i64 t = 0; t < dn; ++t)
        for (i64 i = 0; i < v.inner; ++i)
          g[(o * v.d + idx_copy[t]) * v.inner + i] += self.adj[(o * dn + t) * v.inner + i];
  });
}

// ---------------------------------------------------------------------------
// Structure / flow
// ---------------------------------------------------------------------------

Tensor stop_gradient(const Tensor& x) {
  return Tensor::constant(x.shape(), {x.data().begin(), x.data().end()});
}

Tensor one_hot(std::span<const int> ids, int depth) {
  if (depth <= 0) throw std::invalid_argument("one_hot: depth must be positive");
  std::vector<double> out(ids.size() * static_cast<std::size_t>(depth), 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= depth) throw std::invalid_argument("one_hot: id out of range");
    out[i * depth + ids[i]] = 1.0;
  }
  return Tensor::constant({static_cast<i64>(ids.size()), depth}, std::move(out));
}

Tensor rope(const Tensor& x, double base) {
  if (x.ndim() < 2) throw std::invalid_argument("rope requires rank >= 2");
  const i64 d = x.shape()[x.ndim() - 1];
  const i64 L = x.shape()[x.ndim() - 2];
  if (d % 2 != 0) throw std::invalid_argument("rope requires an even last axis");
  const i64 pairs = d / 2;
  // Precompute the rotation table once per call: angle(p, t) = p * base^(-2t/d).
  std::vector<double> cs(L * pairs), sn(L * pairs);
  for (i64 p = 0; p < L; ++p) {
    for (i64 t = 0; t < pairs; ++t) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(t) / static_cast<double>(d));
      const double ang = static_cast<double>(p) * freq;
      cs[p * pairs + t] = std::cos(ang);
      sn[p * pairs + t] = std::sin(ang);
    }
  }
  const i64 outer = x.numel() / (L * d);
  std::vector<double> out(x.numel());
  std::span<const double> vx = x.data();
  for (i64 o = 0; o < outer; ++o) {
    for (i64 p = 0; p < L; ++p) {
      const i64 base_off = (o * L + p) * d;
      for (i64 t = 0; t < pairs; ++t) {
        const double c = cs[p * pairs + t], s = sn[p * pairs + t];
        const double x0 = vx[base_off + 2 * t], x1 = vx[base_off + 2 * t + 1];
        out[base_off + 2 * t] = x0 * c - x1 * s;
        out[base_off + 2 * t + 1] = x0 * s + x1 * c;
      }
    }
  }
  auto px = x.node();
  return make_op(x.shape(), std::move(out), {px},
                 [px, cs = std::move(cs), sn = std::move(sn), outer, L, d, pairs](Node& self) {
                   auto& g = ensure_adj(*px);
                   for (i64 o = 0; o < outer; ++o) {
                     for (i64 p = 0; p < L; ++p) {
                       const i64 base_off = (o * L + p) * d;
                       for (i64 t = 0; t < pairs; ++t) {
                         const double c = cs[p * pairs + t], s = sn[p * pairs + t];
                         const double d0 = self.adj[base_off + 2 * t], d1 = self.adj[base_off + 2 * t + 1];
                         g[base_off + 2 * t] += d0 * c + d1 * s;
                         g[base_off + 2 * t + 1] += -d0 * s + d1 * c;
                       }
                     }
                   }
                 });
}

Tensor straight_through(const Tensor& soft, const Tensor& hard) {
  if (soft.shape() != hard.shape())
    throw std::invalid_argument("straight_through: shape mismatch");
  auto ps = soft.node();
  return make_op(soft.shape(), {hard.data().begin(), hard.data().end()}, {ps}, [ps](Node& self) {
    auto& g = ensure_adj(*ps);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.adj[i];
  });
}

Tensor custom_scalar(const Tensor& input, double value, std::vector<double> grad_wrt_input) {
  if (static_cast<i64>(grad_wrt_input.size()) != input.numel())
    throw std::invalid_argument("custom_scalar: gradient size mismatch");
  auto px = input.node();
  return make_op(Shape{}, {value}, {px}, [px, g = std::move(grad_wrt_input)](Node& self) {
    auto& ga = ensure_adj(*px);
    const double d = self.adj[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d * g[i];
  });
}

// ---------------------------------------------------------------------------
// Backward sweep
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward on undefined tensor");
  if (loss.numel() != 1) throw std::invalid_argument("backward requires a scalar loss");
  Node* root = loss.node().get();
  if (!root->requires_grad) {
    root->adj.assign(1, 1.0);
    return;
  }

  // Iterative post-order DFS over parents.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    std::size_t next;
  };
  std::vector<Frame> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node* p = f.n->parents[f.next++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->adj.clear();
  root->adj.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->adj.empty()) n->backprop(*n);
  }
}

std::vector<std::vector<double>> grad(const Tensor& loss, std::span<const Tensor> leaves) {
  for (const Tensor& l : leaves)
    if (l.defined()) l.node()->adj.clear();
  backward(loss);
  std::vector<std::vector<double>> out;
  out.reserve(leaves.size());
  for (const Tensor& l : leaves) {
    if (l.defined() && !l.node()->adj.empty())
      out.push_back(l.node()->adj);
    else
      out.push_back(std::vector<double>(l.numel(), 0.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Utilities
// ---------------------------------------------------------------------------

std::vector<std::int64_t> argmax(const Tensor& x, int axis) {
  const int a = norm_axis(axis, x.ndim());
  const AxisView v = axis_view(x.shape(), a);
  std::vector<i64> out(v.outer * v.inner, 0);
  std::span<const double> vx = x.data();
  for (i64 o = 0; o < v.outer; ++o) {
    for (i64 i = 0; i < v.inner; ++i) {
      const i64 base = o * v.d * v.inner + i;
      double best = vx[base];
      i64 arg = 0;
      for (i64 t = 1; t < v.d; ++t) {
        const double val = vx[base + t * v.inner];
        if (val > best) {
          best = val;
          arg = t;
        }
      }
      out[o * v.inner + i] = arg;
    }
  }
  return out;
}

}  // namespace evogen
