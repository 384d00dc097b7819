// Copyright 2026 The dptbf Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Minimal define-by-run reverse-mode automatic differentiation over dense,
// row-major real tensors. Complex quantities are tensors whose last axis has
// extent 2 (real, imaginary).
//
// Every op records a backward closure on its output when any input requires
// a gradient and gradient recording is enabled (see NoGradGuard). Calling
// backward() on a scalar root accumulates into the .grad() of every
// reachable leaf and then releases the interior graph; a second call on the
// same root throws.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace dptbf::ad {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void check_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Array value;
  Array grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  Array& grad_buffer() {
    if (grad.size() == 0) grad = Array::Zero(value.size());
    return grad;
  }
};

template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, Array values, bool requires_grad = false) {
    check_shape(numel(shape) == values.size(),
                "tensor: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
    auto node = std::make_shared<Node<Scalar>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = numel(shape);
    return from(std::move(shape), Array::Zero(n), requires_grad);
  }
  static Tensor full(Shape shape, Scalar v) {
    const Index n = numel(shape);
    return from(std::move(shape), Array::Constant(n, v));
  }
  static Tensor scalar(Scalar v, bool requires_grad = false) {
    return from({}, Array::Constant(1, v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index axis) const {
    if (axis < 0) axis += rank();
    return node_->shape.at(static_cast<std::size_t>(axis));
  }
  Index size() const { return node_->value.size(); }
  const Array& value() const { return node_->value; }
  /// In-place access for optimizers and finite differences; never call while
  /// a graph that read this tensor is still pending backward.
  Array& mutable_value() { return node_->value; }
  Scalar item() const {
    check_shape(size() == 1, "item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() > 0; }
  /// Gradient buffer; zeros if nothing has been accumulated yet.
  Array grad() const { return has_grad() ? node_->grad : Array::Zero(size()); }
  Array& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.resize(0); }

  const NodePtr& node() const { return node_; }

  void backward() const;

 private:
  NodePtr node_;
};

// ------------------------------------------------------------------ graph

namespace detail {

template <typename Scalar>
using NodePtr = std::shared_ptr<Node<Scalar>>;

template <typename Scalar>
Tensor<Scalar> record(Shape shape, typename Tensor<Scalar>::Array value,
                      std::vector<NodePtr<Scalar>> inputs, std::function<void(Node<Scalar>&)> backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  check_shape(numel(node->shape) == node->value.size(), "op produced a value inconsistent with its shape");
  const bool needs = GradMode::enabled() &&
                     std::any_of(inputs.begin(), inputs.end(), [](const auto& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(inputs);
    node->backward_fn = std::move(backward);
  }
  return Tensor<Scalar>(std::move(node));
}

/// Gradient buffer of a parent when it takes part in differentiation, else null.
template <typename Scalar>
typename Node<Scalar>::Array* grad_of(const NodePtr<Scalar>& p) {
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

template <typename Scalar>
using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
Eigen::Map<const RowMajor<Scalar>> as_matrix(const Eigen::Array<Scalar, Eigen::Dynamic, 1>& a, Index rows,
                                             Index cols) {
  return Eigen::Map<const RowMajor<Scalar>>(a.data(), rows, cols);
}

template <typename Scalar>
Eigen::Map<RowMajor<Scalar>> as_matrix(Eigen::Array<Scalar, Eigen::Dynamic, 1>& a, Index rows, Index cols) {
  return Eigen::Map<RowMajor<Scalar>>(a.data(), rows, cols);
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline Index normalize_axis(Index axis, Index rank) {
  if (axis < 0) axis += rank;
  check_shape(axis >= 0 && axis < rank, "axis out of range");
  return axis;
}

}  // namespace detail

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  check_shape(size() == 1, "backward: root must be a scalar, got shape " + to_string(shape()));
  if (node_->consumed) throw std::logic_error("backward: graph already consumed; rebuild it first");
  if (!node_->requires_grad) return;

  // iterative post-order DFS gives a topological order; `order` owns the
  // nodes so that releasing edges below cannot free one still pending
  std::vector<NodePtr> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack{{node_, 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodePtr p = n->parents[next++];
      if (p->consumed) throw std::logic_error("backward: part of this graph was consumed by an earlier backward");
      if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(std::move(n));
      stack.pop_back();
    }
  }

  node_->grad_buffer() += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = it->get();
    if (n->is_leaf()) continue;
    if (n->grad.size() > 0) n->backward_fn(*n);
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad.resize(0);
    n->consumed = true;
  }
}

// ------------------------------------------------------------- elementwise

namespace detail {

/// Reduces a gradient of the broadcast shape `big` down to `small` (a suffix).
template <typename Scalar>
void accumulate_reduced(typename Node<Scalar>::Array& dst, const typename Node<Scalar>::Array& g, Index inner) {
  if (g.size() == dst.size()) {
    dst += g;
  } else {
    dst += as_matrix<Scalar>(g, g.size() / inner, inner).colwise().sum().transpose().array();
  }
}

/// Either a reference to `v` (already full size) or a replicated copy held in `tmp`.
template <typename Scalar>
const typename Node<Scalar>::Array& expand(const typename Node<Scalar>::Array& v, Index total,
                                           typename Node<Scalar>::Array& tmp) {
  if (v.size() == total) return v;
  tmp = v.replicate(total / v.size(), 1);
  return tmp;
}

/// Binary elementwise op where one operand's shape is a suffix of the other's.
/// `f(a, b)` computes the value; `da(a, b, y, g)` / `db(...)` the partials times g,
/// all on arrays of the broadcast size.
template <typename Scalar, typename F, typename DA, typename DB>
Tensor<Scalar> binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* name, F f, DA da, DB db) {
  using Array = typename Node<Scalar>::Array;
  const bool a_big = detail::is_suffix(b.shape(), a.shape());
  check_shape(a_big || detail::is_suffix(a.shape(), b.shape()),
              std::string(name) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                  " do not broadcast (one must be a suffix of the other)");
  const Shape out_shape = a_big ? a.shape() : b.shape();
  const Index total = numel(out_shape);
  auto na = a.node(), nb = b.node();
  Array ta, tb;
  Array y = f(expand<Scalar>(na->value, total, ta), expand<Scalar>(nb->value, total, tb));
  return record<Scalar>(out_shape, std::move(y), {na, nb}, [na, nb, da, db, total](Node<Scalar>& out) {
    Array ta, tb;
    const Array& av = expand<Scalar>(na->value, total, ta);
    const Array& bv = expand<Scalar>(nb->value, total, tb);
    if (auto* g = grad_of<Scalar>(na)) accumulate_reduced<Scalar>(*g, da(av, bv, out.value, out.grad), na->value.size());
    if (auto* g = grad_of<Scalar>(nb)) accumulate_reduced<Scalar>(*g, db(av, bv, out.value, out.grad), nb->value.size());
  });
}

/// a + sign * b with suffix broadcasting, without materializing the broadcast.
template <typename Scalar>
Tensor<Scalar> add_signed(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Scalar sign, const char* name) {
  using Array = typename Node<Scalar>::Array;
  using Cols = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const bool a_big = detail::is_suffix(b.shape(), a.shape());
  check_shape(a_big || detail::is_suffix(a.shape(), b.shape()),
              std::string(name) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                  " do not broadcast (one must be a suffix of the other)");
  const Shape out_shape = a_big ? a.shape() : b.shape();
  const Index total = numel(out_shape);
  auto na = a.node(), nb = b.node();
  Array y;
  if (na->value.size() == nb->value.size()) {
    y = na->value + sign * nb->value;
  } else if (a_big) {
    y = na->value;
    Eigen::Map<Cols>(y.data(), nb->value.size(), total / nb->value.size()).colwise() += sign * nb->value;
  } else {
    y = sign * nb->value;
    Eigen::Map<Cols>(y.data(), na->value.size(), total / na->value.size()).colwise() += na->value;
  }
  return record<Scalar>(out_shape, std::move(y), {na, nb}, [na, nb, sign, total](Node<Scalar>& out) {
    auto reduce = [&](Array& dst, Scalar s) {
      if (dst.size() == total) dst += s * out.grad;
      else dst += s * Eigen::Map<const Cols>(out.grad.data(), dst.size(), total / dst.size()).rowwise().sum();
    };
    if (auto* g = grad_of<Scalar>(na)) reduce(*g, Scalar(1));
    if (auto* g = grad_of<Scalar>(nb)) reduce(*g, sign);
  });
}

/// Unary elementwise op; `d(x, y, g)` returns dL/dx, possibly as a lazy expression.
template <typename Scalar, typename F, typename D>
Tensor<Scalar> unary(const Tensor<Scalar>& x, F f, D d) {
  using Array = typename Node<Scalar>::Array;
  auto nx = x.node();
  Array y = f(nx->value);
  return record<Scalar>(x.shape(), std::move(y), {nx}, [nx, d](Node<Scalar>& out) {
    if (auto* g = grad_of<Scalar>(nx)) *g += d(nx->value, out.value, out.grad);
  });
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::add_signed(a, b, Scalar(1), "add");
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::add_signed(a, b, Scalar(-1), "sub");
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using A = typename Node<Scalar>::Array;
  return detail::binary<Scalar>(
      a, b, "mul", [](const A& x, const A& y) -> A { return x * y; },
      [](const A&, const A& y, const A&, const A& g) -> A { return g * y; },
      [](const A& x, const A&, const A&, const A& g) -> A { return g * x; });
}

template <typename Scalar>
Tensor<Scalar> div(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using A = typename Node<Scalar>::Array;
  return detail::binary<Scalar>(
      a, b, "div", [](const A& x, const A& y) -> A { return x / y; },
      [](const A&, const A& y, const A&, const A& g) -> A { return g / y; },
      [](const A&, const A& y, const A& out, const A& g) -> A { return -g * out / y; });
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Tensor<Scalar> operator/(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return div(a, b); }

/// c * x + offset
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& x, Scalar c, Scalar offset = Scalar(0)) {
  using A = typename Node<Scalar>::Array;
  return detail::unary<Scalar>(
      x, [c, offset](const A& v) -> A { return c * v + offset; },
      [c](const A&, const A&, const A& g) { return c * g; });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar c) { return affine(x, c); }

template <typename Scalar>
Tensor<Scalar> neg(const Tensor<Scalar>& x) { return affine(x, Scalar(-1)); }

template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& x) { return neg(x); }

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  using A = typename Node<Scalar>::Array;
  return detail::unary<Scalar>(
      x, [](const A& v) -> A { return Scalar(1) / (Scalar(1) + (-v).exp()); },
      [](const A&, const A& y, const A& g) { return g * y * (Scalar(1) - y); });
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& x) {
  using A = typename Node<Scalar>::Array;
  return detail::unary<Scalar>(
      x, [](const A& v) -> A { return v.tanh(); },
      [](const A&, const A& y, const A& g) { return g * (Scalar(1) - y.square()); });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  using A = typename Node<Scalar>::Array;
  return detail::unary<Scalar>(
      x, [](const A& v) -> A { return v.max(Scalar(0)); },
      [](const A& v, const A&, const A& g) { return (v > Scalar(0)).select(g, Scalar(0)); });
}

template <typename Scalar>
Tensor<Scalar> sqrt(const Tensor<Scalar>& x) {
  using A = typename Node<Scalar>::Array;
  return detail::unary<Scalar>(
      x, [](const A& v) -> A { return v.sqrt(); },
      [](const A&, const A& y, const A& g) -> A { return (y > Scalar(0)).select(g / (Scalar(2) * y), Scalar(0)); });
}

template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& x) {
  using A = typename Node<Scalar>::Array;
  return detail::unary<Scalar>(
      x, [](const A& v) -> A { return v.log(); },
      [](const A& v, const A&, const A& g) -> A { return g / v; });
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& x) {
  using A = typename Node<Scalar>::Array;
  return detail::unary<Scalar>(
      x, [](const A& v) -> A { return v.exp(); },
      [](const A&, const A& y, const A& g) -> A { return g * y; });
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& x) {
  using A = typename Node<Scalar>::Array;
  return detail::unary<Scalar>(
      x, [](const A& v) -> A { return v.square(); },
      [](const A& v, const A&, const A& g) -> A { return Scalar(2) * v * g; });
}

/// Clamps to [lo, hi]; the gradient is zero where the clamp is active.
template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& x, Scalar lo, Scalar hi) {
  using A = typename Node<Scalar>::Array;
  return detail::unary<Scalar>(
      x, [lo, hi](const A& v) -> A { return v.max(lo).min(hi); },
      [lo, hi](const A& v, const A&, const A& g) -> A { return (v >= lo && v <= hi).select(g, Scalar(0)); });
}

// ------------------------------------------------------------- reductions

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  using A = typename Node<Scalar>::Array;
  auto nx = x.node();
  A y = A::Constant(1, nx->value.sum());
  return detail::record<Scalar>({}, std::move(y), {nx}, [nx](Node<Scalar>& out) {
    if (auto* g = detail::grad_of<Scalar>(nx)) *g += out.grad[0];
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  return scale(sum(x), Scalar(1) / Scalar(x.size()));
}

/// Sums over one axis, removing it.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x, Index axis) {
  using A = typename Node<Scalar>::Array;
  axis = detail::normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  const Index outer = numel(Shape(s.begin(), s.begin() + axis));
  const Index len = s[axis];
  const Index inner = numel(Shape(s.begin() + axis + 1, s.end()));
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + axis);
  auto nx = x.node();
  A y = A::Zero(outer * inner);
  for (Index o = 0; o < outer; ++o)
    for (Index l = 0; l < len; ++l) y.segment(o * inner, inner) += nx->value.segment((o * len + l) * inner, inner);
  return detail::record<Scalar>(out_shape, std::move(y), {nx}, [nx, outer, len, inner](Node<Scalar>& out) {
    if (auto* g = detail::grad_of<Scalar>(nx))
      for (Index o = 0; o < outer; ++o)
        for (Index l = 0; l < len; ++l) g->segment((o * len + l) * inner, inner) += out.grad.segment(o * inner, inner);
  });
}

// ------------------------------------------------------------ linear algebra

/// x [..., k] times w [k, n] -> [..., n].
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& x, const Tensor<Scalar>& w) {
  using A = typename Node<Scalar>::Array;
  check_shape(x.rank() >= 1 && w.rank() == 2 && x.dim(-1) == w.dim(0),
              "matmul: cannot multiply " + to_string(x.shape()) + " by " + to_string(w.shape()));
  const Index k = w.dim(0), n = w.dim(1), rows = x.size() / k;
  Shape out_shape = x.shape();
  out_shape.back() = n;
  auto nx = x.node(), nw = w.node();
  A y(rows * n);
  detail::as_matrix<Scalar>(y, rows, n).noalias() =
      detail::as_matrix<Scalar>(nx->value, rows, k) * detail::as_matrix<Scalar>(nw->value, k, n);
  return detail::record<Scalar>(out_shape, std::move(y), {nx, nw}, [nx, nw, rows, k, n](Node<Scalar>& out) {
    const auto g = detail::as_matrix<Scalar>(out.grad, rows, n);
    if (auto* gx = detail::grad_of<Scalar>(nx))
      detail::as_matrix<Scalar>(*gx, rows, k).noalias() += g * detail::as_matrix<Scalar>(nw->value, k, n).transpose();
    if (auto* gw = detail::grad_of<Scalar>(nw))
      detail::as_matrix<Scalar>(*gw, k, n).noalias() += detail::as_matrix<Scalar>(nx->value, rows, k).transpose() * g;
  });
}

/// Batched product a [B, m, k] x b [B, k, n] (or b [B, n, k] with transpose_b).
template <typename Scalar>
Tensor<Scalar> bmm(const Tensor<Scalar>& a, const Tensor<Scalar>& b, bool transpose_b = false) {
  using A = typename Node<Scalar>::Array;
  check_shape(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0),
              "bmm: expected matching [B, ., .] operands, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const Index n = transpose_b ? b.dim(1) : b.dim(2);
  check_shape((transpose_b ? b.dim(2) : b.dim(1)) == k, "bmm: inner dimensions differ");
  auto na = a.node(), nb = b.node();
  A y(batch * m * n);
  const Index br = transpose_b ? n : k, bc = transpose_b ? k : n;
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < batch; ++i) {
    Eigen::Map<const detail::RowMajor<Scalar>> am(na->value.data() + i * m * k, m, k);
    Eigen::Map<const detail::RowMajor<Scalar>> bm(nb->value.data() + i * br * bc, br, bc);
    Eigen::Map<detail::RowMajor<Scalar>> ym(y.data() + i * m * n, m, n);
    if (transpose_b) ym.noalias() = am * bm.transpose();
    else ym.noalias() = am * bm;
  }
  return detail::record<Scalar>(
      {batch, m, n}, std::move(y), {na, nb}, [na, nb, batch, m, k, n, br, bc, transpose_b](Node<Scalar>& out) {
        auto* ga = detail::grad_of<Scalar>(na);
        auto* gb = detail::grad_of<Scalar>(nb);
#pragma omp parallel for schedule(static)
        for (Index i = 0; i < batch; ++i) {
          Eigen::Map<const detail::RowMajor<Scalar>> g(out.grad.data() + i * m * n, m, n);
          Eigen::Map<const detail::RowMajor<Scalar>> am(na->value.data() + i * m * k, m, k);
          Eigen::Map<const detail::RowMajor<Scalar>> bm(nb->value.data() + i * br * bc, br, bc);
          if (ga) {
            Eigen::Map<detail::RowMajor<Scalar>> gam(ga->data() + i * m * k, m, k);
            if (transpose_b) gam.noalias() += g * bm;
            else gam.noalias() += g * bm.transpose();
          }
          if (gb) {
            Eigen::Map<detail::RowMajor<Scalar>> gbm(gb->data() + i * br * bc, br, bc);
            if (transpose_b) gbm.noalias() += g.transpose() * am;
            else gbm.noalias() += am.transpose() * g;
          }
        }
      });
}

// ------------------------------------------------------------ layout ops

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  check_shape(numel(shape) == x.size(), "reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  auto nx = x.node();
  return detail::record<Scalar>(std::move(shape), nx->value, {nx}, [nx](Node<Scalar>& out) {
    if (auto* g = detail::grad_of<Scalar>(nx)) *g += out.grad;
  });
}

/// Generic axis permutation: out.shape[i] = x.shape[perm[i]].
template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<Index>& perm) {
  using A = typename Node<Scalar>::Array;
  const Index r = x.rank();
  check_shape(static_cast<Index>(perm.size()) == r, "permute: permutation rank mismatch");
  const Shape& s = x.shape();
  Shape out_shape(r);
  std::vector<Index> in_strides(r), out_strides(r);
  for (Index i = r - 1, st = 1; i >= 0; --i) {
    in_strides[i] = st;
    st *= s[i];
  }
  for (Index i = 0; i < r; ++i) out_shape[i] = s[perm[i]];
  for (Index i = r - 1, st = 1; i >= 0; --i) {
    out_strides[i] = st;
    st *= out_shape[i];
  }
  // stride in the input for stepping along each output axis
  std::vector<Index> src_strides(r);
  for (Index i = 0; i < r; ++i) src_strides[i] = in_strides[perm[i]];

  // map[j] = input offset of output element j; contiguous trailing block copied as a unit
  const Index block = (r > 0 && perm[r - 1] == r - 1) ? out_shape[r - 1] : 1;
  const Index total = x.size(), blocks = total / std::max<Index>(block, 1);
  std::vector<Index> offsets(blocks);
  {
    const Index outer_rank = block > 1 ? r - 1 : r;
    std::vector<Index> idx(outer_rank, 0);
    Index off = 0;
    for (Index bidx = 0; bidx < blocks; ++bidx) {
      offsets[bidx] = off;
      for (Index ax = outer_rank - 1; ax >= 0; --ax) {
        if (++idx[ax] < out_shape[ax]) {
          off += src_strides[ax];
          break;
        }
        off -= src_strides[ax] * (out_shape[ax] - 1);
        idx[ax] = 0;
      }
    }
  }
  auto nx = x.node();
  A y(total);
  for (Index bidx = 0; bidx < blocks; ++bidx) y.segment(bidx * block, block) = nx->value.segment(offsets[bidx], block);
  return detail::record<Scalar>(out_shape, std::move(y), {nx},
                                [nx, offsets = std::move(offsets), block](Node<Scalar>& out) {
                                  if (auto* g = detail::grad_of<Scalar>(nx))
                                    for (std::size_t b = 0; b < offsets.size(); ++b)
                                      g->segment(offsets[b], block) += out.grad.segment(Index(b) * block, block);
                                });
}

/// Swaps the last two axes.
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  check_shape(x.rank() >= 2, "transpose: need rank >= 2");
  std::vector<Index> perm(x.rank());
  std::iota(perm.begin(), perm.end(), Index{0});
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, perm);
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, Index axis, Index start, Index length) {
  using A = typename Node<Scalar>::Array;
  axis = detail::normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  check_shape(start >= 0 && length >= 0 && start + length <= s[axis], "slice: range out of bounds");
  const Index outer = numel(Shape(s.begin(), s.begin() + axis));
  const Index inner = numel(Shape(s.begin() + axis + 1, s.end()));
  const Index len = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  auto nx = x.node();
  A y(outer * length * inner);
  for (Index o = 0; o < outer; ++o)
    y.segment(o * length * inner, length * inner) = nx->value.segment((o * len + start) * inner, length * inner);
  return detail::record<Scalar>(out_shape, std::move(y), {nx}, [nx, outer, inner, len, start, length](Node<Scalar>& out) {
    if (auto* g = detail::grad_of<Scalar>(nx))
      for (Index o = 0; o < outer; ++o)
        g->segment((o * len + start) * inner, length * inner) += out.grad.segment(o * length * inner, length * inner);
  });
}

/// slice of length one with the axis removed.
template <typename Scalar>
Tensor<Scalar> select(const Tensor<Scalar>& x, Index axis, Index index) {
  axis = detail::normalize_axis(axis, x.rank());
  Shape s = x.shape();
  s.erase(s.begin() + axis);
  return reshape(slice(x, axis, index, 1), s);
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& xs, Index axis) {
  using A = typename Node<Scalar>::Array;
  check_shape(!xs.empty(), "concat: no inputs");
  axis = detail::normalize_axis(axis, xs.front().rank());
  Shape out_shape = xs.front().shape();
  out_shape[axis] = 0;
  std::vector<Index> lens;
  for (const auto& x : xs) {
    Shape a = x.shape(), b = xs.front().shape();
    check_shape(a.size() == b.size(), "concat: rank mismatch");
    a[axis] = b[axis] = 0;
    check_shape(a == b, "concat: shapes differ off the concat axis");
    lens.push_back(x.dim(axis));
    out_shape[axis] += x.dim(axis);
  }
  const Index outer = numel(Shape(out_shape.begin(), out_shape.begin() + axis));
  const Index inner = numel(Shape(out_shape.begin() + axis + 1, out_shape.end()));
  const Index total_len = out_shape[axis];
  std::vector<detail::NodePtr<Scalar>> nodes;
  for (const auto& x : xs) nodes.push_back(x.node());
  A y(numel(out_shape));
  for (Index o = 0; o < outer; ++o) {
    Index pos = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      y.segment((o * total_len + pos) * inner, lens[i] * inner) = nodes[i]->value.segment(o * lens[i] * inner, lens[i] * inner);
      pos += lens[i];
    }
  }
  return detail::record<Scalar>(out_shape, std::move(y), nodes, [nodes, lens, outer, inner, total_len](Node<Scalar>& out) {
    for (Index o = 0; o < outer; ++o) {
      Index pos = 0;
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (auto* g = detail::grad_of<Scalar>(nodes[i]))
          g->segment(o * lens[i] * inner, lens[i] * inner) += out.grad.segment((o * total_len + pos) * inner, lens[i] * inner);
        pos += lens[i];
      }
    }
  });
}

/// Stacks equally shaped tensors along a new axis.
template <typename Scalar>
Tensor<Scalar> stack(const std::vector<Tensor<Scalar>>& xs, Index axis) {
  check_shape(!xs.empty(), "stack: no inputs");
  const Index r = xs.front().rank() + 1;
  axis = detail::normalize_axis(axis, r);
  std::vector<Tensor<Scalar>> expanded;
  expanded.reserve(xs.size());
  for (const auto& x : xs) {
    Shape s = x.shape();
    s.insert(s.begin() + axis, 1);
    expanded.push_back(reshape(x, s));
  }
  return concat(expanded, axis);
}

// ------------------------------------------------------------ normalizers

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis = -1) {
  using A = typename Node<Scalar>::Array;
  axis = detail::normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  const Index len = s[axis];
  check_shape(len > 0, "softmax: empty axis");
  const Index outer = numel(Shape(s.begin(), s.begin() + axis));
  const Index inner = numel(Shape(s.begin() + axis + 1, s.end()));
  auto nx = x.node();
  A y(x.size());
  if (inner == 1) {
    // contiguous rows: plain vectorizable maps
    for (Index o = 0; o < outer; ++o) {
      Eigen::Map<const A> in(nx->value.data() + o * len, len);
      Eigen::Map<A> out(y.data() + o * len, len);
      out = (in - in.maxCoeff()).exp();
      out *= Scalar(1) / out.sum();
    }
  } else {
    for (Index o = 0; o < outer; ++o) {
      for (Index i = 0; i < inner; ++i) {
        const Index base = o * len * inner + i;
        Eigen::Map<const A, 0, Eigen::InnerStride<>> in(nx->value.data() + base, len, Eigen::InnerStride<>(inner));
        Eigen::Map<A, 0, Eigen::InnerStride<>> out(y.data() + base, len, Eigen::InnerStride<>(inner));
        out = (in - in.maxCoeff()).exp();
        out /= out.sum();
      }
    }
  }
  return detail::record<Scalar>(s, std::move(y), {nx}, [nx, outer, len, inner](Node<Scalar>& node) {
    auto* g = detail::grad_of<Scalar>(nx);
    if (!g) return;
    if (inner == 1) {
      for (Index o = 0; o < outer; ++o) {
        Eigen::Map<const A> yv(node.value.data() + o * len, len), gy(node.grad.data() + o * len, len);
        Eigen::Map<A> gx(g->data() + o * len, len);
        const Scalar dot = (yv * gy).sum();
        gx += yv * (gy - dot);
      }
      return;
    }
    for (Index o = 0; o < outer; ++o) {
      for (Index i = 0; i < inner; ++i) {
        const Index base = o * len * inner + i;
        Eigen::Map<const A, 0, Eigen::InnerStride<>> yv(node.value.data() + base, len, Eigen::InnerStride<>(inner));
        Eigen::Map<const A, 0, Eigen::InnerStride<>> gy(node.grad.data() + base, len, Eigen::InnerStride<>(inner));
        Eigen::Map<A, 0, Eigen::InnerStride<>> gx(g->data() + base, len, Eigen::InnerStride<>(inner));
        const Scalar dot = (yv * gy).sum();
        gx += yv * (gy - dot);
      }
    }
  });
}

/// Normalizes over the last axis, then applies gain * x_hat + bias (both [D]).
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias,
                          Scalar eps = Scalar(1e-5)) {
  using A = typename Node<Scalar>::Array;
  const Index d = x.dim(-1), rows = x.size() / d;
  check_shape(gain.shape() == Shape{d} && bias.shape() == Shape{d}, "layer_norm: gain/bias must be [D]");
  auto nx = x.node(), ng = gain.node(), nb = bias.node();
  A xhat(x.size()), inv_std(rows), y(x.size());
  {
    const auto xv = detail::as_matrix<Scalar>(nx->value, rows, d);
    auto xh = detail::as_matrix<Scalar>(xhat, rows, d);
    for (Index r = 0; r < rows; ++r) {
      const Scalar mu = xv.row(r).mean();
      const Scalar var = (xv.row(r).array() - mu).square().mean();
      inv_std[r] = Scalar(1) / std::sqrt(var + eps);
      xh.row(r) = (xv.row(r).array() - mu) * inv_std[r];
    }
    auto ym = detail::as_matrix<Scalar>(y, rows, d);
    ym = (xh.array().rowwise() * ng->value.transpose()).rowwise() + nb->value.transpose();
  }
  return detail::record<Scalar>(x.shape(), std::move(y), {nx, ng, nb},
                                [nx, ng, nb, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Node<Scalar>& out) {
    const auto g = detail::as_matrix<Scalar>(out.grad, rows, d);
    const auto xh = detail::as_matrix<Scalar>(xhat, rows, d);
    if (auto* gg = detail::grad_of<Scalar>(ng)) *gg += (g.array() * xh.array()).colwise().sum().transpose();
    if (auto* gb = detail::grad_of<Scalar>(nb)) *gb += g.colwise().sum().transpose().array();
    if (auto* gx = detail::grad_of<Scalar>(nx)) {
      auto gxm = detail::as_matrix<Scalar>(*gx, rows, d);
      for (Index r = 0; r < rows; ++r) {
        const Eigen::Array<Scalar, 1, Eigen::Dynamic> gh = g.row(r).array() * ng->value.transpose();
        const Scalar m1 = gh.mean();
        const Scalar m2 = (gh * xh.row(r).array()).mean();
        gxm.row(r).array() += inv_std[r] * (gh - m1 - xh.row(r).array() * m2);
      }
    }
  });
}

// --------------------------------------------------------- complex pairs

/// Elementwise complex product of [..., 2] tensors of equal shape.
template <typename Scalar>
Tensor<Scalar> cmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using A = typename Node<Scalar>::Array;
  check_shape(a.shape() == b.shape() && a.rank() >= 1 && a.dim(-1) == 2,
              "cmul: need equal [..., 2] shapes, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const Index n = a.size() / 2;
  auto na = a.node(), nb = b.node();
  A y(a.size());
  {
    const auto av = detail::as_matrix<Scalar>(na->value, n, 2), bv = detail::as_matrix<Scalar>(nb->value, n, 2);
    auto ym = detail::as_matrix<Scalar>(y, n, 2);
    ym.col(0) = av.col(0).cwiseProduct(bv.col(0)) - av.col(1).cwiseProduct(bv.col(1));
    ym.col(1) = av.col(0).cwiseProduct(bv.col(1)) + av.col(1).cwiseProduct(bv.col(0));
  }
  return detail::record<Scalar>(a.shape(), std::move(y), {na, nb}, [na, nb, n](Node<Scalar>& out) {
    const auto g = detail::as_matrix<Scalar>(out.grad, n, 2);
    // dL/da = g * conj(b), dL/db = g * conj(a) in the (re, im) pairing
    auto backprop = [&](const detail::NodePtr<Scalar>& self, const detail::NodePtr<Scalar>& other) {
      if (auto* gs = detail::grad_of<Scalar>(self)) {
        const auto o = detail::as_matrix<Scalar>(other->value, n, 2);
        auto gm = detail::as_matrix<Scalar>(*gs, n, 2);
        gm.col(0) += g.col(0).cwiseProduct(o.col(0)) + g.col(1).cwiseProduct(o.col(1));
        gm.col(1) += g.col(1).cwiseProduct(o.col(0)) - g.col(0).cwiseProduct(o.col(1));
      }
    };
    backprop(na, nb);
    backprop(nb, na);
  });
}

template <typename Scalar>
Tensor<Scalar> conj(const Tensor<Scalar>& a) {
  using A = typename Node<Scalar>::Array;
  check_shape(a.rank() >= 1 && a.dim(-1) == 2, "conj: need a [..., 2] tensor");
  A sign(2);
  sign << Scalar(1), Scalar(-1);
  auto na = a.node();
  A y = na->value * sign.replicate(a.size() / 2, 1);
  return detail::record<Scalar>(a.shape(), std::move(y), {na}, [na, sign](Node<Scalar>& out) {
    if (auto* g = detail::grad_of<Scalar>(na)) *g += out.grad * sign.replicate(out.grad.size() / 2, 1);
  });
}

/// |z| of a [..., 2] tensor -> [...]; the gradient at z = 0 is taken as 0.
template <typename Scalar>
Tensor<Scalar> cabs(const Tensor<Scalar>& a) {
  using A = typename Node<Scalar>::Array;
  check_shape(a.rank() >= 1 && a.dim(-1) == 2, "cabs: need a [..., 2] tensor");
  const Index n = a.size() / 2;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  auto na = a.node();
  const auto av = detail::as_matrix<Scalar>(na->value, n, 2);
  A y = av.rowwise().norm().array();
  return detail::record<Scalar>(out_shape, std::move(y), {na}, [na, n](Node<Scalar>& out) {
    if (auto* g = detail::grad_of<Scalar>(na)) {
      const auto av = detail::as_matrix<Scalar>(na->value, n, 2);
      auto gm = detail::as_matrix<Scalar>(*g, n, 2);
      for (Index i = 0; i < n; ++i) {
        if (out.value[i] > Scalar(0)) gm.row(i) += (out.grad[i] / out.value[i]) * av.row(i);
      }
    }
  });
}

// ------------------------------------------------------------ custom ops

/// Records an op computed outside this header. `backward(out)` must add
/// dL/dinput into the grad buffers of inputs that require gradients.
template <typename Scalar>
Tensor<Scalar> custom_op(Shape shape, typename Tensor<Scalar>::Array value, const std::vector<Tensor<Scalar>>& inputs,
                         std::function<void(Node<Scalar>&)> backward) {
  std::vector<detail::NodePtr<Scalar>> nodes;
  for (const auto& x : inputs) nodes.push_back(x.node());
  return detail::record<Scalar>(std::move(shape), std::move(value), std::move(nodes), std::move(backward));
}

}  // namespace dptbf::ad
