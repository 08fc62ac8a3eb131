#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rsd/common.hpp"

namespace rsd {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <typename S>
using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<MatRM<S>>;
template <typename S>
using MapConstMat = Eigen::Map<const MatRM<S>>;

template <typename S>
struct NodeT;

/// Dense n-d tensor of scalars, row-major, with an optional reverse-mode
/// graph edge. Copies are shallow (shared node); use clone() for a deep
/// copy. Stored values must stay finite; every op checks its output.
template <typename S>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    TensorT t;
    t.node_ = std::make_shared<NodeT<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value = Array<S>::Zero(numel_of(t.node_->shape));
    t.node_->requires_grad = requires_grad;
    return t;
  }
  static TensorT full(Shape shape, S v, bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    t.node_->value.setConstant(v);
    return t;
  }
  static TensorT scalar(S v, bool requires_grad = false) { return full({1}, v, requires_grad); }
  static TensorT from(Shape shape, std::vector<S> values, bool requires_grad = false) {
    if (numel_of(shape) != static_cast<std::int64_t>(values.size()))
      throw DimensionError("tensor literal: " + shape_str(shape) + " needs " +
                           std::to_string(numel_of(shape)) + " values, got " +
                           std::to_string(values.size()));
    TensorT t = zeros(std::move(shape), requires_grad);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.node_->value[i] = values[static_cast<std::size_t>(i)];
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->value.size(); }
  std::int64_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  Array<S>& data() { return node_->value; }
  const Array<S>& data() const { return node_->value; }
  S* raw() { return node_->value.data(); }
  const S* raw() const { return node_->value.data(); }
  S item() const {
    if (numel() != 1) throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() > 0; }
  /// Gradient buffer; zeros of matching size if backward has not reached
  /// this tensor yet.
  Array<S> grad() const {
    if (has_grad()) return node_->grad;
    return Array<S>::Zero(numel());
  }
  void clear_grad() { node_->grad.resize(0); }

  /// Deep copy with no graph history.
  TensorT clone(bool requires_grad = false) const {
    TensorT t = zeros(shape(), requires_grad);
    t.node_->value = node_->value;
    return t;
  }
  /// Same values, detached from the graph (leaf, no grad).
  TensorT detach() const { return clone(false); }

  std::shared_ptr<NodeT<S>> node() const { return node_; }
  explicit TensorT(std::shared_ptr<NodeT<S>> n) : node_(std::move(n)) {}

  template <typename T>
  TensorT<T> cast() const {
    TensorT<T> t = TensorT<T>::zeros(shape());
    t.data() = node_->value.template cast<T>();
    return t;
  }

 private:
  std::shared_ptr<NodeT<S>> node_;
};

/// Graph node: op tag, parent edges, cached forward value, backward rule.
/// The graph is acyclic by construction (ops only reference existing
/// tensors). backward_fn propagates this node's grad into its parents.
template <typename S>
struct NodeT {
  Shape shape;
  Array<S> value;
  Array<S> grad;  // size 0 until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<NodeT<S>>> parents;
  std::function<void(NodeT<S>&)> backward_fn;

  void accum_grad(const Array<S>& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
  void ensure_grad() {
    if (grad.size() == 0) grad = Array<S>::Zero(value.size());
  }
};

using Tensor = TensorT<float>;

namespace detail {

template <typename S>
inline void check_finite(const char* op, const Array<S>& v) {
  if (!v.allFinite()) throw NumericsError(std::string(op) + ": non-finite value in result");
}

/// Builds an op node. The backward closure is only attached when a parent
/// actually needs gradients, so frozen branches cost no extra memory.
template <typename S, typename BW>
TensorT<S> make_op(const char* op, Shape shape, Array<S> value,
                   std::initializer_list<TensorT<S>> parents, BW&& bw) {
  if (numel_of(shape) != value.size())
    throw DimensionError(std::string(op) + ": internal shape/value mismatch");
  check_finite(op, value);
  auto n = std::make_shared<NodeT<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  for (const auto& p : parents) {
    if (!p.defined()) throw UsageError(std::string(op) + ": undefined input tensor");
    if (p.requires_grad()) needs = true;
  }
  if (needs) {
    n->requires_grad = true;
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::forward<BW>(bw);
  }
  return TensorT<S>(n);
}

}  // namespace detail

/// Reverse-mode pass from a scalar root. Fills grad buffers of every
/// requires_grad tensor reachable from the root; each node's gradient is
/// fully accumulated (across fan-out) before its own rule runs, so every
/// parameter receives its gradient exactly once per call. Repeated calls
/// accumulate unless grads are cleared.
template <typename S>
void backward(const TensorT<S>& root) {
  if (!root.defined()) throw UsageError("backward: undefined tensor");
  if (root.numel() != 1) throw UsageError("backward: root must be scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS over grad-requiring ancestors.
  std::vector<NodeT<S>*> order;
  std::unordered_set<NodeT<S>*> seen;
  std::vector<std::pair<NodeT<S>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      NodeT<S>* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accum_grad(Array<S>::Constant(1, S(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<S>* n = *it;
    if (n->backward_fn && n->grad.size() > 0) n->backward_fn(*n);
  }
}

}  // namespace rsd
