#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cycleseg/core/tensor.hpp"

namespace cycleseg::ad {

/// Global (per thread) switch controlling whether new ops record backward
/// edges. Off inside a NoGradGuard: ops then produce plain value nodes.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// One vertex of the tape. Interior nodes carry a closure that scatters this
/// node's gradient into its parents; leaves (inputs, parameters, detached
/// values) carry none. `seq` is a creation stamp used to process nodes in
/// reverse creation order during backward, which both respects dependencies
/// and makes gradient accumulation order deterministic.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first use; undefined means "all zero"
  bool needs_grad = false;
  int64_t seq = 0;
  std::vector<NodePtr<T>> parents;
  std::function<void(Node<T>&)> backprop;

  void ensure_grad() {
    if (!grad.defined()) grad = Tensor<T>(value.shape());
  }
  void accumulate(const Tensor<T>& g) {
    ensure_grad();
    T* dst = grad.data();
    const T* src = g.data();
    const int64_t n = grad.numel();
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
  }
};

template <typename T>
inline int64_t next_seq() {
  thread_local int64_t counter = 0;
  return ++counter;
}

/// Value handle used by all ops and modules. Copies are shallow (they share
/// the node), so a Var can be stored in a module and reused across steps —
/// gradients then accumulate on the same node until zeroed.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr<T> n) : node_(std::move(n)) {}

  /// A graph input. Parameters pass needs_grad = true; plain data false.
  static Var leaf(Tensor<T> value, bool needs_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->needs_grad = needs_grad;
    n->seq = next_seq<T>();
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const NodePtr<T>& node() const { return node_; }
  Tensor<T>& value() const { return node_->value; }
  Tensor<T>& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool needs_grad() const { return node_ && node_->needs_grad; }

  /// Toggle gradient tracking on a leaf, e.g. to freeze discriminator weights
  /// while the generator loss backpropagates through the discriminator.
  void set_needs_grad(bool on) const { node_->needs_grad = on; }

  void zero_grad() const { node_->grad = Tensor<T>(); }

  /// Fetch the single element of a scalar-shaped Var.
  T item() const {
    if (node_->value.numel() != 1)
      throw std::logic_error("Var::item: tensor has " + std::to_string(node_->value.numel()) +
                             " elements");
    return node_->value[0];
  }

  /// Same value, fresh leaf: gradients do not flow past this point.
  Var detach() const { return leaf(node_->value, false); }

 private:
  NodePtr<T> node_;
};

/// Standard constructor for op results. When grad mode is off, or no input
/// tracks gradients, the parents and closure are dropped so the graph stays
/// flat during evaluation.
template <typename T>
inline Var<T> make_node(Tensor<T> value, std::vector<NodePtr<T>> parents,
                        std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->seq = next_seq<T>();
  if (grad_mode()) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->needs_grad;
    if (needs) {
      n->needs_grad = true;
      n->parents = std::move(parents);
      n->backprop = std::move(backprop);
    }
  }
  return Var<T>(std::move(n));
}

/// Reverse pass from a scalar root. Seeds the root gradient with one, then
/// visits every reachable gradient-tracking node in reverse creation order.
template <typename T>
inline void backward(const Var<T>& root) {
  Node<T>* r = root.node().get();
  if (r->value.numel() != 1)
    throw std::logic_error("backward: root must be scalar, got shape " + r->value.shape().str());
  if (!r->needs_grad) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{r};
  seen.insert(r);
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p->needs_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });

  r->ensure_grad();
  r->grad[0] = T(1);
  for (Node<T>* n : order)
    if (n->backprop && n->grad.defined()) n->backprop(*n);
}

}  // namespace cycleseg::ad
