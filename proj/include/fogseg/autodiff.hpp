#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "fogseg/tensor.hpp"

namespace fogseg {

// Reverse-mode tape node. Graphs are built per sample, so nodes never outlive
// one optimization step and reference counting handles cleanup.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;  // leaf flag: gradients are accumulated here
  bool needs = false;          // true if any leaf below requires a gradient
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;

  void ensure_grad() {
    if (grad.numel() == 0) grad = Tensor<T>(value.dims(), T(0));
  }

  void accumulate(const Tensor<T>& g) {
    ensure_grad();
    T* dst = grad.mutable_data();
    const T* src = g.data();
    const int64_t n = grad.numel();
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

using Varf = Var<float>;
using Vard = Var<double>;

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->needs = requires_grad;
  return n;
}

template <typename T>
Var<T> make_const(Tensor<T> value) {
  return make_leaf(std::move(value), false);
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (auto& p : parents) n->needs = n->needs || p->needs;
  n->parents = std::move(parents);
  if (n->needs) n->backprop = std::move(backprop);
  return n;
}

// Reverse topological sweep from a scalar root. Iterative DFS so deep decoder
// chains cannot overflow the stack.
template <typename T>
void backward(const Var<T>& root) {
  if (root->value.numel() != 1)
    throw NumericError("backward: root must be a scalar");
  if (!root->needs) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx].get();
      ++idx;
      if (p->needs && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad.mutable_data()[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop && n->grad.numel() != 0) n->backprop(*n);
  }
}

}  // namespace fogseg
