#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "splice/tensor.hpp"

namespace splice::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One tape entry. Graphs are built per evaluation and discarded after
/// backward(); parameters are long-lived leaves re-used across graphs.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Var> parents;
  // Receives this node's grad, accumulates into parents' grads.
  std::function<void(const Tensor& grad_out)> backward_fn;

  void accumulate(const Tensor& g) {
    if (grad.empty())
      grad = Tensor::zeros(value.shape());
    grad.array() += g.array();
  }
  void zero_grad() { grad = Tensor(); }
};

inline Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

/// Trainable leaf.
inline Var leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

inline Var make_op(Tensor value, std::vector<Var> parents,
                   std::function<void(const Tensor&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

/// Reverse sweep from a scalar root (or with an explicit seed gradient).
void backward(const Var& root);
void backward(const Var& root, const Tensor& seed);

}  // namespace splice::ad
