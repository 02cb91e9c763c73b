#include "splice/autodiff.hpp"

#include <algorithm>

namespace splice::ad {

namespace {

// Iterative post-order topological sort over the requires_grad subgraph.
void topo_sort(const Var& root, std::vector<Node*>& order) {
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace

void backward(const Var& root, const Tensor& seed) {
  if (!root->requires_grad) return;
  root->accumulate(seed);
  std::vector<Node*> order;
  topo_sort(root, order);
  // Post-order ends at the root; sweep in reverse.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(n->grad);
  }
  // Interior grads are not needed once the sweep is done; freeing them keeps
  // peak memory bounded when graphs are rebuilt every iteration.
  for (Node* n : order)
    if (n->backward_fn) n->zero_grad();
}

void backward(const Var& root) {
  if (root->value.size() != 1)
    throw std::logic_error("backward: root must be scalar");
  backward(root, Tensor::scalar(1.0f));
}

}  // namespace splice::ad
