// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "dgamil/tensor.hpp"

namespace dgamil {

// One node of the reverse-mode tape. `backward` reads this->grad and
// accumulates into the parents' grads; it is only installed when some parent
// requires gradients, so inference forwards carry no closure cost.
struct Node {
  Tensor value;
  Tensor grad;  // empty until gradient actually flows here
  bool needs_grad = false;
  int idx = -1;
  std::function<void()> backward;
};

using Var = Node*;

// Dynamic tape: nodes are appended in execution order and visited in reverse
// on backward(). One tape per training step; parameters live outside the tape
// and are bound as leaves each step.
class Tape {
 public:
  Var leaf(Tensor value, bool needs_grad = false) {
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.idx = static_cast<int>(nodes_.size()) - 1;
    return &n;
  }

  Var make(Tensor value, std::initializer_list<Var> parents) {
    bool ng = false;
    for (Var p : parents) ng = ng || (p && p->needs_grad);
    return leaf(std::move(value), ng);
  }

  Var make(Tensor value, const std::vector<Var>& parents) {
    bool ng = false;
    for (Var p : parents) ng = ng || (p && p->needs_grad);
    return leaf(std::move(value), ng);
  }

  static Tensor& ensure_grad(Var v) {
    if (v->grad.numel() == 0) v->grad = Tensor::zeros(v->value.shape);
    return v->grad;
  }

  // Seeds d(root)/d(root) = 1 and walks the tape backwards. `root` must be a
  // scalar produced on this tape.
  void backward(Var root) {
    if (root->value.numel() != 1)
      throw ShapeError("backward: root must be a scalar, got " + root->value.shape_str());
    if (!root->needs_grad)
      throw ConfigError("backward: no parameter on the path to the loss requires gradients");
    ensure_grad(root)[0] = 1.0;
    for (int i = root->idx; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.backward && n.grad.numel() != 0) n.backward();
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;  // deque keeps Node* stable across growth
};

}  // namespace dgamil
