#include "milnet/autodiff.hpp"

#include <stdexcept>

namespace milnet {

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->grad(id); }

Var Graph::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, {}, {}});
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw std::logic_error("graph input refers to a future node");
    needs = needs || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, needs, std::move(inputs), needs ? std::move(backward) : BackwardFn{}});
  return Var{this, nodes_.size() - 1};
}

const Tensor& Graph::grad(std::size_t id) const {
  const auto& node = nodes_.at(id);
  if (node.grad.numel() == 0) throw std::logic_error("no gradient recorded for node " + std::to_string(id));
  return node.grad;
}

Tensor& Graph::grad_buffer(std::size_t id) {
  auto& node = nodes_.at(id);
  if (node.grad.numel() == 0) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

void Graph::backward(Var root) {
  if (root.graph != this) throw std::logic_error("backward root belongs to another graph");
  if (backward_done_) throw std::logic_error("backward already run on this graph");
  if (nodes_.at(root.id).value.numel() != 1) {
    throw std::invalid_argument("backward root must be a scalar, got " + shape_str(nodes_[root.id].value.shape()));
  }
  backward_done_ = true;
  grad_buffer(root.id).fill(1.0);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.requires_grad || node.grad.numel() == 0 || !node.backward) continue;
    node.backward(*this, i);
  }
  // Leaves that require grad but were never reached still get a zero gradient.
  for (auto& node : nodes_) {
    if (node.requires_grad && node.grad.numel() == 0) node.grad = Tensor(node.value.shape(), 0.0);
  }
}

}  // namespace milnet
