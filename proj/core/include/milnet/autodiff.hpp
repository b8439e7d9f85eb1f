#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "milnet/tensor.hpp"

namespace milnet {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
};

/// Tape of forward results recorded in creation order, which is a valid
/// topological order. backward() walks it in reverse exactly once.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);

  /// Records an op result. `backward` reads grad(self) and accumulates into inputs.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  void backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Upstream gradient buffer of `id`, allocated lazily as zeros.
  Tensor& grad_buffer(std::size_t id);

  /// Ops with discrete choices (ReLU masks, pooling argmax, sort order, clamp
  /// regions) mix them in here. Two evaluations with equal signatures lie on
  /// the same smooth piece of the function.
  void note_branch(std::uint64_t choice) { signature_ = (signature_ ^ choice) * 0x100000001b3ULL; }
  std::uint64_t branch_signature() const { return signature_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
  std::uint64_t signature_ = 0xcbf29ce484222325ULL;
};

}  // namespace milnet
