#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "stprog/tensor.hpp"

namespace stprog {

class Graph;
using NodeId = std::uint32_t;

/// Lightweight handle to a node inside a Graph. Valid until the graph is
/// cleared or destroyed.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape(); }
  double scalar() const;  // requires size 1
  NodeId id() const { return id_; }
  Graph* graph() const { return graph_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, NodeId id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is by
/// construction a topological order; backward() walks the tape once in
/// reverse, so gradient accumulation order is fixed and runs are
/// bit-reproducible.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Trainable leaf. `name` keys the gradient in named_grads(); several
  /// leaves may share a name (their gradients sum).
  Var leaf(Tensor value, std::string name = {});

  /// Non-trainable source (data inputs, constants). Gradients are not
  /// propagated into subgraphs that reach only constants.
  Var constant(Tensor value);

  /// Interior node. `op` is a diagnostic label; `backward` reads
  /// grad(self) and accumulates into the inputs' buffers.
  Var make(const char* op, Tensor value, std::vector<NodeId> inputs,
           BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& value(const Var& v) const { return nodes_[v.id()].value; }
  const char* op(NodeId id) const { return nodes_[id].op; }
  bool needs_grad(NodeId id) const { return nodes_[id].needs_grad; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_[id].inputs; }

  /// Runs reverse-mode differentiation from a scalar loss. Clears any
  /// previous gradients. Each reachable node's backward runs exactly once.
  void backward(const Var& loss);

  /// Gradient of the given leaf/node after backward(); zeros if the node
  /// was not reached from the loss.
  Tensor grad(const Var& v) const;

  /// Sum of gradients per leaf name (leaves sharing a name accumulate).
  std::map<std::string, Tensor> named_grads() const;

  /// Accumulation buffer for a node, zero-allocated on first use.
  /// Only meaningful inside backward callbacks.
  Tensor& grad_buf(NodeId id);
  const Tensor& grad_of(NodeId id) const { return grads_[id]; }

  std::size_t num_nodes() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    const char* op;
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;  // empty for leaves/constants
    std::string name;     // leaf name ("" for unnamed)
    bool is_leaf = false;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool has_grads_ = false;
};

}  // namespace stprog
