#include "stprog/graph.hpp"

#include <algorithm>

#include "stprog/errors.hpp"

namespace stprog {

const Tensor& Var::value() const { return graph_->value(id_); }

double Var::scalar() const {
  const Tensor& t = value();
  if (t.size() != 1) {
    throw ShapeError(std::string("scalar(): node has shape ") + t.shape_str());
  }
  return t[0];
}

Var Graph::leaf(Tensor value, std::string name) {
  if (!value.defined()) throw ShapeError("leaf: undefined tensor");
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.name = std::move(name);
  n.is_leaf = true;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Graph::constant(Tensor value) {
  if (!value.defined()) throw ShapeError("constant: undefined tensor");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  n.is_leaf = true;
  n.needs_grad = false;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Graph::make(const char* op, Tensor value, std::vector<NodeId> inputs,
                BackwardFn backward) {
  if (!value.defined()) {
    throw ShapeError(std::string(op) + ": produced undefined tensor");
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  for (NodeId i : n.inputs) {
    if (i >= nodes_.size()) throw Error(std::string(op) + ": input id out of range");
    if (nodes_[i].needs_grad) n.needs_grad = true;
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Tensor& Graph::grad_buf(NodeId id) {
  Tensor& g = grads_[id];
  if (!g.defined()) g = Tensor(nodes_[id].value.shape());
  return g;
}

void Graph::backward(const Var& loss) {
  if (loss.graph() != this) throw Error("backward: loss belongs to another graph");
  const NodeId root = loss.id();
  if (nodes_[root].value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     nodes_[root].value.shape_str());
  }

  // Reachability sweep so that unrelated subgraphs are skipped and
  // unreached leaves read back as zero gradient.
  std::vector<char> reach(nodes_.size(), 0);
  std::vector<NodeId> stack{root};
  reach[root] = 1;
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    for (NodeId in : nodes_[id].inputs) {
      if (!reach[in] && nodes_[in].needs_grad) {
        reach[in] = 1;
        stack.push_back(in);
      }
    }
  }

  grads_.assign(nodes_.size(), Tensor());
  has_grads_ = true;
  grads_[root] = Tensor::scalar(1.0);

  // Reverse tape order == reverse topological order: every node is
  // processed after all of its consumers, exactly once.
  for (NodeId id = root + 1; id-- > 0;) {
    if (!reach[id]) continue;
    Node& n = nodes_[id];
    if (!grads_[id].defined()) continue;  // reachable but received no gradient
    if (n.backward) {
      n.backward(*this, id);
      grads_[id] = Tensor();  // consumed; free eagerly to bound memory
    }
    // Leaf gradients are retained for grad()/named_grads().
  }
}

Tensor Graph::grad(const Var& v) const {
  if (!has_grads_) throw Error("grad: backward() has not run");
  const Tensor& g = grads_[v.id()];
  if (g.defined()) return g;
  return Tensor(nodes_[v.id()].value.shape());
}

std::map<std::string, Tensor> Graph::named_grads() const {
  if (!has_grads_) throw Error("named_grads: backward() has not run");
  std::map<std::string, Tensor> out;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.is_leaf || n.name.empty()) continue;
    if (!grads_[id].defined()) continue;
    auto it = out.find(n.name);
    if (it == out.end()) {
      out.emplace(n.name, grads_[id]);
    } else {
      Tensor& acc = it->second;
      const Tensor& g = grads_[id];
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
  }
  return out;
}

void Graph::clear() {
  nodes_.clear();
  grads_.clear();
  has_grads_ = false;
}

}  // namespace stprog
