#include "coar/autograd.hpp"

#include <stdexcept>

namespace coar::ag {

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Graph::Node& Graph::node(Var v) {
  if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::logic_error("Var does not belong to this graph");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Graph::Node& Graph::node(Var v) const {
  if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::logic_error("Var does not belong to this graph");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Graph::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.is_leaf = true;
  return push(std::move(n));
}

Var Graph::variable(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  n.is_leaf = true;
  return push(std::move(n));
}

Var Graph::external(const Tensor& value, bool requires_grad) {
  Node n;
  n.ext = &value;
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  return push(std::move(n));
}

const Tensor& Graph::value(Var v) const { return node(v).value(); }

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.shape() == n.value().shape() && !n.grad.empty()) return n.grad;
  return Tensor(n.value().shape(), 0.0);
}

bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Graph::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (const Var& in : inputs) {
    if (node(in).requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

Tensor& Graph::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.shape() != n.value().shape() || n.grad.size() != n.value().size()) {
    n.grad = Tensor(n.value().shape(), 0.0);
  }
  return n.grad;
}

void Graph::backward(Var out) {
  Node& root = node(out);
  if (root.value().size() != 1) throw std::invalid_argument("backward() needs a single-element output");
  if (!root.requires_grad) return;
  grad_buffer(out)[0] += 1.0;
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.is_leaf || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad, n.value());
    // intermediate gradients are not needed once propagated
    n.grad = Tensor();
  }
}

Var ParamBinder::operator()(const Tensor& param) {
  if (auto it = leaves_.find(&param); it != leaves_.end()) return it->second;
  Var v = graph_.external(param, trainable_);
  leaves_.emplace(&param, v);
  return v;
}

Tensor ParamBinder::grad(const Tensor& param) const {
  if (auto it = leaves_.find(&param); it != leaves_.end()) return graph_.grad(it->second);
  return Tensor(param.shape(), 0.0);
}

}  // namespace coar::ag
