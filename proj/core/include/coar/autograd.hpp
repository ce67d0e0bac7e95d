#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Graph records every op in creation order; backward() walks the tape in
// reverse. Nodes are only recorded for backward when at least one input
// requires a gradient, so pure inference builds no closures.

#include <deque>
#include <functional>
#include <initializer_list>
#include <unordered_map>
#include <vector>

#include "coar/tensor.hpp"

namespace coar::ag {

class Graph;

/// Handle to a node in a Graph. Cheap to copy.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor& value() const;
  const std::vector<int>& shape() const { return value().shape(); }
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out, const Tensor& out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf that owns its value and accumulates a gradient.
  Var variable(Tensor value);
  /// Leaf referencing caller-owned storage, which must outlive the graph.
  Var external(const Tensor& value, bool requires_grad);

  const Tensor& value(Var v) const;
  /// Accumulated gradient; an all-zero tensor of the right shape when the
  /// node received none.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(out)/d(out) = 1 for a single-element `out` and propagates.
  void backward(Var out);

  /// Appends an op node. `fn` is dropped unless some input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  /// Gradient accumulator for `v`, zero-initialised on first use. Only valid
  /// while backward() is running or after it finished.
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    Tensor owned;
    const Tensor* ext = nullptr;
    Tensor grad;
    bool requires_grad = false;
    bool is_leaf = false;
    BackwardFn backward;

    const Tensor& value() const { return ext ? *ext : owned; }
  };

  Var push(Node node);
  Node& node(Var v);
  const Node& node(Var v) const;

  std::deque<Node> nodes_;
};

/// Maps model parameters (by storage address) onto graph leaves, so a forward
/// pass can be written against plain parameter structs and the gradients
/// collected afterwards.
class ParamBinder {
 public:
  ParamBinder(Graph& graph, bool trainable) : graph_(graph), trainable_(trainable) {}

  Var operator()(const Tensor& param);
  /// Gradient for a bound parameter; all zeros if it was never used.
  Tensor grad(const Tensor& param) const;
  bool bound(const Tensor& param) const { return leaves_.contains(&param); }

  Graph& graph() { return graph_; }
  bool trainable() const { return trainable_; }

 private:
  Graph& graph_;
  bool trainable_;
  std::unordered_map<const Tensor*, Var> leaves_;
};

}  // namespace coar::ag
