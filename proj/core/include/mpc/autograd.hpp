#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpc/tensor.hpp"

namespace mpc {

/// Named parameter tensors. Ordered so that iteration (and therefore
/// optimizer updates and checkpoint layout) is deterministic.
using ParamStore = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Tape for reverse-mode differentiation. Nodes are appended in evaluation
/// order, so the tape is acyclic by construction and backward() is a single
/// reverse sweep. A parameter requested several times maps to one leaf, which
/// therefore receives the sum of all its contributions.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  explicit Graph(const ParamStore* params = nullptr) : params_(params) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Differentiable leaf that is not part of the parameter store.
  Var variable(Tensor value);
  Var param(const std::string& name);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }

  /// Runs the reverse sweep from a scalar node and returns d(loss)/d(param)
  /// for every parameter leaf that was requested while building the graph.
  Gradients backward(Var loss);
  /// Gradient of the last backward() with respect to any node (zeros if the
  /// node did not influence the loss).
  Tensor gradient(Var v) const;

  // Op plumbing.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad(std::size_t id);
  const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool grad_ready = false;
  };

  Var push(Node node);

  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
  std::vector<std::pair<std::string, std::size_t>> param_order_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. All are defined for rank-2 tensors; rank-1
// tensors are treated as a single row where noted.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Adds a length-n vector to every row of an m x n matrix.
Var add_row(Var a, Var bias);
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var abs(Var a);
/// 1 - a, elementwise.
Var one_minus(Var a);

/// Softmax along `axis` (0 = down columns, 1 or -1 = along rows).
Var softmax(Var x, int axis = -1);
/// Row softmax restricted to entries where `allowed` is nonzero (same shape
/// as x). Disallowed entries get probability exactly 0.
Var masked_softmax(Var x, const std::vector<unsigned char>& allowed);
Var log_softmax(Var x);
/// Row-wise layer normalization followed by the affine transform.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

Var sum(Var a);
Var mean(Var a);

/// Rows of `a` at `indices` (repeats allowed), e.g. embedding lookup.
Var select_rows(Var a, std::vector<std::size_t> indices);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
/// out[i][j] = a[i][indices[i][j]]; every row of `indices` has the same length.
Var gather_cols(Var a, const std::vector<std::vector<std::size_t>>& indices);
/// out[i] = a[i][indices[i]], returned as a column vector (m x 1).
Var pick(Var a, const std::vector<std::size_t>& indices);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var reshape(Var a, Shape shape);

}  // namespace mpc
