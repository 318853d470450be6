#pragma once

// Tape-based reverse-mode differentiation over dense 2-D tensors.
//
// Values are computed eagerly as ops are recorded, so "forward" is the act of
// building the graph. Nodes live in insertion order, which is a topological
// order; backward walks the tape once in reverse.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "ppodiff/errors.hpp"

namespace ppodiff {

using Tensor = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace ppodiff

namespace ppodiff::ad {

class Graph;

/// Handle to a node on a Graph. Cheap to copy; valid while its Graph lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

  std::size_t id() const { return id_; }
  Graph* graph() const { return graph_; }
  bool requires_grad() const;

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  /// Propagates the upstream gradient of node `self` into its parents.
  using Backprop = std::function<void(Graph& g, std::size_t self, const Tensor& upstream)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;
  Graph& operator=(Graph&&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  /// Appends an op result. `backprop` is dropped when no parent needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, Backprop backprop, const char* op);
  Var record(Tensor value, std::span<const Var> parents, Backprop backprop, const char* op);

  /// Reverse pass from a scalar loss. Gradients of earlier passes are discarded.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& contribution) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = contribution;
    } else {
      node.grad += contribution;
    }
  }

 private:
  struct Node {
    Tensor value;
    mutable Tensor grad;
    bool requires_grad = false;
    Backprop backprop;
    const char* op = "";
  };

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }
inline const Tensor& Var::grad() const { return graph_->grad(id_); }
inline bool Var::requires_grad() const { return graph_->requires_grad(id_); }

/// Returns the plain value of `root`; every op already checked finiteness.
inline const Tensor& forward(Var root) { return root.value(); }

// Elementwise arithmetic. Shapes must match exactly.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator*(double c, Var a);
inline Var operator*(Var a, double c) { return c * a; }
inline Var operator-(Var a, double c) { return a + (-c); }
Var hadamard(Var a, Var b);

/// x (n x m) plus a 1 x m row broadcast down the rows.
Var add_row(Var x, Var row);
/// Multiplies row i of x by the constant c(i).
Var scale_rows(Var x, const Vector& c);
Var matmul(Var a, Var b);

Var tanh(Var x);
Var silu(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
/// Clamps into [lo, hi]; gradient passes only where lo < x < hi.
Var clip(Var x, double lo, double hi);
/// Elementwise minimum; ties route the gradient to `a`.
Var minimum(Var a, Var b);
/// Row-wise softmax.
Var softmax(Var x);

Var sum(Var x);
Var mean(Var x);
/// n x m -> n x 1.
Var row_sum(Var x);

Var concat_cols(std::span<const Var> parts);
inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}
Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);

}  // namespace ppodiff::ad
