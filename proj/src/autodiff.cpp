#include "ppodiff/autodiff.hpp"

#include <string>

namespace ppodiff::ad {

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.graph() != b.graph()) {
    throw ShapeError(std::string(op) + ": operands belong to different graphs");
  }
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

}  // namespace

double Var::scalar() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on a non-scalar node");
  return v(0, 0);
}

Var Graph::constant(Tensor value) {
  return record(std::move(value), std::span<const Var>{}, nullptr, "constant");
}

Var Graph::variable(Tensor value) {
  Var v = record(std::move(value), std::span<const Var>{}, nullptr, "variable");
  nodes_[v.id()].requires_grad = true;
  return v;
}

Var Graph::record(Tensor value, std::initializer_list<Var> parents, Backprop backprop,
                  const char* op) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backprop), op);
}

Var Graph::record(Tensor value, std::span<const Var> parents, Backprop backprop, const char* op) {
  const std::size_t id = nodes_.size();
  if (!value.allFinite()) throw NonFiniteValue(op, id);
  bool needs = false;
  for (const Var& p : parents) needs = needs || requires_grad(p.id());
  Node node;
  node.value = std::move(value);
  node.requires_grad = needs;
  if (needs) node.backprop = std::move(backprop);
  node.op = op;
  nodes_.push_back(std::move(node));
  return Var(this, id);
}

const Tensor& Graph::grad(std::size_t id) const {
  const Node& node = nodes_[id];
  if (node.grad.size() == 0) node.grad = Tensor::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw ShapeError("backward: loss belongs to another graph");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + std::to_string(loss.rows()) + "x" +
                     std::to_string(loss.cols()));
  }
  for (Node& node : nodes_) node.grad.resize(0, 0);
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Tensor::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backprop || node.grad.size() == 0) continue;
    // Parents always have smaller ids, so accumulate never touches node.grad here.
    node.backprop(*this, i, node.grad);
  }
}

Var operator+(Var a, Var b) {
  require_same_shape(a, b, "add");
  Graph& g = *a.graph();
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(a.value() + b.value(), {a, b},
                  [ia, ib](Graph& gg, std::size_t, const Tensor& up) {
                    gg.accumulate(ia, up);
                    gg.accumulate(ib, up);
                  },
                  "add");
}

Var operator-(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Graph& g = *a.graph();
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(a.value() - b.value(), {a, b},
                  [ia, ib](Graph& gg, std::size_t, const Tensor& up) {
                    gg.accumulate(ia, up);
                    gg.accumulate(ib, -up);
                  },
                  "sub");
}

Var operator-(Var a) {
  Graph& g = *a.graph();
  const std::size_t ia = a.id();
  return g.record(-a.value(), {a},
                  [ia](Graph& gg, std::size_t, const Tensor& up) { gg.accumulate(ia, -up); },
                  "neg");
}

Var operator+(Var a, double c) {
  Graph& g = *a.graph();
  const std::size_t ia = a.id();
  return g.record((a.value().array() + c).matrix(), {a},
                  [ia](Graph& gg, std::size_t, const Tensor& up) { gg.accumulate(ia, up); },
                  "add_scalar");
}

Var operator*(double c, Var a) {
  Graph& g = *a.graph();
  const std::size_t ia = a.id();
  return g.record(c * a.value(), {a},
                  [ia, c](Graph& gg, std::size_t, const Tensor& up) { gg.accumulate(ia, c * up); },
                  "scale");
}

Var hadamard(Var a, Var b) {
  require_same_shape(a, b, "hadamard");
  Graph& g = *a.graph();
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(a.value().cwiseProduct(b.value()), {a, b},
                  [ia, ib](Graph& gg, std::size_t, const Tensor& up) {
                    if (gg.requires_grad(ia)) gg.accumulate(ia, up.cwiseProduct(gg.value(ib)));
                    if (gg.requires_grad(ib)) gg.accumulate(ib, up.cwiseProduct(gg.value(ia)));
                  },
                  "hadamard");
}

Var add_row(Var x, Var row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw ShapeError("add_row: expected a 1x" + std::to_string(x.cols()) + " row");
  }
  Graph& g = *x.graph();
  const std::size_t ix = x.id(), ir = row.id();
  Tensor out = x.value().rowwise() + row.value().row(0);
  return g.record(std::move(out), {x, row},
                  [ix, ir](Graph& gg, std::size_t, const Tensor& up) {
                    gg.accumulate(ix, up);
                    if (gg.requires_grad(ir)) gg.accumulate(ir, up.colwise().sum());
                  },
                  "add_row");
}

Var scale_rows(Var x, const Vector& c) {
  if (c.size() != x.rows()) throw ShapeError("scale_rows: coefficient count != rows");
  Graph& g = *x.graph();
  const std::size_t ix = x.id();
  Tensor out = c.asDiagonal() * x.value();
  return g.record(std::move(out), {x},
                  [ix, c](Graph& gg, std::size_t, const Tensor& up) {
                    gg.accumulate(ix, c.asDiagonal() * up);
                  },
                  "scale_rows");
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " differ");
  }
  Graph& g = *a.graph();
  const std::size_t ia = a.id(), ib = b.id();
  Tensor out = a.value() * b.value();
  return g.record(std::move(out), {a, b},
                  [ia, ib](Graph& gg, std::size_t, const Tensor& up) {
                    if (gg.requires_grad(ia)) gg.accumulate(ia, up * gg.value(ib).transpose());
                    if (gg.requires_grad(ib)) gg.accumulate(ib, gg.value(ia).transpose() * up);
                  },
                  "matmul");
}

Var tanh(Var x) {
  Graph& g = *x.graph();
  const std::size_t ix = x.id();
  Tensor out = x.value().array().tanh().matrix();
  return g.record(std::move(out), {x},
                  [ix](Graph& gg, std::size_t self, const Tensor& up) {
                    const auto& y = gg.value(self).array();
                    gg.accumulate(ix, (up.array() * (1.0 - y.square())).matrix());
                  },
                  "tanh");
}

Var silu(Var x) {
  Graph& g = *x.graph();
  const std::size_t ix = x.id();
  const auto& v = x.value().array();
  Tensor out = (v / (1.0 + (-v).exp())).matrix();
  return g.record(std::move(out), {x},
                  [ix](Graph& gg, std::size_t, const Tensor& up) {
                    const auto& xv = gg.value(ix).array();
                    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-xv).exp());
                    gg.accumulate(ix, (up.array() * (s * (1.0 + xv * (1.0 - s)))).matrix());
                  },
                  "silu");
}

Var exp(Var x) {
  Graph& g = *x.graph();
  const std::size_t ix = x.id();
  Tensor out = x.value().array().exp().matrix();
  return g.record(std::move(out), {x},
                  [ix](Graph& gg, std::size_t self, const Tensor& up) {
                    gg.accumulate(ix, up.cwiseProduct(gg.value(self)));
                  },
                  "exp");
}

Var log(Var x) {
  Graph& g = *x.graph();
  const std::size_t ix = x.id();
  Tensor out = x.value().array().log().matrix();
  return g.record(std::move(out), {x},
                  [ix](Graph& gg, std::size_t, const Tensor& up) {
                    gg.accumulate(ix, up.cwiseQuotient(gg.value(ix)));
                  },
                  "log");
}

Var square(Var x) {
  Graph& g = *x.graph();
  const std::size_t ix = x.id();
  Tensor out = x.value().array().square().matrix();
  return g.record(std::move(out), {x},
                  [ix](Graph& gg, std::size_t, const Tensor& up) {
                    gg.accumulate(ix, 2.0 * up.cwiseProduct(gg.value(ix)));
                  },
                  "square");
}

Var clip(Var x, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clip: lo > hi");
  Graph& g = *x.graph();
  const std::size_t ix = x.id();
  Tensor out = x.value().cwiseMax(lo).cwiseMin(hi);
  return g.record(std::move(out), {x},
                  [ix, lo, hi](Graph& gg, std::size_t, const Tensor& up) {
                    const auto& xv = gg.value(ix).array();
                    gg.accumulate(ix, ((xv > lo && xv < hi).cast<double>() * up.array()).matrix());
                  },
                  "clip");
}

Var minimum(Var a, Var b) {
  require_same_shape(a, b, "minimum");
  Graph& g = *a.graph();
  const std::size_t ia = a.id(), ib = b.id();
  Tensor out = a.value().cwiseMin(b.value());
  return g.record(std::move(out), {a, b},
                  [ia, ib](Graph& gg, std::size_t, const Tensor& up) {
                    const Eigen::ArrayXXd pick_a =
                        (gg.value(ia).array() <= gg.value(ib).array()).cast<double>();
                    if (gg.requires_grad(ia)) gg.accumulate(ia, (pick_a * up.array()).matrix());
                    if (gg.requires_grad(ib)) {
                      gg.accumulate(ib, ((1.0 - pick_a) * up.array()).matrix());
                    }
                  },
                  "minimum");
}

Var softmax(Var x) {
  Graph& g = *x.graph();
  const std::size_t ix = x.id();
  Tensor shifted = x.value().colwise() - x.value().rowwise().maxCoeff();
  Tensor e = shifted.array().exp().matrix();
  Tensor out = e.array().colwise() / e.rowwise().sum().array();
  return g.record(std::move(out), {x},
                  [ix](Graph& gg, std::size_t self, const Tensor& up) {
                    const Tensor& y = gg.value(self);
                    const Vector dot = up.cwiseProduct(y).rowwise().sum();
                    gg.accumulate(ix, (y.array() * (up.colwise() - dot).array()).matrix());
                  },
                  "softmax");
}

Var sum(Var x) {
  Graph& g = *x.graph();
  const std::size_t ix = x.id();
  Tensor out(1, 1);
  out(0, 0) = x.value().sum();
  const Eigen::Index r = x.rows(), c = x.cols();
  return g.record(std::move(out), {x},
                  [ix, r, c](Graph& gg, std::size_t, const Tensor& up) {
                    gg.accumulate(ix, Tensor::Constant(r, c, up(0, 0)));
                  },
                  "sum");
}

Var mean(Var x) {
  if (x.value().size() == 0) throw ShapeError("mean of an empty tensor");
  Graph& g = *x.graph();
  const std::size_t ix = x.id();
  Tensor out(1, 1);
  out(0, 0) = x.value().mean();
  const Eigen::Index r = x.rows(), c = x.cols();
  const double n = static_cast<double>(x.value().size());
  return g.record(std::move(out), {x},
                  [ix, r, c, n](Graph& gg, std::size_t, const Tensor& up) {
                    gg.accumulate(ix, Tensor::Constant(r, c, up(0, 0) / n));
                  },
                  "mean");
}

Var row_sum(Var x) {
  Graph& g = *x.graph();
  const std::size_t ix = x.id();
  Tensor out = x.value().rowwise().sum();
  const Eigen::Index c = x.cols();
  return g.record(std::move(out), {x},
                  [ix, c](Graph& gg, std::size_t, const Tensor& up) {
                    gg.accumulate(ix, up.replicate(1, c));
                  },
                  "row_sum");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Graph& g = *parts.front().graph();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> widths;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  return g.record(std::move(out), parts,
                  [ids, widths](Graph& gg, std::size_t, const Tensor& up) {
                    Eigen::Index offset = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (gg.requires_grad(ids[k])) {
                        gg.accumulate(ids[k], up.middleCols(offset, widths[k]));
                      }
                      offset += widths[k];
                    }
                  },
                  "concat_cols");
}

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw ShapeError("slice_cols: range out of bounds");
  }
  Graph& g = *x.graph();
  const std::size_t ix = x.id();
  const Eigen::Index r = x.rows(), c = x.cols();
  Tensor out = x.value().middleCols(start, count);
  return g.record(std::move(out), {x},
                  [ix, r, c, start, count](Graph& gg, std::size_t, const Tensor& up) {
                    Tensor full = Tensor::Zero(r, c);
                    full.middleCols(start, count) = up;
                    gg.accumulate(ix, full);
                  },
                  "slice_cols");
}

}  // namespace ppodiff::ad
