#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward evaluation. Values and
// gradients live on the tape; trainable weights stay outside of it and are
// referenced by pointer, with their gradients accumulated into caller-owned
// flat buffers ("sinks") laid out exactly like the weights.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pdon/error.hpp"

namespace pdon::diffcore {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  /// Differentiable input; its gradient is readable through grad() after backward().
  Var leaf(Matrix value) { return push(std::move(value), true, {}); }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }

  /// Gradient of the last backward() loss w.r.t. v (zeros if v was not reached).
  Matrix grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool tracked(Var v) const { return nodes_.at(v.id).tracked; }
  std::size_t size() const { return nodes_.size(); }

  Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    return push(value(a) + value(b), tracked(a) || tracked(b), [a, b](Tape& t, const Matrix& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    return push(value(a) - value(b), tracked(a) || tracked(b), [a, b](Tape& t, const Matrix& g) {
      t.accumulate(a, g);
      t.accumulate(b, -g);
    });
  }

  /// Element-wise product.
  Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    return push(value(a).cwiseProduct(value(b)), tracked(a) || tracked(b),
                [a, b](Tape& t, const Matrix& g) {
                  if (t.tracked(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
                  if (t.tracked(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
                });
  }

  Var scale(Var a, double s) {
    return push(value(a) * s, tracked(a), [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
  }

  Var square(Var a) { return mul(a, a); }

  /// a · bᵀ
  Var matmul_nt(Var a, Var b) {
    if (value(a).cols() != value(b).cols()) {
      throw UserError("matmul_nt: inner dimensions differ (" + std::to_string(value(a).cols()) + " vs " +
                      std::to_string(value(b).cols()) + ")");
    }
    Matrix out = value(a) * value(b).transpose();
    return push(std::move(out), tracked(a) || tracked(b), [a, b](Tape& t, const Matrix& g) {
      if (t.tracked(a)) t.accumulate(a, g * t.value(b));
      if (t.tracked(b)) t.accumulate(b, g.transpose() * t.value(a));
    });
  }

  /// x · Wᵀ + b for a row-major weight block W (out × in) and bias b (out).
  /// Gradient sinks may be null when the weights are frozen.
  Var affine(Var x, const double* weights, const double* bias, Eigen::Index out, Eigen::Index in,
             double* weight_grad, double* bias_grad) {
    if (value(x).cols() != in) {
      throw UserError("affine: input width " + std::to_string(value(x).cols()) + " does not match layer input " +
                      std::to_string(in));
    }
    // Owned copies keep Eigen's kernels independent of the caller's buffer alignment.
    const Matrix w = ConstMatrixMap(weights, out, in);
    Eigen::Map<const RowVector> b(bias, out);
    Matrix y = value(x) * w.transpose();
    y.rowwise() += b;
    const bool weights_tracked = weight_grad != nullptr;
    return push(std::move(y), tracked(x) || weights_tracked,
                [x, weights, out, in, weight_grad, bias_grad](Tape& t, const Matrix& g) {
                  if (t.tracked(x)) {
                    const Matrix w = ConstMatrixMap(weights, out, in);
                    t.accumulate(x, g * w);
                  }
                  if (weight_grad != nullptr) {
                    const Matrix dw = g.transpose() * t.value(x);
                    MatrixMap gw(weight_grad, out, in);
                    gw += dw;
                    for (Eigen::Index j = 0; j < out; ++j) {
                      double acc = 0.0;
                      for (Eigen::Index i = 0; i < g.rows(); ++i) acc += g(i, j);
                      bias_grad[j] += acc;
                    }
                  }
                });
  }

  Var relu(Var a) { return leaky_relu(a, 0.0); }

  Var leaky_relu(Var a, double slope) {
    Matrix y = value(a).unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    return push(std::move(y), tracked(a), [a, slope](Tape& t, const Matrix& g) {
      const Matrix& x = t.value(a);
      Matrix d = g.binaryExpr(x, [slope](double gv, double xv) { return xv > 0.0 ? gv : slope * gv; });
      t.accumulate(a, d);
    });
  }

  /// Sum of all entries, as a 1×1 node.
  Var sum(Var a) {
    Matrix s(1, 1);
    s(0, 0) = value(a).sum();
    return push(std::move(s), tracked(a), [a](Tape& t, const Matrix& g) {
      const Matrix& x = t.value(a);
      t.accumulate(a, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
    });
  }

  Var mean(Var a) {
    const double n = static_cast<double>(value(a).size());
    return scale(sum(a), 1.0 / n);
  }

  /// Horizontal concatenation [a | b].
  Var concat_cols(Var a, Var b) {
    if (value(a).rows() != value(b).rows()) throw UserError("concat_cols: row counts differ");
    const Eigen::Index ca = value(a).cols();
    const Eigen::Index cb = value(b).cols();
    Matrix y(value(a).rows(), ca + cb);
    y.leftCols(ca) = value(a);
    y.rightCols(cb) = value(b);
    return push(std::move(y), tracked(a) || tracked(b), [a, b, ca, cb](Tape& t, const Matrix& g) {
      if (t.tracked(a)) t.accumulate(a, g.leftCols(ca));
      if (t.tracked(b)) t.accumulate(b, g.rightCols(cb));
    });
  }

  /// Column-wise affine map x·diag(scale) + offset.
  Var column_affine(Var a, const RowVector& scale_row, const RowVector& offset_row) {
    if (value(a).cols() != scale_row.size() || value(a).cols() != offset_row.size()) {
      throw UserError("column_affine: width mismatch");
    }
    Matrix y = value(a).array().rowwise() * scale_row.array();
    y.rowwise() += offset_row;
    return push(std::move(y), tracked(a), [a, scale_row](Tape& t, const Matrix& g) {
      Matrix d = g.array().rowwise() * scale_row.array();
      t.accumulate(a, d);
    });
  }

  /// Per-row normalized RMSE against a constant target: sqrt(Σⱼ(p−y)² / Σⱼ y²), shape rows × 1.
  Var row_nrmse(Var pred, const Matrix& target) {
    const Matrix& p = value(pred);
    if (p.rows() != target.rows() || p.cols() != target.cols()) throw UserError("row_nrmse: shape mismatch");
    Eigen::VectorXd denom = target.rowwise().squaredNorm();
    if ((denom.array() <= 0.0).any()) throw UserError("row_nrmse: target row is identically zero");
    Matrix diff = p - target;
    Matrix loss = (diff.rowwise().squaredNorm().array() / denom.array()).sqrt().matrix();
    return push(loss, tracked(pred), [pred, diff = std::move(diff), denom, loss](Tape& t, const Matrix& g) {
      Matrix d(diff.rows(), diff.cols());
      for (Eigen::Index i = 0; i < diff.rows(); ++i) {
        const double l = loss(i, 0);
        const double f = l > 0.0 ? g(i, 0) / (denom(i) * l) : 0.0;
        d.row(i) = diff.row(i) * f;
      }
      t.accumulate(pred, d);
    });
  }

  /// Per-column normalized RMSE against a constant target, shape 1 × cols.
  Var column_nrmse(Var pred, const Matrix& target) {
    const Matrix& p = value(pred);
    if (p.rows() != target.rows() || p.cols() != target.cols()) throw UserError("column_nrmse: shape mismatch");
    RowVector denom = target.colwise().squaredNorm();
    if ((denom.array() <= 0.0).any()) throw UserError("column_nrmse: target column is identically zero");
    Matrix diff = p - target;
    Matrix loss = (diff.colwise().squaredNorm().array() / denom.array()).sqrt().matrix();
    return push(loss, tracked(pred), [pred, diff = std::move(diff), denom, loss](Tape& t, const Matrix& g) {
      Matrix d(diff.rows(), diff.cols());
      for (Eigen::Index j = 0; j < diff.cols(); ++j) {
        const double l = loss(0, j);
        const double f = l > 0.0 ? g(0, j) / (denom(j) * l) : 0.0;
        d.col(j) = diff.col(j) * f;
      }
      t.accumulate(pred, d);
    });
  }

  /// Propagates d(loss)/d(node) through the recorded graph. Gradients from a
  /// previous call are cleared first; weight sinks are accumulated into.
  void backward(Var loss) {
    const Node& l = nodes_.at(loss.id);
    if (l.value.rows() != 1 || l.value.cols() != 1) {
      throw UserError("backward: loss must be a scalar, got " + std::to_string(l.value.rows()) + "x" +
                      std::to_string(l.value.cols()));
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    if (!l.tracked) return;
    nodes_[loss.id].grad = Matrix::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.tracked || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

 private:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  struct Node {
    Matrix value;
    Matrix grad;
    bool tracked = false;
    Backward backward;
  };

  Var push(Matrix value, bool tracked, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), tracked, tracked ? std::move(backward) : Backward{}});
    return Var{nodes_.size() - 1};
  }

  template <class Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[v.id];
    if (!n.tracked) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void require_same_shape(Var a, Var b, const char* op) const {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    if (x.rows() != y.rows() || x.cols() != y.cols()) {
      throw UserError(std::string(op) + ": shape mismatch " + std::to_string(x.rows()) + "x" +
                      std::to_string(x.cols()) + " vs " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()));
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace pdon::diffcore
