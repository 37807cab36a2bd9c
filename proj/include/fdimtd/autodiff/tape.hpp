// Copyright 2026 The fdimtd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fdimtd/core.hpp"

namespace fdimtd::ad {

enum class Op {
  leaf,
  constant,
  matmul,
  add,
  sub,
  mul,
  scale,
  tanh,
  sigmoid,
  sin,
  cos,
  sq_norm,
  l1_norm,
  slice_rows,
  concat_rows,
};

// Handle into a tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense matrices. Values are computed once when a
// node is recorded; backward only reads the cached values.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }

  void clear() {
    nodes_.clear();
    forward_evals_ = 0;
  }

  std::size_t size() const { return nodes_.size(); }
  // Number of node values computed so far.
  std::size_t forward_evals() const { return forward_evals_; }

  Var leaf(Mat value) { return push(Op::leaf, {}, std::move(value), true); }
  Var constant(Mat value) { return push(Op::constant, {}, std::move(value), false); }

  Var matmul(Var a, Var b) {
    require_dims(val(a).cols() == val(b).rows(), "matmul shape mismatch");
    return push(Op::matmul, {a, b}, val(a) * val(b));
  }

  // b may be a column vector broadcast across the columns of a.
  Var add(Var a, Var b) { return binary_broadcast(Op::add, a, b); }
  Var sub(Var a, Var b) { return binary_broadcast(Op::sub, a, b); }

  Var mul(Var a, Var b) {
    require_dims(same_shape(a, b), "elementwise mul shape mismatch");
    return push(Op::mul, {a, b}, val(a).cwiseProduct(val(b)));
  }

  Var scale(Var a, double s) {
    Var r = push(Op::scale, {a}, s * val(a));
    nodes_[r.id].scalar = s;
    return r;
  }

  Var tanh(Var a) { return push(Op::tanh, {a}, val(a).array().tanh().matrix()); }
  Var sigmoid(Var a) {
    Mat y = (1.0 + (-val(a).array()).exp()).inverse().matrix();
    return push(Op::sigmoid, {a}, std::move(y));
  }
  Var sin(Var a) { return push(Op::sin, {a}, val(a).array().sin().matrix()); }
  Var cos(Var a) { return push(Op::cos, {a}, val(a).array().cos().matrix()); }

  Var sq_norm(Var a) {
    Mat y(1, 1);
    y(0, 0) = val(a).squaredNorm();
    return push(Op::sq_norm, {a}, std::move(y));
  }

  Var l1_norm(Var a) {
    Mat y(1, 1);
    y(0, 0) = val(a).cwiseAbs().sum();
    return push(Op::l1_norm, {a}, std::move(y));
  }

  Var slice_rows(Var a, int start, int count) {
    require_dims(start >= 0 && count >= 0 && start + count <= val(a).rows(),
                 "slice_rows out of range");
    Var r = push(Op::slice_rows, {a}, val(a).middleRows(start, count));
    nodes_[r.id].start = start;
    return r;
  }

  Var concat_rows(const std::vector<Var>& parts) {
    require_dims(!parts.empty(), "concat_rows needs inputs");
    Eigen::Index rows = 0, cols = val(parts[0]).cols();
    for (Var p : parts) {
      require_dims(val(p).cols() == cols, "concat_rows column mismatch");
      rows += val(p).rows();
    }
    Mat y(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
      y.middleRows(at, val(p).rows()) = val(p);
      at += val(p).rows();
    }
    return push(Op::concat_rows, parts, std::move(y));
  }

  // Name-based construction for the elementwise and reduction ops.
  Var apply(const std::string& name, Var a) {
    if (name == "tanh") return tanh(a);
    if (name == "sigmoid") return sigmoid(a);
    if (name == "sin") return sin(a);
    if (name == "cos") return cos(a);
    if (name == "sq_norm") return sq_norm(a);
    if (name == "l1_norm") return l1_norm(a);
    throw DomainError("unsupported op '" + name + "'");
  }

  const Mat& value(Var v) const { return val(v); }
  double scalar(Var v) const { return val(v)(0, 0); }

  // Accumulate d root / d node for every node that depends on a leaf.
  void backward(Var root) {
    require_dims(root.id >= 0 && root.id < static_cast<int>(nodes_.size()),
                 "backward root not on this tape");
    if (val(root).rows() != 1 || val(root).cols() != 1)
      throw DomainError("backward requires a scalar root");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    grad_ref(root) = Mat::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      propagate(n);
    }
  }

  // Gradient of the last backward root with respect to v (zero if v was
  // not reached).
  Mat grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

 private:
  struct Node {
    Op op;
    std::vector<int> in;
    Mat value;
    Mat grad;
    bool needs_grad = false;
    double scalar = 0.0;
    int start = 0;
  };

  const Mat& val(Var v) const { return nodes_.at(v.id).value; }
  bool same_shape(Var a, Var b) const {
    return val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols();
  }

  Var push(Op op, std::vector<Var> in, Mat value, bool leaf_grad = false) {
    Node n;
    n.op = op;
    n.needs_grad = leaf_grad;
    for (Var v : in) {
      n.in.push_back(v.id);
      n.needs_grad = n.needs_grad || nodes_.at(v.id).needs_grad;
    }
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    ++forward_evals_;
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var binary_broadcast(Op op, Var a, Var b) {
    const Mat& x = val(a);
    const Mat& y = val(b);
    if (same_shape(a, b))
      return push(op, {a, b}, op == Op::add ? Mat(x + y) : Mat(x - y));
    require_dims(y.cols() == 1 && y.rows() == x.rows(),
                 "add/sub shape mismatch");
    Mat r = op == Op::add ? Mat(x.colwise() + y.col(0))
                          : Mat(x.colwise() - y.col(0));
    return push(op, {a, b}, std::move(r));
  }

  Mat& grad_ref(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(int id, const Mat& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  void propagate(const Node& n) {
    const Mat& g = n.grad;
    auto in_val = [&](int k) -> const Mat& { return nodes_[n.in[k]].value; };
    switch (n.op) {
      case Op::leaf:
      case Op::constant:
        break;
      case Op::matmul:
        if (nodes_[n.in[0]].needs_grad)
          accumulate(n.in[0], g * in_val(1).transpose());
        if (nodes_[n.in[1]].needs_grad)
          accumulate(n.in[1], in_val(0).transpose() * g);
        break;
      case Op::add:
      case Op::sub: {
        double sign = n.op == Op::add ? 1.0 : -1.0;
        accumulate(n.in[0], g);
        if (nodes_[n.in[1]].needs_grad) {
          if (in_val(1).cols() == g.cols())
            accumulate(n.in[1], sign * g);
          else
            accumulate(n.in[1], sign * g.rowwise().sum());
        }
        break;
      }
      case Op::mul:
        if (nodes_[n.in[0]].needs_grad)
          accumulate(n.in[0], g.cwiseProduct(in_val(1)));
        if (nodes_[n.in[1]].needs_grad)
          accumulate(n.in[1], g.cwiseProduct(in_val(0)));
        break;
      case Op::scale:
        accumulate(n.in[0], n.scalar * g);
        break;
      case Op::tanh:
        accumulate(n.in[0],
                   (g.array() * (1.0 - n.value.array().square())).matrix());
        break;
      case Op::sigmoid:
        accumulate(n.in[0], (g.array() * n.value.array() *
                             (1.0 - n.value.array()))
                                .matrix());
        break;
      case Op::sin:
        accumulate(n.in[0], (g.array() * in_val(0).array().cos()).matrix());
        break;
      case Op::cos:
        accumulate(n.in[0], (-g.array() * in_val(0).array().sin()).matrix());
        break;
      case Op::sq_norm:
        accumulate(n.in[0], (2.0 * g(0, 0)) * in_val(0));
        break;
      case Op::l1_norm: {
        // Subgradient 0 at exactly 0.
        Mat s = in_val(0).unaryExpr(
            [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
        accumulate(n.in[0], g(0, 0) * s);
        break;
      }
      case Op::slice_rows: {
        Node& src = nodes_[n.in[0]];
        if (!src.needs_grad) break;
        if (src.grad.size() == 0)
          src.grad = Mat::Zero(src.value.rows(), src.value.cols());
        src.grad.middleRows(n.start, g.rows()) += g;
        break;
      }
      case Op::concat_rows: {
        Eigen::Index at = 0;
        for (int id : n.in) {
          Eigen::Index r = nodes_[id].value.rows();
          if (nodes_[id].needs_grad) accumulate(id, g.middleRows(at, r));
          at += r;
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::size_t forward_evals_ = 0;
};

}  // namespace fdimtd::ad
