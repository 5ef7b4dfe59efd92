#pragma once

// Define-by-run reverse-mode autodiff over Matrix values.
//
// A Tape records every operation applied to its Vars. Node ids are assigned
// in creation order, so parents always precede children and backward() can
// sweep ids in decreasing order. Build a fresh tape for every forward pass.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewsel/matrix.hpp"

namespace fewsel {

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

enum class OpKind : std::uint8_t {
  leaf,
  matmul,
  add,
  add_row,
  sub,
  mul,
  scale,
  relu,
  sigmoid,
  tanh,
  exp,
  log,
  softmax_rows,
  concat_cols,
  slice_cols,
  repeat_rows,
  transpose,
  sum_rows,
  sum_all,
  mse,
};

enum class ElementOp : std::uint8_t { add, sub, mul, relu, sigmoid, tanh, exp, log };

class Tape {
public:
  Tape() { nodes_.reserve(64); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input node. Gradients are only accumulated for leaves created with
  /// requires_grad, and for anything computed from them.
  Var leaf(Matrix value, bool requires_grad = true) {
    return push(OpKind::leaf, std::move(value), {}, 0.0, requires_grad);
  }

  Var constant(Matrix value) { return leaf(std::move(value), false); }

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }

  /// Adjoint after backward(). Empty for nodes that do not require grad.
  const Matrix& grad(std::size_t id) const { return nodes_.at(id).grad; }

  /// Reverse sweep from a 1x1 root. Repeated calls start from fresh adjoints.
  void backward(Var root) {
    check_owner(root);
    const Matrix& rv = nodes_[root.id].value;
    if (rv.rows() != 1 || rv.cols() != 1) {
      throw std::invalid_argument("backward: root must be 1x1, got " + rv.shape());
    }
    for (Node& n : nodes_) n.grad = Matrix();
    nodes_[root.id].grad = Matrix(1, 1, 1.0);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      if (!nodes_[i].requires_grad || nodes_[i].grad.empty()) continue;
      propagate(i);
    }
    for (Node& n : nodes_) {
      if (n.kind == OpKind::leaf && n.requires_grad && n.grad.empty()) {
        n.grad = Matrix(n.value.rows(), n.value.cols());
      }
    }
  }

  // Operations. Each checks shapes, computes its value eagerly and records
  // what the reverse sweep needs.

  Var matmul(Var a, Var b) {
    const Matrix& av = val(a);
    const Matrix& bv = val(b);
    if (av.cols() != bv.rows()) {
      throw std::invalid_argument("matmul: shape mismatch " + av.shape() + " * " + bv.shape());
    }
    Matrix out(av.rows(), bv.cols());
    linalg::gemm(av, bv, out);
    return push(OpKind::matmul, std::move(out), {a.id, b.id});
  }

  Var add(Var a, Var b) {
    const Matrix& av = val(a);
    const Matrix& bv = val(b);
    if (av.same_shape(bv)) {
      Matrix out = av;
      out += bv;
      return push(OpKind::add, std::move(out), {a.id, b.id});
    }
    if (bv.rows() == 1 && bv.cols() == av.cols()) {
      Matrix out = av;
      for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
      }
      return push(OpKind::add_row, std::move(out), {a.id, b.id});
    }
    throw std::invalid_argument("add: incompatible shapes " + av.shape() + " + " + bv.shape());
  }

  Var sub(Var a, Var b) {
    const Matrix& av = val(a);
    const Matrix& bv = val(b);
    require_same(av, bv, "sub");
    Matrix out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return push(OpKind::sub, std::move(out), {a.id, b.id});
  }

  Var mul(Var a, Var b) {
    const Matrix& av = val(a);
    const Matrix& bv = val(b);
    require_same(av, bv, "mul");
    Matrix out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return push(OpKind::mul, std::move(out), {a.id, b.id});
  }

  Var scale(Var a, double factor) {
    Matrix out = val(a);
    for (double& v : out.data()) v *= factor;
    return push(OpKind::scale, std::move(out), {a.id}, factor);
  }

  Var relu(Var a) {
    Matrix out = val(a);
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return push(OpKind::relu, std::move(out), {a.id});
  }

  Var sigmoid(Var a) {
    Matrix out = val(a);
    for (double& v : out.data()) {
      // Branches keep exp() from overflowing on large |v|.
      if (v >= 0.0) {
        v = 1.0 / (1.0 + std::exp(-v));
      } else {
        const double e = std::exp(v);
        v = e / (1.0 + e);
      }
    }
    return push(OpKind::sigmoid, std::move(out), {a.id});
  }

  Var tanh(Var a) {
    Matrix out = val(a);
    for (double& v : out.data()) v = std::tanh(v);
    return push(OpKind::tanh, std::move(out), {a.id});
  }

  Var exp(Var a) {
    Matrix out = val(a);
    for (double& v : out.data()) v = std::exp(v);
    if (!out.all_finite()) throw std::domain_error("exp: non-finite result");
    return push(OpKind::exp, std::move(out), {a.id});
  }

  Var log(Var a) {
    Matrix out = val(a);
    for (double& v : out.data()) v = std::log(v);
    if (!out.all_finite()) throw std::domain_error("log: argument must be positive");
    return push(OpKind::log, std::move(out), {a.id});
  }

  Var elementwise(ElementOp op, Var a) {
    switch (op) {
      case ElementOp::relu: return relu(a);
      case ElementOp::sigmoid: return sigmoid(a);
      case ElementOp::tanh: return tanh(a);
      case ElementOp::exp: return exp(a);
      case ElementOp::log: return log(a);
      default: throw std::invalid_argument("elementwise: binary op needs two operands");
    }
  }

  Var elementwise(ElementOp op, Var a, Var b) {
    switch (op) {
      case ElementOp::add: return add(a, b);
      case ElementOp::sub: return sub(a, b);
      case ElementOp::mul: return mul(a, b);
      default: throw std::invalid_argument("elementwise: unary op given two operands");
    }
  }

  /// Row-wise softmax of x / tau with max subtraction.
  Var softmax_rows(Var a, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("softmax_rows: tau must be positive");
    Matrix out = val(a);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      auto row = out.row(r);
      const double mx = *std::max_element(row.begin(), row.end());
      double total = 0.0;
      for (double& v : row) {
        v = std::exp((v - mx) / tau);
        total += v;
      }
      for (double& v : row) v /= total;
    }
    return push(OpKind::softmax_rows, std::move(out), {a.id}, tau);
  }

  Var concat_cols(Var a, Var b) {
    const Matrix& av = val(a);
    const Matrix& bv = val(b);
    if (av.rows() != bv.rows()) {
      throw std::invalid_argument("concat_cols: row mismatch " + av.shape() + " | " + bv.shape());
    }
    Matrix out(av.rows(), av.cols() + bv.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
      auto dst = out.row(r);
      std::copy(av.row(r).begin(), av.row(r).end(), dst.begin());
      std::copy(bv.row(r).begin(), bv.row(r).end(), dst.begin() + av.cols());
    }
    return push(OpKind::concat_cols, std::move(out), {a.id, b.id});
  }

  /// Columns [begin, begin + count).
  Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    const Matrix& av = val(a);
    if (begin + count > av.cols()) {
      throw std::out_of_range("slice_cols: range exceeds " + av.shape());
    }
    Matrix out(av.rows(), count);
    for (std::size_t r = 0; r < av.rows(); ++r) {
      auto src = av.row(r);
      std::copy_n(src.begin() + begin, count, out.row(r).begin());
    }
    return push(OpKind::slice_cols, std::move(out), {a.id}, static_cast<double>(begin));
  }

  /// Broadcast a 1xC row to n rows.
  Var repeat_rows(Var a, std::size_t n) {
    const Matrix& av = val(a);
    if (av.rows() != 1) throw std::invalid_argument("repeat_rows: expected a row vector, got " + av.shape());
    Matrix out(n, av.cols());
    for (std::size_t r = 0; r < n; ++r) std::copy(av.data().begin(), av.data().end(), out.row(r).begin());
    return push(OpKind::repeat_rows, std::move(out), {a.id});
  }

  Var transpose(Var a) { return push(OpKind::transpose, val(a).transposed(), {a.id}); }

  /// Column sums as a 1xC row. Each column is summed in ascending value
  /// order, so the result is bitwise independent of row order.
  Var sum_rows(Var a) {
    const Matrix& av = val(a);
    if (av.rows() == 0 || av.cols() == 0) throw std::invalid_argument("sum_rows: empty matrix");
    Matrix out(1, av.cols());
    std::vector<double> column(av.rows());
    for (std::size_t c = 0; c < av.cols(); ++c) {
      for (std::size_t r = 0; r < av.rows(); ++r) column[r] = av(r, c);
      std::sort(column.begin(), column.end());
      double s = 0.0;
      for (double v : column) s += v;
      out[c] = s;
    }
    return push(OpKind::sum_rows, std::move(out), {a.id});
  }

  Var sum_all(Var a) {
    double s = 0.0;
    for (double v : val(a).data()) s += v;
    return push(OpKind::sum_all, Matrix(1, 1, s), {a.id});
  }

  /// (1/N) * sum over rows of the squared row difference.
  Var mean_squared_error(Var x, Var x_hat) {
    const Matrix& xv = val(x);
    const Matrix& hv = val(x_hat);
    if (!xv.same_shape(hv)) {
      throw std::invalid_argument("mean_squared_error: shape mismatch " + xv.shape() + " vs " + hv.shape());
    }
    if (xv.rows() == 0) throw std::invalid_argument("mean_squared_error: no rows");
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double d = xv[i] - hv[i];
      s += d * d;
    }
    return push(OpKind::mse, Matrix(1, 1, s / static_cast<double>(xv.rows())), {x.id, x_hat.id});
  }

private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::size_t parent0 = npos;
    std::size_t parent1 = npos;
    double aux = 0.0;
    bool requires_grad = false;
    Matrix value;
    Matrix grad;
  };

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  struct Parents {
    std::size_t a = npos;
    std::size_t b = npos;
    Parents() = default;
    Parents(std::initializer_list<std::size_t> ids) {
      auto it = ids.begin();
      if (it != ids.end()) a = *it++;
      if (it != ids.end()) b = *it;
    }
  };

  friend struct Var;

  const Matrix& val(Var v) const {
    check_owner(v);
    return nodes_[v.id].value;
  }

  void check_owner(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) {
      throw std::invalid_argument("Var does not belong to this tape");
    }
  }

  static void require_same(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
    }
  }

  Var push(OpKind kind, Matrix value, Parents parents, double aux = 0.0, bool leaf_grad = false) {
    Node n;
    n.kind = kind;
    n.parent0 = parents.a;
    n.parent1 = parents.b;
    n.aux = aux;
    n.requires_grad = kind == OpKind::leaf
                          ? leaf_grad
                          : ((parents.a != npos && nodes_[parents.a].requires_grad) ||
                             (parents.b != npos && nodes_[parents.b].requires_grad));
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  // Adjoint slot for a parent, or nullptr if it does not need one.
  Matrix* slot(std::size_t id) {
    if (id == npos) return nullptr;
    Node& p = nodes_[id];
    if (!p.requires_grad) return nullptr;
    if (p.grad.empty()) p.grad = Matrix(p.value.rows(), p.value.cols());
    return &p.grad;
  }

  void propagate(std::size_t i) {
    // Copy what we need: slot() may touch other nodes but never reallocates.
    const Node& n = nodes_[i];
    const Matrix& g = n.grad;
    const Matrix& y = n.value;
    Matrix* ga = slot(n.parent0);
    Matrix* gb = slot(n.parent1);
    const Matrix* a = n.parent0 != npos ? &nodes_[n.parent0].value : nullptr;
    const Matrix* b = n.parent1 != npos ? &nodes_[n.parent1].value : nullptr;

    switch (n.kind) {
      case OpKind::leaf:
        break;
      case OpKind::matmul:
        if (ga) linalg::gemm_nt(g, *b, *ga);
        if (gb) linalg::gemm_tn(*a, g, *gb);
        break;
      case OpKind::add:
        if (ga) *ga += g;
        if (gb) *gb += g;
        break;
      case OpKind::add_row:
        if (ga) *ga += g;
        if (gb) {
          for (std::size_t r = 0; r < g.rows(); ++r) {
            auto row = g.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) (*gb)[c] += row[c];
          }
        }
        break;
      case OpKind::sub:
        if (ga) *ga += g;
        if (gb)
          for (std::size_t k = 0; k < g.size(); ++k) (*gb)[k] -= g[k];
        break;
      case OpKind::mul:
        if (ga)
          for (std::size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k] * (*b)[k];
        if (gb)
          for (std::size_t k = 0; k < g.size(); ++k) (*gb)[k] += g[k] * (*a)[k];
        break;
      case OpKind::scale:
        if (ga)
          for (std::size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k] * n.aux;
        break;
      case OpKind::relu:
        if (ga)
          for (std::size_t k = 0; k < g.size(); ++k) (*ga)[k] += (*a)[k] > 0.0 ? g[k] : 0.0;
        break;
      case OpKind::sigmoid:
        if (ga)
          for (std::size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k] * y[k] * (1.0 - y[k]);
        break;
      case OpKind::tanh:
        if (ga)
          for (std::size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k] * (1.0 - y[k] * y[k]);
        break;
      case OpKind::exp:
        if (ga)
          for (std::size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k] * y[k];
        break;
      case OpKind::log:
        if (ga)
          for (std::size_t k = 0; k < g.size(); ++k) (*ga)[k] += g[k] / (*a)[k];
        break;
      case OpKind::softmax_rows:
        if (ga) {
          for (std::size_t r = 0; r < y.rows(); ++r) {
            auto yr = y.row(r);
            auto gr = g.row(r);
            double dot = 0.0;
            for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
            auto dst = ga->row(r);
            for (std::size_t c = 0; c < yr.size(); ++c) dst[c] += yr[c] * (gr[c] - dot) / n.aux;
          }
        }
        break;
      case OpKind::concat_cols: {
        const std::size_t split = a->cols();
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto gr = g.row(r);
          if (ga) {
            auto dst = ga->row(r);
            for (std::size_t c = 0; c < split; ++c) dst[c] += gr[c];
          }
          if (gb) {
            auto dst = gb->row(r);
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += gr[split + c];
          }
        }
        break;
      }
      case OpKind::slice_cols:
        if (ga) {
          const auto begin = static_cast<std::size_t>(n.aux);
          for (std::size_t r = 0; r < g.rows(); ++r) {
            auto gr = g.row(r);
            auto dst = ga->row(r);
            for (std::size_t c = 0; c < gr.size(); ++c) dst[begin + c] += gr[c];
          }
        }
        break;
      case OpKind::repeat_rows:
        if (ga) {
          for (std::size_t r = 0; r < g.rows(); ++r) {
            auto gr = g.row(r);
            for (std::size_t c = 0; c < gr.size(); ++c) (*ga)[c] += gr[c];
          }
        }
        break;
      case OpKind::transpose:
        if (ga) {
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) (*ga)(c, r) += g(r, c);
        }
        break;
      case OpKind::sum_rows:
        if (ga) {
          for (std::size_t r = 0; r < ga->rows(); ++r) {
            auto dst = ga->row(r);
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += g[c];
          }
        }
        break;
      case OpKind::sum_all:
        if (ga)
          for (double& v : ga->data()) v += g[0];
        break;
      case OpKind::mse: {
        const double coef = 2.0 * g[0] / static_cast<double>(a->rows());
        for (std::size_t k = 0; k < a->size(); ++k) {
          const double d = (*a)[k] - (*b)[k];
          if (ga) (*ga)[k] += coef * d;
          if (gb) (*gb)[k] -= coef * d;
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }
inline const Matrix& Var::grad() const { return tape->grad(id); }

// Free-function spellings, convenient when composing models.
inline Var matmul(Var a, Var b) { return a.tape->matmul(a, b); }
inline Var add(Var a, Var b) { return a.tape->add(a, b); }
inline Var sub(Var a, Var b) { return a.tape->sub(a, b); }
inline Var mul(Var a, Var b) { return a.tape->mul(a, b); }
inline Var scale(Var a, double f) { return a.tape->scale(a, f); }
inline Var relu(Var a) { return a.tape->relu(a); }
inline Var sigmoid(Var a) { return a.tape->sigmoid(a); }
inline Var tanh(Var a) { return a.tape->tanh(a); }
inline Var exp(Var a) { return a.tape->exp(a); }
inline Var log(Var a) { return a.tape->log(a); }
inline Var softmax_rows(Var a, double tau) { return a.tape->softmax_rows(a, tau); }
inline Var concat_cols(Var a, Var b) { return a.tape->concat_cols(a, b); }
inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  return a.tape->slice_cols(a, begin, count);
}
inline Var repeat_rows(Var a, std::size_t n) { return a.tape->repeat_rows(a, n); }
inline Var transpose(Var a) { return a.tape->transpose(a); }
inline Var sum_rows(Var a) { return a.tape->sum_rows(a); }
inline Var sum_all(Var a) { return a.tape->sum_all(a); }
inline Var mean_squared_error(Var x, Var x_hat) { return x.tape->mean_squared_error(x, x_hat); }

/// Plain-value softmax, same numerics as the tape op.
inline Matrix softmax_rows(const Matrix& x, double tau) {
  Tape t;
  return t.softmax_rows(t.constant(x), tau).value();
}

}  // namespace fewsel
