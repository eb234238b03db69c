#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation of one forward pass. Leaves are either
// constants (no gradient, e.g. inputs, prototypes, pseudo-label targets) or
// Parameters whose gradients are written to Parameter::grad when
// Tape::backward() runs. Only nodes reachable from a Parameter carry
// gradients; everything else is skipped during backprop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "featmatch/error.hpp"
#include "featmatch/matrix.hpp"

namespace featmatch {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool decay = true;  // participates in weight decay

  Parameter() = default;
  Parameter(std::string n, Matrix v, bool d = true)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()), decay(d) {}

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Matrix(value.rows(), value.cols());
    grad.fill(0.0);
  }
  std::size_t size() const { return value.size(); }
};

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

// Log of probabilities is clamped at this floor.
inline constexpr double kProbFloor = 1e-12;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix m) { return push(std::move(m), false, {}); }

  // One leaf per Parameter per tape; repeated calls return the same node.
  Var param(Parameter& p) {
    for (const auto& [ptr, id] : bound_) {
      if (ptr == &p) return Var{this, id};
    }
    Var v = push(p.value, true, {});
    nodes_[v.id].param = &p;
    bound_.emplace_back(&p, v.id);
    return v;
  }

  const Matrix& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the node after backward(); zero matrix if unreachable.
  const Matrix& grad(Var v) const { return node(v).grad; }

  // Backpropagates from a 1x1 loss node and writes Parameter::grad for every
  // Parameter bound to this tape. Parameters not reached receive zero.
  void backward(Var loss) {
    if (nodes_.empty() || loss.tape != this || loss.id >= nodes_.size()) {
      throw StateError("backward: no recorded graph for this loss");
    }
    if (value(loss).rows() != 1 || value(loss).cols() != 1) {
      throw ConfigError("backward: loss must be a scalar (1x1)");
    }
    for (auto& n : nodes_) {
      n.grad = Matrix(n.value.rows(), n.value.cols());
    }
    nodes_[loss.id].grad(0, 0) = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad) continue;
      if (n.backprop) n.backprop(*this, n.grad);
    }
    for (const auto& [p, id] : bound_) {
      p->grad = nodes_[id].grad;
    }
  }

  // Internal: used by op implementations.
  using Backprop = std::function<void(Tape&, const Matrix& out_grad)>;

  Var push(Matrix value, bool requires_grad, Backprop bp) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(bp), nullptr});
    return Var{this, nodes_.size() - 1};
  }
  Matrix& grad_ref(std::size_t id) { return nodes_[id].grad; }
  bool needs(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backprop backprop;
    Parameter* param = nullptr;
  };

  const Node& node(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw StateError("Var does not belong to this tape");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<Parameter*, std::size_t>> bound_;
};

namespace ops {

namespace detail {
inline void accumulate(Matrix& dst, const Matrix& src) {
  auto& d = dst.data();
  const auto& s = src.data();
  for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
}
inline Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw StateError("operands recorded on different tapes");
  return *a.tape;
}
// out(i,j) += sum_k a(i,k) * b(k,j)
inline void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = a.rows(), m = a.cols(), p = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.row(i).data();
    for (std::size_t k = 0; k < m; ++k) {
      const double av = a(i, k);
      if (av == 0.0) continue;
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < p; ++j) o[j] += av * br[j];
    }
  }
}
// out(i,j) += sum_k a(i,k) * b(j,k)
inline void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = a.rows(), m = a.cols(), p = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += a(i, k) * b(j, k);
      out(i, j) += s;
    }
  }
}
// out(i,j) += sum_k a(k,i) * b(k,j)
inline void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = a.cols(), m = a.rows(), p = b.cols();
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const double av = a(k, i);
      if (av == 0.0) continue;
      double* o = out.row(i).data();
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < p; ++j) o[j] += av * br[j];
    }
  }
}
}  // namespace detail

// a (n x m) * b (m x p)
inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.rows()) {
    throw ConfigError("matmul: inner dimensions differ (" + av.shape_str() + " * " + bv.shape_str() + ")");
  }
  Matrix out(av.rows(), bv.cols());
  detail::gemm_nn(av, bv, out);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [ia = a.id, ib = b.id, a, b](Tape& tp, const Matrix& g) {
    if (tp.needs(ia)) detail::gemm_nt(g, tp.value(b), tp.grad_ref(ia));
    if (tp.needs(ib)) detail::gemm_tn(tp.value(a), g, tp.grad_ref(ib));
  });
}

// a (n x m) * b^T where b is (p x m)
inline Var matmul_nt(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.cols()) {
    throw ConfigError("matmul_nt: widths differ (" + av.shape_str() + " vs " + bv.shape_str() + ")");
  }
  Matrix out(av.rows(), bv.rows());
  detail::gemm_nt(av, bv, out);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a, b](Tape& tp, const Matrix& g) {
    // out = A B^T ; dA = G B ; dB = G^T A
    if (tp.needs(a.id)) detail::gemm_nn(g, tp.value(b), tp.grad_ref(a.id));
    if (tp.needs(b.id)) detail::gemm_tn(g, tp.value(a), tp.grad_ref(b.id));
  });
}

// Adds a 1 x m row vector to every row of a.
inline Var add_row(Var a, Var bias) {
  Tape& t = detail::same_tape(a, bias);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(bias);
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ConfigError("add_row: bias " + bv.shape_str() + " does not match " + av.shape_str());
  }
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv(0, j);
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(bias);
  return t.push(std::move(out), rg, [a, bias](Tape& tp, const Matrix& g) {
    if (tp.needs(a.id)) detail::accumulate(tp.grad_ref(a.id), g);
    if (tp.needs(bias.id)) {
      Matrix& gb = tp.grad_ref(bias.id);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
      }
    }
  });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (!av.same_shape(bv)) throw ConfigError("add: shapes differ (" + av.shape_str() + " vs " + bv.shape_str() + ")");
  Matrix out = av;
  for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] += bv.data()[k];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a, b](Tape& tp, const Matrix& g) {
    if (tp.needs(a.id)) detail::accumulate(tp.grad_ref(a.id), g);
    if (tp.needs(b.id)) detail::accumulate(tp.grad_ref(b.id), g);
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (!av.same_shape(bv)) throw ConfigError("mul: shapes differ");
  Matrix out = av;
  for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] *= bv.data()[k];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a, b](Tape& tp, const Matrix& g) {
    const auto& av2 = tp.value(a).data();
    const auto& bv2 = tp.value(b).data();
    if (tp.needs(a.id)) {
      auto& ga = tp.grad_ref(a.id).data();
      for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += g.data()[k] * bv2[k];
    }
    if (tp.needs(b.id)) {
      auto& gb = tp.grad_ref(b.id).data();
      for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += g.data()[k] * av2[k];
    }
  });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = t.value(a);
  for (double& v : out.data()) v *= s;
  return t.push(std::move(out), t.requires_grad(a), [a, s](Tape& tp, const Matrix& g) {
    auto& ga = tp.grad_ref(a.id).data();
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += s * g.data()[k];
  });
}

inline Var relu(Var a) {
  Tape& t = *a.tape;
  Matrix out = t.value(a);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.push(std::move(out), t.requires_grad(a), [a](Tape& tp, const Matrix& g) {
    const auto& x = tp.value(a).data();
    auto& ga = tp.grad_ref(a.id).data();
    for (std::size_t k = 0; k < ga.size(); ++k) {
      if (x[k] > 0.0) ga[k] += g.data()[k];
    }
  });
}

// Row-wise softmax with max subtraction.
inline Matrix softmax_rows_value(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto zr = z.row(i);
    auto orow = out.row(i);
    const double mx = *std::max_element(zr.begin(), zr.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < zr.size(); ++j) {
      orow[j] = std::exp(zr[j] - mx);
      sum += orow[j];
    }
    for (double& v : orow) v /= sum;
  }
  return out;
}

inline Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  if (t.value(a).cols() == 0) throw ConfigError("softmax_rows: zero columns");
  Matrix out = softmax_rows_value(t.value(a));
  const std::size_t out_id = t.size();
  return t.push(std::move(out), t.requires_grad(a), [a, out_id](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(Var{&tp, out_id});
    Matrix& ga = tp.grad_ref(a.id);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no operands");
  Tape& t = *parts.front().tape;
  const std::size_t rows = t.value(parts.front()).rows();
  std::size_t cols = 0;
  bool rg = false;
  for (Var p : parts) {
    detail::same_tape(parts.front(), p);
    if (t.value(p).rows() != rows) throw ConfigError("concat_cols: row counts differ");
    cols += t.value(p).cols();
    rg = rg || t.requires_grad(p);
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Matrix& pv = t.value(p);
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(pv.row(i).begin(), pv.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(off));
    }
    off += pv.cols();
  }
  return t.push(std::move(out), rg, [parts](Tape& tp, const Matrix& g) {
    std::size_t o = 0;
    for (Var p : parts) {
      const std::size_t w = tp.value(p).cols();
      if (tp.needs(p.id)) {
        Matrix& gp = tp.grad_ref(p.id);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          for (std::size_t j = 0; j < w; ++j) gp(i, j) += g(i, o + j);
        }
      }
      o += w;
    }
  });
}

inline Var slice_cols(Var a, std::size_t start, std::size_t width) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  if (start + width > av.cols()) throw ConfigError("slice_cols: range out of bounds");
  Matrix out(av.rows(), width);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    for (std::size_t j = 0; j < width; ++j) out(i, j) = av(i, start + j);
  }
  return t.push(std::move(out), t.requires_grad(a), [a, start, width](Tape& tp, const Matrix& g) {
    Matrix& ga = tp.grad_ref(a.id);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < width; ++j) ga(i, start + j) += g(i, j);
    }
  });
}

inline Var sum(Var a) {
  Tape& t = *a.tape;
  double s = 0.0;
  for (double v : t.value(a).data()) s += v;
  return t.push(Matrix(1, 1, s), t.requires_grad(a), [a](Tape& tp, const Matrix& g) {
    for (double& v : tp.grad_ref(a.id).data()) v += g(0, 0);
  });
}

// Mean over rows of -sum_c target(i,c) * log(max(probs(i,c), floor)).
// The target is a constant: no gradient flows into it.
inline Var cross_entropy(Var probs, const Matrix& target) {
  Tape& t = *probs.tape;
  const Matrix& q = t.value(probs);
  if (!q.same_shape(target)) {
    throw ConfigError("cross_entropy: target " + target.shape_str() + " vs prediction " + q.shape_str());
  }
  if (q.rows() == 0) throw ConfigError("cross_entropy: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    for (std::size_t j = 0; j < q.cols(); ++j) {
      const double tv = target(i, j);
      if (tv != 0.0) total -= tv * std::log(std::max(q(i, j), kProbFloor));
    }
  }
  const double n = static_cast<double>(q.rows());
  return t.push(Matrix(1, 1, total / n), t.requires_grad(probs), [probs, target, n](Tape& tp, const Matrix& g) {
    const Matrix& qv = tp.value(probs);
    Matrix& gq = tp.grad_ref(probs.id);
    for (std::size_t i = 0; i < qv.rows(); ++i) {
      for (std::size_t j = 0; j < qv.cols(); ++j) {
        const double tv = target(i, j);
        if (tv != 0.0 && qv(i, j) > kProbFloor) gq(i, j) -= g(0, 0) * tv / (qv(i, j) * n);
      }
    }
  });
}

}  // namespace ops
}  // namespace featmatch
