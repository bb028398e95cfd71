#include "qspike/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace qspike::ad {

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::constant_ref(const Matrix& value) {
  Node n;
  n.ext = &value;
  return push(std::move(n));
}

Var Tape::state(Matrix value) {
  Node n;
  n.owned = std::move(value);
  n.dep_state = true;
  return push(std::move(n));
}

Var Tape::param(const Matrix& value) {
  Node n;
  n.ext = &value;
  n.dep_param = true;
  return push(std::move(n));
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.ext ? *n.ext : n.owned;
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backprop backprop) {
  Node n;
  n.owned = std::move(value);
  for (Var p : parents) {
    n.dep_state = n.dep_state || nodes_.at(p.id).dep_state;
    n.dep_param = n.dep_param || nodes_.at(p.id).dep_param;
  }
  if (n.dep_state || n.dep_param) n.backprop = std::move(backprop);
  return push(std::move(n));
}

bool Tape::wants(Var v) const {
  const Node& n = nodes_[v.id];
  return pass_ == Pass::Full ? (n.dep_state || n.dep_param) : n.dep_state;
}

Matrix& Tape::grad_slot(Var v) {
  Node& n = nodes_[v.id];
  if (!n.live) {
    const Matrix& val = n.ext ? *n.ext : n.owned;
    if (n.grad.same_shape(val)) {
      n.grad.fill(0.0);
    } else {
      n.grad = Matrix(val.rows(), val.cols());
    }
    n.live = true;
  }
  return n.grad;
}

void Tape::backward(std::span<const Seed> seeds, Pass pass) {
  pass_ = pass;
  for (auto& n : nodes_) n.live = false;
  for (const auto& s : seeds) {
    if (!wants(s.var)) continue;
    Matrix& g = grad_slot(s.var);
    g += *s.grad;
  }
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.live || !n.backprop || !wants(Var{static_cast<std::uint32_t>(i)})) continue;
    n.backprop(*this, n.grad);
  }
}

void Tape::backward(Var out, const Matrix& seed, Pass pass) {
  const Seed s{out, &seed};
  backward(std::span<const Seed>(&s, 1), pass);
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.live) return n.grad;
  const Matrix& val = n.ext ? *n.ext : n.owned;
  return Matrix(val.rows(), val.cols());
}

Var add(Tape& t, Var a, Var b) {
  Matrix out = t.value(a);
  out += t.value(b);
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.wants(a)) tp.grad_slot(a) += g;
    if (tp.wants(b)) tp.grad_slot(b) += g;
  });
}

Var scale(Tape& t, Var a, double s) {
  return t.record(t.value(a) * s, {a}, [a, s](Tape& tp, const Matrix& g) {
    if (tp.wants(a)) {
      Matrix& ga = tp.grad_slot(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    }
  });
}

Var shift(Tape& t, Var a, double s) {
  Matrix out = t.value(a);
  for (auto& v : out.values()) v += s;
  return t.record(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    if (tp.wants(a)) tp.grad_slot(a) += g;
  });
}

Var linear(Tape& t, Var x, Var w) {
  return t.record(matmul_nt(t.value(x), t.value(w)), {x, w}, [x, w](Tape& tp, const Matrix& g) {
    if (tp.wants(x)) tp.grad_slot(x) += qspike::matmul(g, tp.value(w));
    if (tp.wants(w)) tp.grad_slot(w) += matmul_tn(g, tp.value(x));
  });
}

Var matmul(Tape& t, Var x, Var w) {
  return t.record(qspike::matmul(t.value(x), t.value(w)), {x, w}, [x, w](Tape& tp, const Matrix& g) {
    if (tp.wants(x)) tp.grad_slot(x) += matmul_nt(g, tp.value(w));
    if (tp.wants(w)) tp.grad_slot(w) += matmul_tn(tp.value(x), g);
  });
}

Var add_row(Tape& t, Var x, Var row) {
  Matrix out = t.value(x);
  ops::add_row_inplace(out, t.value(row));
  return t.record(std::move(out), {x, row}, [x, row](Tape& tp, const Matrix& g) {
    if (tp.wants(x)) tp.grad_slot(x) += g;
    if (tp.wants(row)) {
      Matrix& gr = tp.grad_slot(row);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g(r, c);
    }
  });
}

Var rate(Tape& t, Var x, double v_th) {
  return t.record(ops::rate(t.value(x), v_th), {x}, [x, v_th](Tape& tp, const Matrix& g) {
    if (!tp.wants(x)) return;
    const Matrix& xv = tp.value(x);
    Matrix& gx = tp.grad_slot(x);
    const double inv = 1.0 / v_th;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * inv * ops::clip01_derivative(xv[i] * inv);
  });
}

Var attention(Tape& t, Var q, Var k, Var v, std::size_t num_heads) {
  auto cache = std::make_shared<ops::AttentionCache>();
  Matrix out = ops::attention(t.value(q), t.value(k), t.value(v), num_heads, cache.get());
  return t.record(std::move(out), {q, k, v}, [q, k, v, num_heads, cache](Tape& tp, const Matrix& g) {
    Matrix dq, dk, dv;
    const bool wq = tp.wants(q), wk = tp.wants(k), wv = tp.wants(v);
    ops::attention_backward(tp.value(q), tp.value(k), tp.value(v), num_heads, *cache, g, wq ? &dq : nullptr,
                            wk ? &dk : nullptr, wv ? &dv : nullptr);
    if (wq) tp.grad_slot(q) += dq;
    if (wk) tp.grad_slot(k) += dk;
    if (wv) tp.grad_slot(v) += dv;
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias) {
  auto cache = std::make_shared<ops::LayerNormCache>();
  Matrix out = ops::layer_norm(t.value(x), t.value(gain), t.value(bias), cache.get());
  return t.record(std::move(out), {x, gain, bias}, [x, gain, bias, cache](Tape& tp, const Matrix& g) {
    Matrix dx, dg, db;
    const bool wx = tp.wants(x), wg = tp.wants(gain), wb = tp.wants(bias);
    ops::layer_norm_backward(tp.value(gain), *cache, g, wx ? &dx : nullptr, wg ? &dg : nullptr,
                             wb ? &db : nullptr);
    if (wx) tp.grad_slot(x) += dx;
    if (wg) tp.grad_slot(gain) += dg;
    if (wb) tp.grad_slot(bias) += db;
  });
}

Var gelu(Tape& t, Var x) {
  Matrix out = t.value(x);
  for (auto& v : out.values()) v = ops::gelu(v);
  return t.record(std::move(out), {x}, [x](Tape& tp, const Matrix& g) {
    if (!tp.wants(x)) return;
    const Matrix& xv = tp.value(x);
    Matrix& gx = tp.grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * ops::gelu_derivative(xv[i]);
  });
}

Var mean_rows(Tape& t, Var x) {
  return t.record(ops::mean_rows(t.value(x)), {x}, [x](Tape& tp, const Matrix& g) {
    if (!tp.wants(x)) return;
    Matrix& gx = tp.grad_slot(x);
    const double inv = 1.0 / static_cast<double>(gx.rows());
    for (std::size_t r = 0; r < gx.rows(); ++r)
      for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g[c] * inv;
  });
}

Var gather_rows(Tape& t, Var table, std::vector<std::size_t> ids) {
  const Matrix& tab = t.value(table);
  Matrix out(ids.size(), tab.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tab.rows()) throw ShapeError("gather_rows: id out of range");
    std::copy(tab.row(ids[i]).begin(), tab.row(ids[i]).end(), out.row(i).begin());
  }
  return t.record(std::move(out), {table}, [table, ids = std::move(ids)](Tape& tp, const Matrix& g) {
    if (!tp.wants(table)) return;
    Matrix& gt = tp.grad_slot(table);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < g.cols(); ++c) gt(ids[i], c) += g(i, c);
  });
}

Var head_rows(Tape& t, Var table, std::size_t n) {
  const Matrix& tab = t.value(table);
  if (n > tab.rows()) throw ShapeError("head_rows: sequence longer than positional table");
  Matrix out(n, tab.cols(), std::vector<double>(tab.values().begin(), tab.values().begin() + n * tab.cols()));
  return t.record(std::move(out), {table}, [table](Tape& tp, const Matrix& g) {
    if (!tp.wants(table)) return;
    Matrix& gt = tp.grad_slot(table);
    for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
  });
}

Var cross_entropy(Tape& t, Var logits, std::size_t label) {
  const Matrix& z = t.value(logits);
  const double loss = ops::cross_entropy(z, label);
  return t.record(Matrix(1, 1, loss), {logits}, [logits, label](Tape& tp, const Matrix& g) {
    if (!tp.wants(logits)) return;
    Matrix p = tp.value(logits);
    ops::softmax_rows_inplace(p);
    p[label] -= 1.0;
    tp.grad_slot(logits) += p * g[0];
  });
}

Var mse(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require_same_shape(av, bv, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double n = static_cast<double>(av.size());
  return t.record(Matrix(1, 1, s / n), {a, b}, [a, b, n](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(a);
    const Matrix& bv = tp.value(b);
    const double k = 2.0 * g[0] / n;
    if (tp.wants(a)) {
      Matrix& ga = tp.grad_slot(a);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += k * (av[i] - bv[i]);
    }
    if (tp.wants(b)) {
      Matrix& gb = tp.grad_slot(b);
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= k * (av[i] - bv[i]);
    }
  });
}

}  // namespace qspike::ad
