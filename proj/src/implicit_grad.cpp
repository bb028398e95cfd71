#include "qspike/implicit_grad.hpp"

#include <cmath>
#include <exception>

#include "json.hpp"

namespace qspike {

void VjpSolveConfig::validate() const {
  if (max_terms == 0) throw ConfigError("vjp max_terms must be at least 1");
  if (!(tol > 0.0)) throw ConfigError("vjp tol must be positive");
}

double clip_derivative(double a) { return ops::clip01_derivative(a); }

namespace {

std::size_t flat_size(const RateState& s) {
  std::size_t n = 0;
  for (const auto& m : s) n += m.size();
  return n;
}

std::vector<double> flatten(const RateState& s) {
  std::vector<double> out;
  out.reserve(flat_size(s));
  for (const auto& m : s) out.insert(out.end(), m.values().begin(), m.values().end());
  return out;
}

RateState unflatten(const std::vector<double>& x, const RateState& like) {
  RateState out;
  std::size_t off = 0;
  for (const auto& m : like) {
    Matrix r(m.rows(), m.cols());
    std::copy(x.begin() + static_cast<std::ptrdiff_t>(off), x.begin() + static_cast<std::ptrdiff_t>(off + m.size()),
              r.values().begin());
    off += m.size();
    out.push_back(std::move(r));
  }
  return out;
}

RateState add_states(const RateState& a, const RateState& b) {
  if (a.size() != b.size()) throw ShapeError("adjoint: layer count mismatch");
  RateState out = a;
  for (std::size_t l = 0; l < a.size(); ++l) out[l] += b[l];
  return out;
}

}  // namespace

AdjointResult implicit_vjp(const RateState& g, const VjpFn& vjp, const VjpSolveConfig& cfg) {
  cfg.validate();
  AdjointResult res;
  res.v = g;
  double prev_tail = INFINITY;
  std::size_t growth = 0;
  for (std::size_t k = 1; k <= cfg.max_terms; ++k) {
    RateState next = add_states(g, vjp(res.v));
    const double tail = sup_residual(next, res.v);
    if (!std::isfinite(tail)) throw NumericError("adjoint iteration produced a non-finite value");
    res.v = std::move(next);
    res.terms = k;
    res.tail = tail;
    if (tail <= cfg.tol) return res;
    growth = tail > prev_tail ? growth + 1 : 0;
    if (growth >= 5) {
      throw SpectralRadiusError("adjoint Neumann series diverges: tail grew for 5 consecutive terms (last " +
                                std::to_string(tail) + ")");
    }
    prev_tail = tail;
  }
  return res;
}

AdjointResult dense_adjoint_solve(const RateState& g, const VjpFn& vjp) {
  const std::size_t n = flat_size(g);
  // a[r][c] = delta_rc - J[c][r]; row c of J is e_c^T J.
  std::vector<double> a(n * n, 0.0);
  std::vector<double> unit(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    unit[c] = 1.0;
    const std::vector<double> row = flatten(vjp(unflatten(unit, g)));
    unit[c] = 0.0;
    for (std::size_t r = 0; r < n; ++r) a[r * n + c] = -row[r];
  }
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] += 1.0;
  std::vector<double> b = flatten(g);

  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (std::abs(a[piv * n + col]) < 1e-300) throw NumericError("dense adjoint solve: singular system");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
      std::swap(b[col], b[piv]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i * n + c] * x[c];
    x[i] = s / a[i * n + i];
  }
  AdjointResult res;
  res.v = unflatten(x, g);
  res.terms = n;
  return res;
}

ad::Var record_classifier_loss(ad::Tape& tape, const StudentVars& vars, const SweepGraph& graph,
                               const EncoderStack& stack, std::size_t label) {
  const ad::Var logits = record_logits(tape, vars, graph.in[stack.output_index()]);
  return ad::cross_entropy(tape, logits, label);
}

double GradientBundle::grad_norm() const {
  double s = 0.0;
  for (const auto* set : {&grads, &extra_grads})
    for (const auto& g : *set)
      for (double v : g.values()) s += v * v;
  return std::sqrt(s);
}

GradientBundle example_gradients(const EncoderStack& stack, const Example& ex, std::size_t example_index,
                                 const LossRecorder& loss, std::size_t num_extra, const ImplicitConfig& cfg) {
  Equilibrium eq = solve_equilibrium(stack, ex.tokens, cfg.solver);
  ad::Tape& tape = *eq.tape;
  const LossGraph lg = loss(tape, eq.vars, eq.graph, example_index);
  if (lg.extra_params.size() != num_extra) throw ShapeError("loss recorder bound the wrong number of extras");

  const std::vector<ad::Var>& in = eq.graph.in;
  const std::vector<ad::Var>& out = eq.graph.out;
  const Matrix one(1, 1, 1.0);

  tape.backward(lg.total, one, ad::Pass::StateOnly);
  RateState g;
  for (ad::Var v : in) g.push_back(tape.grad(v));

  const VjpFn vjp = [&](const RateState& v) {
    std::vector<ad::Seed> seeds;
    for (std::size_t l = 0; l < out.size(); ++l) seeds.push_back(ad::Seed{out[l], &v[l]});
    tape.backward(seeds, ad::Pass::StateOnly);
    RateState r;
    for (ad::Var s : in) r.push_back(tape.grad(s));
    return r;
  };
  const AdjointResult adj = cfg.vjp.dense ? dense_adjoint_solve(g, vjp) : implicit_vjp(g, vjp, cfg.vjp);

  std::vector<ad::Seed> seeds{ad::Seed{lg.total, &one}};
  for (std::size_t l = 0; l < out.size(); ++l) seeds.push_back(ad::Seed{out[l], &adj.v[l]});
  tape.backward(seeds, ad::Pass::Full);

  GradientBundle b;
  for (ad::Var p : eq.vars.flat) b.grads.push_back(tape.grad(p));
  for (ad::Var p : lg.extra_params) b.extra_grads.push_back(tape.grad(p));
  b.loss = tape.value(lg.total)[0];
  for (const auto& [name, v] : lg.terms) b.terms.emplace_back(name, tape.value(v)[0]);
  b.max_residual = eq.solution.residual_history.back();
  b.max_solver_iters = eq.solution.iters_used;
  b.max_vjp_terms = adj.terms;
  for (const auto& m : b.grads)
    if (!m.all_finite()) throw NumericError("non-finite parameter gradient");
  return b;
}

GradientBundle batch_gradients(const EncoderStack& stack, const std::vector<Example>& batch,
                               std::size_t first_index, const LossRecorder& loss, std::size_t num_extra,
                               const ImplicitConfig& cfg) {
  if (batch.empty()) throw ShapeError("batch_gradients: empty batch");
  std::vector<GradientBundle> parts(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  const auto count = static_cast<std::ptrdiff_t>(batch.size());
#pragma omp parallel for schedule(dynamic) if (cfg.parallel)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto u = static_cast<std::size_t>(i);
    try {
      parts[u] = example_gradients(stack, batch[u], first_index + u, loss, num_extra, cfg);
    } catch (...) {
      errors[u] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  GradientBundle sum = std::move(parts[0]);
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const GradientBundle& p = parts[i];
    for (std::size_t k = 0; k < sum.grads.size(); ++k) sum.grads[k] += p.grads[k];
    for (std::size_t k = 0; k < sum.extra_grads.size(); ++k) sum.extra_grads[k] += p.extra_grads[k];
    sum.loss += p.loss;
    for (std::size_t k = 0; k < sum.terms.size(); ++k) sum.terms[k].second += p.terms[k].second;
    sum.max_residual = std::max(sum.max_residual, p.max_residual);
    sum.max_solver_iters = std::max(sum.max_solver_iters, p.max_solver_iters);
    sum.max_vjp_terms = std::max(sum.max_vjp_terms, p.max_vjp_terms);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& g : sum.grads) g *= inv;
  for (auto& g : sum.extra_grads) g *= inv;
  sum.loss *= inv;
  for (auto& t : sum.terms) t.second *= inv;
  return sum;
}

Optimizer make_optimizer(EncoderStack& stack, const std::vector<Matrix*>& extra, const AdamConfig& cfg) {
  Optimizer opt;
  opt.cfg = cfg;
  for (const auto& p : stack.parameters()) opt.stack_states.emplace_back(*p.value, cfg);
  for (const Matrix* m : extra) opt.extra_states.emplace_back(*m, cfg);
  return opt;
}

void apply_gradients(EncoderStack& stack, const std::vector<Matrix*>& extra, const GradientBundle& g,
                     Optimizer& opt) {
  auto params = stack.parameters();
  if (params.size() != g.grads.size() || opt.stack_states.size() != params.size()) {
    throw ShapeError("apply_gradients: parameter count mismatch");
  }
  if (extra.size() != g.extra_grads.size() || opt.extra_states.size() != extra.size()) {
    throw ShapeError("apply_gradients: extra parameter count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    // Identity straight-through: d/d(latent) = d/d(effective weight).
    const Matrix grad = params[i].owner ? ste_backward(*params[i].owner, g.grads[i]) : g.grads[i];
    adam_update(*params[i].value, grad, opt.stack_states[i]);
  }
  for (std::size_t i = 0; i < extra.size(); ++i) adam_update(*extra[i], g.extra_grads[i], opt.extra_states[i]);
  stack.refresh_quantization();
}

GradientBundle training_step(EncoderStack& stack, const std::vector<Example>& batch, std::size_t first_index,
                             const LossRecorder& loss, const std::vector<Matrix*>& extra, Optimizer& opt,
                             const ImplicitConfig& cfg) {
  GradientBundle g = batch_gradients(stack, batch, first_index, loss, extra.size(), cfg);
  apply_gradients(stack, extra, g, opt);
  return g;
}

std::string training_log_line(std::size_t step, const GradientBundle& g) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["loss"] = g.loss;
  nlohmann::ordered_json terms = nlohmann::ordered_json::object();
  for (const auto& [name, v] : g.terms) terms[name] = v;
  j["terms"] = terms;
  j["max_residual"] = g.max_residual;
  j["solver_iters"] = g.max_solver_iters;
  j["vjp_terms"] = g.max_vjp_terms;
  j["grad_norm"] = g.grad_norm();
  return j.dump();
}

}  // namespace qspike
