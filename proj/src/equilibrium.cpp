#include "qspike/equilibrium.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "qspike/simulate.hpp"

namespace qspike {

void SolverConfig::validate() const {
  if (max_iters == 0) throw ConfigError("solver max_iters must be at least 1");
  if (!(tol > 0.0)) throw ConfigError("solver tol must be positive");
  if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("solver damping must lie in (0, 1]");
}

double sup_residual(const RateState& fa, const RateState& a) {
  if (fa.size() != a.size()) throw ShapeError("sup_residual: layer count mismatch");
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r = std::max(r, max_abs_diff(fa[i], a[i]));
  return r;
}

namespace {

void relax(RateState& a, const RateState& fa, double lambda) {
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (lambda == 1.0) {
      a[l] = fa[l];
      continue;
    }
    for (std::size_t i = 0; i < a[l].size(); ++i) a[l][i] = (1.0 - lambda) * a[l][i] + lambda * fa[l][i];
  }
}

// Shared loop. `eval` returns f(a) and may keep side information about the
// latest evaluation.
template <typename Eval>
EquilibriumSolution iterate(Eval&& eval, RateState a, const SolverConfig& cfg) {
  cfg.validate();
  EquilibriumSolution sol;
  RateState fa = eval(a);
  for (std::size_t k = 1; k <= cfg.max_iters; ++k) {
    relax(a, fa, cfg.damping);
    fa = eval(a);
    const double r = sup_residual(fa, a);
    if (!std::isfinite(r)) throw NumericError("fixed-point residual is not finite");
    sol.residual_history.push_back(r);
    sol.iters_used = k;
    if (r <= cfg.tol) {
      sol.converged = true;
      sol.asr_star = std::move(a);
      return sol;
    }
  }
  throw ConvergenceError("fixed-point solve did not reach tol " + std::to_string(cfg.tol) + " in " +
                             std::to_string(cfg.max_iters) + " iterations",
                         sol.residual_history);
}

}  // namespace

EquilibriumSolution solve_fixed_point(const RateMap& f, RateState init, const SolverConfig& cfg) {
  return iterate(f, std::move(init), cfg);
}

EquilibriumSolution solve_fixed_point(const EncoderStack& stack, const TokenIds& tokens, const SolverConfig& cfg) {
  const TokenIds seq = strip_padding(tokens);
  return iterate([&](const RateState& a) { return sweep(stack, seq, a); }, stack.zero_state(seq.size()), cfg);
}

Equilibrium solve_equilibrium(const EncoderStack& stack, const TokenIds& tokens, const SolverConfig& cfg) {
  const TokenIds seq = strip_padding(tokens);
  Equilibrium eq;
  auto eval = [&](const RateState& a) {
    eq.tape = std::make_unique<ad::Tape>();
    eq.vars = bind_parameters(*eq.tape, stack, true);
    eq.graph = record_sweep(*eq.tape, eq.vars, stack, seq, a);
    RateState fa;
    fa.reserve(eq.graph.out.size());
    for (ad::Var v : eq.graph.out) fa.push_back(eq.tape->value(v));
    return fa;
  };
  eq.solution = iterate(eval, stack.zero_state(seq.size()), cfg);
  return eq;
}

std::vector<TraceRow> ConvergenceTrace::rows() const {
  std::vector<TraceRow> out;
  const std::size_t steps = mean_asr.empty() ? 0 : mean_asr[0].size();
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t l = 0; l < layer_names.size(); ++l)
      out.push_back(TraceRow{t + 1, layer_names[l], mean_asr[l][t], residual[l][t]});
  }
  return out;
}

std::size_t ConvergenceTrace::steps_to_tolerance(std::size_t layer, double tol) const {
  const auto& r = residual.at(layer);
  std::size_t settled = 1;  // 1-based step from which r stays <= tol
  for (std::size_t t = 0; t < r.size(); ++t) {
    if (r[t] > tol) settled = t + 2;
  }
  return settled > r.size() ? 0 : settled;
}

ConvergenceTrace convergence_trace(const EncoderStack& stack, const std::vector<TokenIds>& batch,
                                   std::size_t timesteps, const SolverConfig& cfg) {
  if (timesteps == 0) throw DomainError("convergence_trace: timesteps must be at least 1");
  if (batch.empty()) throw ShapeError("convergence_trace: empty batch");
  const std::size_t layers = stack.num_neuron_layers();
  ConvergenceTrace tr;
  for (std::size_t l = 0; l < layers; ++l) tr.layer_names.push_back(stack.layer_name(l));
  tr.mean_asr.assign(layers, std::vector<double>(timesteps, 0.0));
  tr.residual.assign(layers, std::vector<double>(timesteps, 0.0));
  tr.star_mean.assign(layers, 0.0);

  std::vector<double> neurons(layers, 0.0);
  for (const auto& seq : batch) {
    const EquilibriumSolution sol = solve_fixed_point(stack, seq, cfg);
    for (std::size_t l = 0; l < layers; ++l) {
      neurons[l] += static_cast<double>(sol.asr_star[l].size());
      tr.star_mean[l] += sol.asr_star[l].sum();
    }
    SimulationOptions opts;
    opts.timesteps = timesteps;
    opts.on_step = [&](std::size_t t, const std::vector<LifLayerState>& st) {
      for (std::size_t l = 0; l < layers; ++l) {
        const Matrix a = asr(st[l]);
        const Matrix& star = sol.asr_star[l];
        double dev = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) dev += std::abs(a[i] - star[i]);
        tr.mean_asr[l][t - 1] += a.sum();
        tr.residual[l][t - 1] += dev;
      }
    };
    tr.temporal_logits.push_back(student_forward_infer(stack, seq, opts).logits);
    tr.fixed_point_logits.push_back(student_logits(stack, sol.asr_star[stack.output_index()]));
  }
  for (std::size_t l = 0; l < layers; ++l) {
    tr.star_mean[l] /= neurons[l];
    for (std::size_t t = 0; t < timesteps; ++t) {
      tr.mean_asr[l][t] /= neurons[l];
      tr.residual[l][t] /= neurons[l];
    }
  }
  return tr;
}

bool nonincreasing_after(const std::vector<double>& r, std::size_t burn_in) {
  for (std::size_t t = burn_in + 1; t < r.size(); ++t)
    if (r[t] > r[t - 1]) return false;
  return true;
}

void write_trace_csv(const ConvergenceTrace& trace, std::ostream& os) {
  os << "step,layer_name,mean_asr,residual\n";
  os << std::setprecision(10);
  for (const auto& r : trace.rows()) os << r.step << ',' << r.layer_name << ',' << r.mean_asr << ',' << r.residual << '\n';
}

}  // namespace qspike
