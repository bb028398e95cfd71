#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qspike/autodiff.hpp"
#include "qspike/model.hpp"

namespace qspike {

struct SolverConfig {
  std::size_t max_iters = 500;
  double tol = 1e-6;       // sup-norm residual
  double damping = 1.0;    // relaxation factor lambda in (0, 1]

  void validate() const;
};

struct EquilibriumSolution {
  RateState asr_star;
  std::vector<double> residual_history;  // sup |f(a_k) - a_k| per iteration
  std::size_t iters_used = 0;
  bool converged = false;
};

using RateMap = std::function<RateState(const RateState&)>;

double sup_residual(const RateState& fa, const RateState& a);

/// Damped Picard iteration a <- (1 - lambda) a + lambda f(a) from `init`.
/// Throws ConvergenceError (carrying the residual history) after max_iters.
EquilibriumSolution solve_fixed_point(const RateMap& f, RateState init, const SolverConfig& cfg);

/// Steady state of the student on one sequence, starting from zero rates.
EquilibriumSolution solve_fixed_point(const EncoderStack& stack, const TokenIds& tokens, const SolverConfig& cfg);

/// A converged solve together with the tape of f evaluated at a*, which the
/// implicit gradient differentiates. Parameters are bound by reference, so
/// the stack must outlive this object and stay unmodified.
struct Equilibrium {
  EquilibriumSolution solution;
  std::unique_ptr<ad::Tape> tape;
  StudentVars vars;
  SweepGraph graph;
};

Equilibrium solve_equilibrium(const EncoderStack& stack, const TokenIds& tokens, const SolverConfig& cfg);

struct TraceRow {
  std::size_t step;
  std::string layer_name;
  double mean_asr;
  double residual;  // mean over neurons of |asr(t) - a*|
};

struct ConvergenceTrace {
  std::vector<std::string> layer_names;
  std::vector<double> star_mean;  // mean a* per layer
  // [layer][step-1]
  std::vector<std::vector<double>> mean_asr;
  std::vector<std::vector<double>> residual;
  std::vector<Matrix> temporal_logits, fixed_point_logits;  // per sequence

  std::vector<TraceRow> rows() const;
  /// First step after which the layer's residual stays at or below tol;
  /// 0 if it never settles within the horizon.
  std::size_t steps_to_tolerance(std::size_t layer, double tol) const;
};

/// Runs the temporal simulation for T steps on every sequence of `batch`
/// and records, per neuron layer and step, the mean ASR and the mean
/// absolute deviation from the fixed point, pooled over all sequences.
ConvergenceTrace convergence_trace(const EncoderStack& stack, const std::vector<TokenIds>& batch, std::size_t timesteps,
                                   const SolverConfig& cfg);

/// True when r[t] <= r[t-1] for every step after the first `burn_in`.
bool nonincreasing_after(const std::vector<double>& r, std::size_t burn_in);

void write_trace_csv(const ConvergenceTrace& trace, std::ostream& os);

}  // namespace qspike
