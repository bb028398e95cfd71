#pragma once

#include <functional>
#include <string>
#include <vector>

#include "qspike/adam.hpp"
#include "qspike/equilibrium.hpp"

namespace qspike {

struct VjpSolveConfig {
  std::size_t max_terms = 50;
  double tol = 1e-8;
  /// Solve the adjoint system densely instead (test oracle; O(n^3)).
  bool dense = false;

  void validate() const;
};

/// v -> v^T df/da at the fixed point, one matrix per neuron layer.
using VjpFn = std::function<RateState(const RateState&)>;

struct AdjointResult {
  RateState v;
  std::size_t terms = 0;
  double tail = 0.0;  // sup |v_k - v_{k-1}| at exit
};

/// Solves v^T (I - df/da) = g by the Neumann iteration v <- g + v^T df/da.
/// Stops once the tail drops to tol or after max_terms. A tail that grows
/// for 5 consecutive terms raises SpectralRadiusError.
AdjointResult implicit_vjp(const RateState& loss_grad, const VjpFn& vjp, const VjpSolveConfig& cfg);

/// Same system solved by materializing the Jacobian through unit VJPs and
/// Gaussian elimination with partial pivoting.
AdjointResult dense_adjoint_solve(const RateState& loss_grad, const VjpFn& vjp);

/// Subgradient of the rate clip: 1 on [0, 1], 0 outside.
double clip_derivative(double a);

// ---------------------------------------------------------------------------
// Training step

struct Example {
  TokenIds tokens;
  std::size_t label = 0;
};

/// Loss recorded on an equilibrium tape. Terms read the state leaves
/// (graph.in), which hold a*.
struct LossGraph {
  ad::Var total;
  std::vector<std::pair<std::string, ad::Var>> terms;
  /// Parameters outside the stack (e.g. distillation projections) bound on
  /// this tape, in the order of the caller's extra parameter list.
  std::vector<ad::Var> extra_params;
};

using LossRecorder =
    std::function<LossGraph(ad::Tape&, const StudentVars&, const SweepGraph&, std::size_t example_index)>;

/// Cross-entropy of the classifier on the mean-pooled final rates.
ad::Var record_classifier_loss(ad::Tape& tape, const StudentVars& vars, const SweepGraph& graph,
                               const EncoderStack& stack, std::size_t label);

struct GradientBundle {
  std::vector<Matrix> grads;        // EncoderStack::parameters() order
  std::vector<Matrix> extra_grads;  // caller's extra parameters
  double loss = 0.0;
  std::vector<std::pair<std::string, double>> terms;
  double max_residual = 0.0;  // worst final solver residual in the batch
  std::size_t max_solver_iters = 0;
  std::size_t max_vjp_terms = 0;

  double grad_norm() const;
};

struct ImplicitConfig {
  SolverConfig solver;
  VjpSolveConfig vjp;
  /// Evaluate batch items on OpenMP threads (reduction stays serial).
  bool parallel = true;
};

/// Gradient of the example's loss at equilibrium.
GradientBundle example_gradients(const EncoderStack& stack, const Example& ex, std::size_t example_index,
                                 const LossRecorder& loss, std::size_t num_extra, const ImplicitConfig& cfg);

/// Batch-mean gradients; the per-example reduction happens in batch order.
GradientBundle batch_gradients(const EncoderStack& stack, const std::vector<Example>& batch,
                               std::size_t first_index, const LossRecorder& loss, std::size_t num_extra,
                               const ImplicitConfig& cfg);

/// Adam state for the stack's parameters plus any extra tensors.
struct Optimizer {
  AdamConfig cfg;
  std::vector<AdamState> stack_states;
  std::vector<AdamState> extra_states;
};

Optimizer make_optimizer(EncoderStack& stack, const std::vector<Matrix*>& extra, const AdamConfig& cfg);

/// Applies the bundle with Adam. Gradients for quantized weights are taken
/// with respect to the effective weights and passed straight through to the
/// latent weights; codes are refreshed afterwards.
void apply_gradients(EncoderStack& stack, const std::vector<Matrix*>& extra, const GradientBundle& g,
                     Optimizer& opt);

/// Computes batch gradients and applies them.
GradientBundle training_step(EncoderStack& stack, const std::vector<Example>& batch, std::size_t first_index,
                             const LossRecorder& loss, const std::vector<Matrix*>& extra, Optimizer& opt,
                             const ImplicitConfig& cfg);

/// One JSON-lines record: step, loss terms, residuals, gradient norm.
std::string training_log_line(std::size_t step, const GradientBundle& g);

}  // namespace qspike
