#pragma once

#include <ostream>
#include <vector>

#include "qspike/training.hpp"

namespace qspike {

/// One distillation pair: the student block's equilibrium rates, projected
/// by `projection` (student_dim x teacher_dim), are matched to the
/// teacher block's hidden states.
struct KdPair {
  std::size_t student_block = 0;
  std::size_t teacher_block = 0;
  Matrix projection;
  double weight = 1.0;
};

struct KdConfig {
  std::vector<KdPair> pairs;

  /// Maps student block h (1-based) to teacher block ceil(h L_T / L_S) with
  /// identity-padded projections and unit weights.
  static KdConfig uniform(std::size_t student_blocks, std::size_t teacher_blocks, std::size_t student_dim,
                          std::size_t teacher_dim);

  /// Teacher indices must be within depth and nondecreasing in student order;
  /// projections must align the widths.
  void validate(std::size_t student_blocks, std::size_t teacher_blocks, std::size_t student_dim,
                std::size_t teacher_dim) const;

  std::vector<Matrix*> projections();
};

/// Identity-padded rectangular matrix.
Matrix identity_padded(std::size_t rows, std::size_t cols);

struct KdLoss {
  double total = 0.0;
  std::vector<double> per_pair;
};

/// sum_i w_i MSE(a_{s_i} W_i, T_{t_i}); MSE averages over tokens and features.
KdLoss kd_loss(const std::vector<Matrix>& student_block_rates, const std::vector<Matrix>& teacher_hiddens,
               const KdConfig& cfg);

/// Same loss on an equilibrium tape, reading the state leaves. Binds the
/// projections as extra parameters in pair order.
LossGraph record_kd_loss(ad::Tape& tape, const SweepGraph& graph, const EncoderStack& stack, const KdConfig& cfg,
                         const std::vector<Matrix>& teacher_hiddens);

struct KdReport {
  std::size_t epoch = 0;
  std::vector<double> mse;  // per pair, unweighted
  double total = 0.0;
};

struct KdTrainConfig {
  FitConfig fit;
  ImplicitConfig implicit;
  /// Number of training examples the per-epoch KD loss is measured on.
  std::size_t eval_examples = 128;
};

/// Mean KD loss of the stack over `data` (teacher targets precomputed).
KdReport evaluate_kd(const EncoderStack& stack, const std::vector<Example>& data,
                     const std::vector<std::vector<Matrix>>& teacher_hiddens, const KdConfig& cfg,
                     const SolverConfig& solver, bool parallel);

/// Trains the student (and the projections) on the KD loss alone. The
/// returned series starts with the epoch-0 loss before any update.
std::vector<KdReport> run_distillation(EncoderStack& stack, const TeacherModel& teacher,
                                       const std::vector<Example>& train, KdConfig& cfg, const KdTrainConfig& tc,
                                       const StepCallback& on_step = {});

/// CSV rows epoch,pair_index,mse,total for epochs >= 1.
void write_kd_csv(const std::vector<KdReport>& reports, std::ostream& os);

}  // namespace qspike
