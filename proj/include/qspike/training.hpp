#pragma once

#include <functional>
#include <vector>

#include "qspike/implicit_grad.hpp"

namespace qspike {

struct FitConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  AdamConfig adam;
  std::uint64_t seed = 0;
  bool parallel = true;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
};

using StepCallback = std::function<void(std::size_t step, const GradientBundle&)>;

// Teacher: ordinary backpropagation through the full-precision transformer.
GradientBundle teacher_batch_gradients(const TeacherModel& teacher, const std::vector<Example>& batch, bool parallel);
std::size_t teacher_predict(const TeacherModel& teacher, const TokenIds& tokens);
double teacher_accuracy(const TeacherModel& teacher, const std::vector<Example>& data);
std::vector<EpochMetrics> train_teacher(TeacherModel& teacher, const std::vector<Example>& train,
                                        const std::vector<Example>& dev, const FitConfig& cfg,
                                        const StepCallback& on_step = {});

// Student: cross-entropy through the equilibrium with implicit gradients.
std::size_t student_predict(const EncoderStack& stack, const TokenIds& tokens, const SolverConfig& solver);
double student_accuracy(const EncoderStack& stack, const std::vector<Example>& data, const SolverConfig& solver,
                        bool parallel = true);
std::vector<EpochMetrics> finetune_student(EncoderStack& stack, const std::vector<Example>& train,
                                           const std::vector<Example>& dev, const FitConfig& cfg,
                                           const ImplicitConfig& implicit, const StepCallback& on_step = {});

std::size_t argmax(const Matrix& row);

}  // namespace qspike
