#include "qspike/training.hpp"

#include <exception>

#include "qspike/data.hpp"

namespace qspike {

void FitConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(adam.lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("Adam eps must be positive");
}

std::size_t argmax(const Matrix& row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

namespace {

// Runs fn(i) for every i, on OpenMP threads when asked; the first failure
// (in index order) is rethrown.
template <typename Fn>
void for_each_index(std::size_t n, bool parallel, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<Example> gather(const std::vector<Example>& data, const std::vector<std::size_t>& idx) {
  std::vector<Example> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

}  // namespace

GradientBundle teacher_batch_gradients(const TeacherModel& teacher, const std::vector<Example>& batch,
                                       bool parallel) {
  if (batch.empty()) throw ShapeError("teacher_batch_gradients: empty batch");
  std::vector<GradientBundle> parts(batch.size());
  for_each_index(batch.size(), parallel, [&](std::size_t i) {
    ad::Tape tape;
    const TeacherGraph g = record_teacher(tape, teacher, strip_padding(batch[i].tokens), true);
    const ad::Var loss = ad::cross_entropy(tape, g.logits, batch[i].label);
    tape.backward(loss, Matrix(1, 1, 1.0), ad::Pass::Full);
    GradientBundle& b = parts[i];
    for (ad::Var p : g.params) b.grads.push_back(tape.grad(p));
    b.loss = tape.value(loss)[0];
  });
  GradientBundle sum = std::move(parts[0]);
  for (std::size_t i = 1; i < parts.size(); ++i) {
    for (std::size_t k = 0; k < sum.grads.size(); ++k) sum.grads[k] += parts[i].grads[k];
    sum.loss += parts[i].loss;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& g : sum.grads) g *= inv;
  sum.loss *= inv;
  return sum;
}

std::size_t teacher_predict(const TeacherModel& teacher, const TokenIds& tokens) {
  return argmax(teacher.forward(strip_padding(tokens)).logits);
}

double teacher_accuracy(const TeacherModel& teacher, const std::vector<Example>& data) {
  if (data.empty()) return 0.0;
  std::vector<std::uint8_t> hit(data.size(), 0);
  for_each_index(data.size(), true,
                 [&](std::size_t i) { hit[i] = teacher_predict(teacher, data[i].tokens) == data[i].label; });
  std::size_t c = 0;
  for (auto h : hit) c += h;
  return static_cast<double>(c) / static_cast<double>(data.size());
}

std::vector<EpochMetrics> train_teacher(TeacherModel& teacher, const std::vector<Example>& train,
                                        const std::vector<Example>& dev, const FitConfig& cfg,
                                        const StepCallback& on_step) {
  cfg.validate();
  if (train.empty()) throw ConfigError("training split is empty");
  auto params = teacher.parameters();
  std::vector<AdamState> states;
  for (const auto& p : params) states.emplace_back(*p.value, cfg.adam);
  Rng rng(cfg.seed);
  std::vector<EpochMetrics> out;
  std::size_t step = 0;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    double loss = 0.0;
    const auto batches = make_batches(train.size(), cfg.batch_size, rng);
    for (const auto& idx : batches) {
      const GradientBundle g = teacher_batch_gradients(teacher, gather(train, idx), cfg.parallel);
      for (std::size_t i = 0; i < params.size(); ++i) adam_update(*params[i].value, g.grads[i], states[i]);
      loss += g.loss;
      if (on_step) on_step(++step, g);
    }
    out.push_back(EpochMetrics{e, loss / static_cast<double>(batches.size()), teacher_accuracy(teacher, dev)});
  }
  return out;
}

std::size_t student_predict(const EncoderStack& stack, const TokenIds& tokens, const SolverConfig& solver) {
  const EquilibriumSolution sol = solve_fixed_point(stack, tokens, solver);
  return argmax(student_logits(stack, sol.asr_star[stack.output_index()]));
}

double student_accuracy(const EncoderStack& stack, const std::vector<Example>& data, const SolverConfig& solver,
                        bool parallel) {
  if (data.empty()) return 0.0;
  std::vector<std::uint8_t> hit(data.size(), 0);
  for_each_index(data.size(), parallel,
                 [&](std::size_t i) { hit[i] = student_predict(stack, data[i].tokens, solver) == data[i].label; });
  std::size_t c = 0;
  for (auto h : hit) c += h;
  return static_cast<double>(c) / static_cast<double>(data.size());
}

std::vector<EpochMetrics> finetune_student(EncoderStack& stack, const std::vector<Example>& train,
                                           const std::vector<Example>& dev, const FitConfig& cfg,
                                           const ImplicitConfig& implicit, const StepCallback& on_step) {
  cfg.validate();
  if (train.empty()) throw ConfigError("training split is empty");
  ImplicitConfig ic = implicit;
  ic.parallel = cfg.parallel;
  Optimizer opt = make_optimizer(stack, {}, cfg.adam);
  Rng rng(cfg.seed);
  std::vector<EpochMetrics> out;
  std::size_t step = 0;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    double loss = 0.0;
    const auto batches = make_batches(train.size(), cfg.batch_size, rng);
    for (const auto& idx : batches) {
      const std::vector<Example> batch = gather(train, idx);
      const LossRecorder rec = [&](ad::Tape& t, const StudentVars& v, const SweepGraph& g, std::size_t i) {
        LossGraph lg;
        lg.total = record_classifier_loss(t, v, g, stack, batch[i].label);
        lg.terms.emplace_back("ce", lg.total);
        return lg;
      };
      const GradientBundle g = training_step(stack, batch, 0, rec, {}, opt, ic);
      loss += g.loss;
      if (on_step) on_step(++step, g);
    }
    out.push_back(EpochMetrics{e, loss / static_cast<double>(batches.size()),
                               student_accuracy(stack, dev, implicit.solver, cfg.parallel)});
  }
  return out;
}

}  // namespace qspike
