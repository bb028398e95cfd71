#include "qspike/distill.hpp"

#include <iomanip>

#include "qspike/data.hpp"

namespace qspike {

Matrix identity_padded(std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < std::min(rows, cols); ++i) m(i, i) = 1.0;
  return m;
}

KdConfig KdConfig::uniform(std::size_t student_blocks, std::size_t teacher_blocks, std::size_t student_dim,
                           std::size_t teacher_dim) {
  if (student_blocks == 0 || teacher_blocks == 0) throw ConfigError("distillation needs nonempty models");
  KdConfig cfg;
  for (std::size_t h = 1; h <= student_blocks; ++h) {
    const std::size_t f = (h * teacher_blocks + student_blocks - 1) / student_blocks;  // ceil, 1-based
    cfg.pairs.push_back(KdPair{h - 1, f - 1, identity_padded(student_dim, teacher_dim), 1.0});
  }
  return cfg;
}

void KdConfig::validate(std::size_t student_blocks, std::size_t teacher_blocks, std::size_t student_dim,
                        std::size_t teacher_dim) const {
  if (pairs.empty()) throw ConfigError("distillation needs at least one layer pair");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const KdPair& p = pairs[i];
    if (p.student_block >= student_blocks) throw ConfigError("distillation pair maps a missing student block");
    if (p.teacher_block >= teacher_blocks) throw ConfigError("distillation pair exceeds teacher depth");
    if (i > 0 && (p.student_block < pairs[i - 1].student_block || p.teacher_block < pairs[i - 1].teacher_block)) {
      throw ConfigError("distillation layer map must be nondecreasing");
    }
    if (p.projection.rows() != student_dim || p.projection.cols() != teacher_dim) {
      throw ConfigError("distillation projection " + p.projection.shape_str() + " does not align widths");
    }
    if (!(p.weight >= 0.0)) throw ConfigError("distillation weights must be nonnegative");
  }
}

std::vector<Matrix*> KdConfig::projections() {
  std::vector<Matrix*> out;
  for (auto& p : pairs) out.push_back(&p.projection);
  return out;
}

KdLoss kd_loss(const std::vector<Matrix>& student, const std::vector<Matrix>& teacher, const KdConfig& cfg) {
  KdLoss out;
  for (const auto& p : cfg.pairs) {
    if (p.student_block >= student.size()) throw ConfigError("kd_loss: unmapped student block");
    if (p.teacher_block >= teacher.size()) throw ConfigError("kd_loss: teacher block missing");
    const Matrix proj = matmul(student[p.student_block], p.projection);
    const Matrix& t = teacher[p.teacher_block];
    require_same_shape(proj, t, "kd_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += (proj[i] - t[i]) * (proj[i] - t[i]);
    const double mse = s / static_cast<double>(t.size());
    out.per_pair.push_back(mse);
    out.total += p.weight * mse;
  }
  return out;
}

LossGraph record_kd_loss(ad::Tape& tape, const SweepGraph& graph, const EncoderStack& stack, const KdConfig& cfg,
                         const std::vector<Matrix>& teacher_hiddens) {
  LossGraph lg;
  ad::Var total;
  for (std::size_t i = 0; i < cfg.pairs.size(); ++i) {
    const KdPair& p = cfg.pairs[i];
    if (p.student_block >= stack.layers.size()) throw ConfigError("kd loss: unmapped student block");
    const ad::Var w = tape.param(p.projection);
    lg.extra_params.push_back(w);
    const ad::Var a = graph.in[EncoderStack::layer_index(p.student_block, Sublayer::Output)];
    const ad::Var target = tape.constant_ref(teacher_hiddens.at(p.teacher_block));
    const ad::Var mse = ad::mse(tape, ad::matmul(tape, a, w), target);
    lg.terms.emplace_back("kd_pair" + std::to_string(i), mse);
    const ad::Var term = ad::scale(tape, mse, p.weight);
    total = total.valid() ? ad::add(tape, total, term) : term;
  }
  lg.total = total;
  return lg;
}

KdReport evaluate_kd(const EncoderStack& stack, const std::vector<Example>& data,
                     const std::vector<std::vector<Matrix>>& teacher_hiddens, const KdConfig& cfg,
                     const SolverConfig& solver, bool parallel) {
  std::vector<KdLoss> parts(data.size());
  const auto count = static_cast<std::ptrdiff_t>(data.size());
  std::vector<std::exception_ptr> errors(data.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto u = static_cast<std::size_t>(i);
    try {
      const EquilibriumSolution sol = solve_fixed_point(stack, data[u].tokens, solver);
      std::vector<Matrix> blocks;
      for (std::size_t b = 0; b < stack.layers.size(); ++b)
        blocks.push_back(sol.asr_star[EncoderStack::layer_index(b, Sublayer::Output)]);
      parts[u] = kd_loss(blocks, teacher_hiddens[u], cfg);
    } catch (...) {
      errors[u] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  KdReport r;
  r.mse.assign(cfg.pairs.size(), 0.0);
  for (const auto& p : parts) {
    r.total += p.total;
    for (std::size_t k = 0; k < p.per_pair.size(); ++k) r.mse[k] += p.per_pair[k];
  }
  const double inv = data.empty() ? 0.0 : 1.0 / static_cast<double>(data.size());
  r.total *= inv;
  for (auto& m : r.mse) m *= inv;
  return r;
}

std::vector<KdReport> run_distillation(EncoderStack& stack, const TeacherModel& teacher,
                                       const std::vector<Example>& train, KdConfig& cfg, const KdTrainConfig& tc,
                                       const StepCallback& on_step) {
  tc.fit.validate();
  if (train.empty()) throw ConfigError("training split is empty");
  cfg.validate(stack.layers.size(), teacher.layers.size(), stack.hidden(), teacher.cfg.hidden_dim);

  std::vector<std::vector<Matrix>> targets(train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    targets[i] = teacher.forward(strip_padding(train[i].tokens)).hiddens;

  const std::size_t n_eval = std::min(tc.eval_examples, train.size());
  const std::vector<Example> eval_set(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_eval));
  const std::vector<std::vector<Matrix>> eval_targets(targets.begin(),
                                                      targets.begin() + static_cast<std::ptrdiff_t>(n_eval));

  ImplicitConfig ic = tc.implicit;
  ic.parallel = tc.fit.parallel;
  std::vector<Matrix*> extra = cfg.projections();
  Optimizer opt = make_optimizer(stack, extra, tc.fit.adam);
  Rng rng(tc.fit.seed);

  std::vector<KdReport> reports;
  reports.push_back(evaluate_kd(stack, eval_set, eval_targets, cfg, tc.implicit.solver, ic.parallel));
  std::size_t step = 0;
  for (std::size_t e = 1; e <= tc.fit.epochs; ++e) {
    for (const auto& idx : make_batches(train.size(), tc.fit.batch_size, rng)) {
      std::vector<Example> batch;
      for (std::size_t i : idx) batch.push_back(train[i]);
      const LossRecorder rec = [&](ad::Tape& t, const StudentVars&, const SweepGraph& g, std::size_t i) {
        return record_kd_loss(t, g, stack, cfg, targets[idx[i]]);
      };
      const GradientBundle g = training_step(stack, batch, 0, rec, extra, opt, ic);
      if (on_step) on_step(++step, g);
    }
    KdReport r = evaluate_kd(stack, eval_set, eval_targets, cfg, tc.implicit.solver, ic.parallel);
    r.epoch = e;
    reports.push_back(std::move(r));
  }
  return reports;
}

void write_kd_csv(const std::vector<KdReport>& reports, std::ostream& os) {
  os << "epoch,pair_index,mse,total\n" << std::setprecision(10);
  for (const auto& r : reports) {
    if (r.epoch == 0) continue;
    for (std::size_t k = 0; k < r.mse.size(); ++k) os << r.epoch << ',' << k << ',' << r.mse[k] << ',' << r.total << '\n';
  }
}

}  // namespace qspike
