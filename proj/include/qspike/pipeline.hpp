#pragma once

// Staged procedure behind the CLI: teacher training, distillation into the
// quantized student, cross-entropy fine-tuning, temporal simulation, energy
// accounting and evaluation. Every command writes its artifacts under the
// configured output directory only.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qspike/checkpoint.hpp"
#include "qspike/distill.hpp"
#include "qspike/energy.hpp"

namespace qspike {

struct DataSettings {
  std::optional<std::string> train_path, dev_path;
  SynthConfig synth;
  std::size_t train_size = 128;
  std::size_t dev_size = 128;
  std::uint64_t data_seed = 7;
  std::size_t max_len = 32;
};

struct TeacherSettings {
  std::size_t hidden_dim = 64, intermediate_dim = 128, num_heads = 2, num_layers = 2;
  std::size_t epochs = 20;
  double lr = 1e-3;
};

struct StudentSettings {
  std::size_t hidden_dim = 64, intermediate_dim = 128, num_heads = 2, num_layers = 2;
  QuantMode quant = QuantMode::Ternary158Bit;
  LifConfig lif;
  double feedback_scale = 0.0;
  bool binary_scale = true;
  double epsilon = 1e-6;
};

struct TrainingSettings {
  std::size_t batch_size = 16;
  double student_lr = 5e-4;
  std::size_t kd_epochs = 30;
  std::size_t finetune_epochs = 20;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  bool parallel = true;
};

struct KdSettings {
  std::optional<std::vector<std::size_t>> layer_map;  // teacher block (1-based) per student block
  std::optional<std::vector<double>> loss_weights;
  std::size_t eval_examples = 128;
};

struct SimulateSettings {
  std::size_t timesteps = 500;    // also used by energy and temporal eval
  std::size_t examples = 8;       // dev sequences traced
  double trace_tol = 0.02;        // residual level for steps-to-tolerance
  std::size_t burn_in = 10;
};

struct EnergySettings {
  EnergyProfile profile;
  std::size_t examples = 16;  // dev sequences simulated per model
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DataSettings data;
  TeacherSettings teacher;
  StudentSettings student;
  TrainingSettings training;
  SolverConfig solver;
  VjpSolveConfig vjp;
  KdSettings kd;
  SimulateSettings simulate;
  EnergySettings energy;

  void validate() const;
};

/// Parses a config document; every key is optional, unknown keys and
/// wrongly typed values raise ConfigError.
PipelineConfig parse_config(const nlohmann::ordered_json& j);
PipelineConfig load_config(const std::string& path);
nlohmann::ordered_json config_json(const PipelineConfig& c);

/// Encoded train/dev splits plus the tokenizer built on the train split.
struct TaskData {
  Corpus train_corpus, dev_corpus;
  Tokenizer tokenizer;
  std::vector<Example> train, dev;
};
TaskData load_task(const PipelineConfig& cfg);

StudentConfig student_config(const PipelineConfig& cfg, std::size_t vocab, std::size_t classes);
TeacherConfig teacher_config(const PipelineConfig& cfg, std::size_t vocab, std::size_t classes);
ImplicitConfig implicit_config(const PipelineConfig& cfg);
FitConfig student_fit(const PipelineConfig& cfg, std::size_t epochs);
KdConfig kd_config(const PipelineConfig& cfg, std::size_t student_blocks, std::size_t teacher_blocks,
                   std::size_t student_dim, std::size_t teacher_dim);
/// Freshly initialized student for the task (stage Init).
StudentCheckpoint initial_student(const PipelineConfig& cfg, const TaskData& data);

// Commands. Paths default to the conventional names in the output directory.
struct TeacherResult {
  std::vector<EpochMetrics> epochs;
  std::string checkpoint;
};
TeacherResult cmd_train_teacher(const PipelineConfig& cfg);

struct DistillResult {
  std::vector<KdReport> reports;
  double dev_accuracy = 0.0;
  std::string checkpoint;
};
DistillResult cmd_distill(const PipelineConfig& cfg, const std::string& teacher_ckpt,
                          const std::optional<std::string>& init_ckpt = std::nullopt);

struct FinetuneResult {
  std::vector<EpochMetrics> epochs;
  double initial_accuracy = 0.0;
  std::string checkpoint;
};
/// Refuses an Init-stage (not distilled) student unless allow_skip_kd; with
/// no checkpoint and allow_skip_kd a fresh student is fine-tuned.
FinetuneResult cmd_finetune(const PipelineConfig& cfg, const std::optional<std::string>& student_ckpt,
                            bool allow_skip_kd);

struct SimulateResult {
  ConvergenceTrace trace;
  std::vector<Matrix> temporal_logits, fixed_point_logits;  // per traced sequence
  std::vector<double> layer_deviation;  // final-step mean |asr - a*|
  std::vector<std::size_t> steps_to_tol;
};
SimulateResult cmd_simulate(const PipelineConfig& cfg, const std::string& student_ckpt);

/// Runs the eval set through the temporal simulator for each model.
EnergyReport measure_energy(const EncoderStack& stack, const std::vector<Example>& eval, std::size_t timesteps,
                            const EnergyProfile& profile);
EnergyComparison cmd_energy(const PipelineConfig& cfg, const std::string& quant_ckpt, const std::string& fp_ckpt);

struct EvalResult {
  std::string model_kind;
  double dev_accuracy = 0.0;
  std::optional<double> temporal_accuracy;
};
EvalResult cmd_eval(const PipelineConfig& cfg, const std::string& ckpt, bool temporal);

std::string output_path(const PipelineConfig& cfg, const std::string& name);

}  // namespace qspike
