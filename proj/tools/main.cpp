#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "qspike/pipeline.hpp"

using namespace qspike;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kConvergence = 3, kIo = 4 };

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> quant;
  std::optional<std::size_t> timesteps;
};

PipelineConfig resolve(const Overrides& o) {
  PipelineConfig cfg = o.config.empty() ? parse_config(nlohmann::ordered_json::object()) : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.output_dir = *o.out;
  if (o.quant) cfg.student.quant = parse_quant_mode(*o.quant);
  if (o.timesteps) cfg.simulate.timesteps = *o.timesteps;
  cfg.validate();
  return cfg;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantized spiking transformer: training, distillation, simulation and energy accounting"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides o;
  app.add_option("--config", o.config, "JSON config file (defaults apply when omitted)");
  app.add_option("--seed", o.seed, "Seed override");
  app.add_option("--out", o.out, "Output directory override");
  app.add_option("--quant", o.quant, "Student weight precision")->check(CLI::IsMember({"fp", "1bit", "1.58bit"}));
  app.add_option("--timesteps", o.timesteps, "Simulation length override")->check(CLI::PositiveNumber);

  auto* teacher_cmd = app.add_subcommand("train-teacher", "Train the full-precision teacher");

  std::optional<std::string> teacher_path, init_path;
  auto* distill_cmd = app.add_subcommand("distill", "Distill teacher hidden states into the spiking student");
  distill_cmd->add_option("--teacher", teacher_path, "Teacher checkpoint (default <out>/teacher.ckpt.json)");
  distill_cmd->add_option("--init", init_path, "Student checkpoint to start from (default fresh init)");

  std::optional<std::string> student_path;
  bool allow_skip_kd = false;
  auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune the student on the classification loss");
  finetune_cmd->add_option("--student", student_path, "Distilled student (default <out>/student_kd.ckpt.json)");
  finetune_cmd->add_flag("--allow-skip-kd", allow_skip_kd, "Permit an undistilled or fresh student");

  auto* simulate_cmd = app.add_subcommand("simulate", "Trace temporal convergence to the fixed point");
  simulate_cmd->add_option("--student", student_path, "Student checkpoint (default <out>/student_final.ckpt.json)");

  std::string quantized_path, fp_path;
  auto* energy_cmd = app.add_subcommand("energy", "Compare operation counts and energy against a full-precision student");
  energy_cmd->add_option("--quantized", quantized_path, "Quantized student checkpoint")->required();
  energy_cmd->add_option("--fp", fp_path, "Full-precision student checkpoint")->required();

  std::optional<std::string> ckpt_path;
  bool temporal = false;
  auto* eval_cmd = app.add_subcommand("eval", "Dev accuracy of a teacher or student checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint (default <out>/student_final.ckpt.json)");
  eval_cmd->add_flag("--temporal", temporal, "Also score the temporal simulator's logits");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    const PipelineConfig cfg = resolve(o);
    if (teacher_cmd->parsed()) {
      const TeacherResult r = cmd_train_teacher(cfg);
      std::cout << "teacher " << r.checkpoint;
      if (!r.epochs.empty()) std::cout << " dev_accuracy " << fmt(r.epochs.back().dev_accuracy);
      std::cout << '\n';
    } else if (distill_cmd->parsed()) {
      const DistillResult r = cmd_distill(cfg, teacher_path.value_or(output_path(cfg, "teacher.ckpt.json")), init_path);
      std::cout << "student " << r.checkpoint << " kd_loss " << fmt(r.reports.front().total) << " -> "
                << fmt(r.reports.back().total) << " dev_accuracy " << fmt(r.dev_accuracy) << '\n';
    } else if (finetune_cmd->parsed()) {
      std::optional<std::string> src = student_path;
      if (!src && !allow_skip_kd) src = output_path(cfg, "student_kd.ckpt.json");
      const FinetuneResult r = cmd_finetune(cfg, src, allow_skip_kd);
      std::cout << "student " << r.checkpoint << " dev_accuracy " << fmt(r.initial_accuracy) << " -> "
                << fmt(r.epochs.empty() ? r.initial_accuracy : r.epochs.back().dev_accuracy) << '\n';
    } else if (simulate_cmd->parsed()) {
      const SimulateResult r = cmd_simulate(cfg, student_path.value_or(output_path(cfg, "student_final.ckpt.json")));
      double worst = 0.0;
      for (double d : r.layer_deviation) worst = std::max(worst, d);
      std::cout << "trace " << output_path(cfg, "trace.csv") << " worst_final_deviation " << fmt(worst) << '\n';
    } else if (energy_cmd->parsed()) {
      const EnergyComparison c = cmd_energy(cfg, quantized_path, fp_path);
      std::cout << "energy " << output_path(cfg, "energy.json") << " norm_ops_ratio "
                << (c.norm_ops_ratio ? fmt(*c.norm_ops_ratio) : "undefined") << " energy_ratio "
                << (c.energy_ratio ? fmt(*c.energy_ratio) : "undefined") << '\n';
    } else if (eval_cmd->parsed()) {
      const EvalResult r = cmd_eval(cfg, ckpt_path.value_or(output_path(cfg, "student_final.ckpt.json")), temporal);
      std::cout << r.model_kind << " dev_accuracy " << fmt(r.dev_accuracy);
      if (r.temporal_accuracy) std::cout << " temporal_dev_accuracy " << fmt(*r.temporal_accuracy);
      std::cout << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DomainError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ConvergenceError& e) {
    std::cerr << "convergence error: " << e.what() << '\n';
    return kConvergence;
  } catch (const SpectralRadiusError& e) {
    std::cerr << "convergence error: " << e.what() << '\n';
    return kConvergence;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
