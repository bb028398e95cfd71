#include "qspike/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace qspike {

using json = nlohmann::ordered_json;

namespace {

// Typed access to one config object that remembers which keys were read,
// so leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!j_.at(key).is_number_unsigned()) throw ConfigError(where(key) + " must be a nonnegative integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!j_.at(key).is_number()) throw ConfigError(where(key) + " must be a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!j_.at(key).is_boolean()) throw ConfigError(where(key) + " must be a boolean");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!j_.at(key).is_string()) throw ConfigError(where(key) + " must be a string");
      }
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  template <typename T>
  void get_optional(const std::string& key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = std::move(v);
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where(k) + "'");
  }

 private:
  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string read_quant(Section& s, const std::string& key, QuantMode def) {
  std::string q = to_string(def);
  s.get(key, q);
  return q;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

json epochs_json(const std::vector<EpochMetrics>& e) {
  json a = json::array();
  for (const auto& m : e) a.push_back({{"epoch", m.epoch}, {"train_loss", m.train_loss}, {"dev_accuracy", m.dev_accuracy}});
  return a;
}

void check_vocab(const std::vector<std::string>& ckpt_vocab, const Tokenizer& tok) {
  if (ckpt_vocab != tok.vocab()) throw ConfigError("checkpoint vocabulary does not match the configured dataset");
}

}  // namespace

void PipelineConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (!data.train_path && data.train_size < 2) throw ConfigError("data.train_size must be at least 2");
  if (!data.dev_path && data.dev_size < 1) throw ConfigError("data.dev_size must be at least 1");
  if (data.train_path.has_value() != data.dev_path.has_value()) {
    throw ConfigError("data.train_path and data.dev_path must be given together");
  }
  if (data.max_len < 2) throw ConfigError("data.max_len must be at least 2");
  if (teacher.hidden_dim == 0 || teacher.num_layers == 0 || teacher.num_heads == 0 || teacher.intermediate_dim == 0)
    throw ConfigError("teacher dimensions must be positive");
  if (teacher.hidden_dim % teacher.num_heads) throw ConfigError("teacher.hidden_dim must be divisible by num_heads");
  if (student.hidden_dim == 0 || student.num_layers == 0 || student.num_heads == 0 || student.intermediate_dim == 0)
    throw ConfigError("student dimensions must be positive");
  if (student.hidden_dim % student.num_heads) throw ConfigError("student.hidden_dim must be divisible by num_heads");
  try {
    student.lif.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  if (student.feedback_scale < 0.0) throw ConfigError("student.feedback_scale must be nonnegative");
  if (!(student.epsilon > 0.0)) throw ConfigError("student.epsilon must be positive");
  if (!(teacher.lr >= 0.0) || !(training.student_lr >= 0.0)) throw ConfigError("learning rates must be nonnegative");
  FitConfig f;
  f.batch_size = training.batch_size;
  f.adam = AdamConfig{training.student_lr, training.beta1, training.beta2, training.adam_eps};
  f.validate();
  solver.validate();
  vjp.validate();
  if (kd.layer_map) {
    if (kd.layer_map->size() != student.num_layers) throw ConfigError("kd.layer_map needs one entry per student block");
    for (std::size_t i = 0; i < kd.layer_map->size(); ++i) {
      const std::size_t t = (*kd.layer_map)[i];
      if (t < 1 || t > teacher.num_layers) throw ConfigError("kd.layer_map entries must lie in 1..teacher.num_layers");
      if (i > 0 && t < (*kd.layer_map)[i - 1]) throw ConfigError("kd.layer_map must be nondecreasing");
    }
  }
  if (kd.loss_weights) {
    if (kd.loss_weights->size() != student.num_layers) throw ConfigError("kd.loss_weights needs one entry per student block");
    for (double w : *kd.loss_weights)
      if (!(w >= 0.0)) throw ConfigError("kd.loss_weights must be nonnegative");
  }
  if (kd.eval_examples == 0) throw ConfigError("kd.eval_examples must be positive");
  if (simulate.timesteps == 0) throw ConfigError("simulate.timesteps must be at least 1");
  if (simulate.examples == 0 || energy.examples == 0) throw ConfigError("example counts must be positive");
  if (!(simulate.trace_tol > 0.0)) throw ConfigError("simulate.trace_tol must be positive");
  energy.profile.validate();
}

PipelineConfig parse_config(const json& j) {
  PipelineConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);

  Section d = root.sub("data");
  d.get_optional("train_path", c.data.train_path);
  d.get_optional("dev_path", c.data.dev_path);
  d.get("train_size", c.data.train_size);
  d.get("dev_size", c.data.dev_size);
  d.get("seed", c.data.data_seed);
  d.get("max_len", c.data.max_len);
  std::string kind = to_string(c.data.synth.kind);
  d.get("task", kind);
  c.data.synth.kind = parse_synth_kind(kind);
  d.get("filler_words", c.data.synth.filler_words);
  d.get("keywords", c.data.synth.keywords);
  d.get("min_words", c.data.synth.min_words);
  d.get("max_words", c.data.synth.max_words);
  d.finish();

  Section t = root.sub("teacher");
  t.get("hidden_dim", c.teacher.hidden_dim);
  t.get("intermediate_dim", c.teacher.intermediate_dim);
  t.get("num_heads", c.teacher.num_heads);
  t.get("num_layers", c.teacher.num_layers);
  t.get("epochs", c.teacher.epochs);
  t.get("lr", c.teacher.lr);
  t.finish();

  Section s = root.sub("student");
  s.get("hidden_dim", c.student.hidden_dim);
  s.get("intermediate_dim", c.student.intermediate_dim);
  s.get("num_heads", c.student.num_heads);
  s.get("num_layers", c.student.num_layers);
  c.student.quant = parse_quant_mode(read_quant(s, "quant", c.student.quant));
  s.get("gamma", c.student.lif.gamma);
  s.get("v_th", c.student.lif.v_th);
  s.get("feedback_scale", c.student.feedback_scale);
  s.get("binary_scale", c.student.binary_scale);
  s.get("epsilon", c.student.epsilon);
  s.finish();

  Section tr = root.sub("training");
  tr.get("batch_size", c.training.batch_size);
  tr.get("student_lr", c.training.student_lr);
  tr.get("kd_epochs", c.training.kd_epochs);
  tr.get("finetune_epochs", c.training.finetune_epochs);
  tr.get("beta1", c.training.beta1);
  tr.get("beta2", c.training.beta2);
  tr.get("adam_eps", c.training.adam_eps);
  tr.get("parallel", c.training.parallel);
  tr.finish();

  Section so = root.sub("solver");
  so.get("max_iters", c.solver.max_iters);
  so.get("tol", c.solver.tol);
  so.get("damping", c.solver.damping);
  so.finish();

  Section v = root.sub("vjp");
  v.get("max_terms", c.vjp.max_terms);
  v.get("tol", c.vjp.tol);
  v.finish();

  Section k = root.sub("kd");
  k.get_optional("layer_map", c.kd.layer_map);
  k.get_optional("loss_weights", c.kd.loss_weights);
  k.get("eval_examples", c.kd.eval_examples);
  k.finish();

  Section sim = root.sub("simulate");
  sim.get("timesteps", c.simulate.timesteps);
  sim.get("examples", c.simulate.examples);
  sim.get("trace_tol", c.simulate.trace_tol);
  sim.get("burn_in", c.simulate.burn_in);
  sim.finish();

  Section e = root.sub("energy");
  e.get("float_acc_pj", c.energy.profile.float_acc_pj);
  e.get("int_acc_pj", c.energy.profile.int_acc_pj);
  e.get("examples", c.energy.examples);
  e.finish();

  root.finish();
  c.validate();
  return c;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j);
}

json config_json(const PipelineConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  json d;
  d["train_path"] = c.data.train_path ? json(*c.data.train_path) : json();
  d["dev_path"] = c.data.dev_path ? json(*c.data.dev_path) : json();
  d["train_size"] = c.data.train_size;
  d["dev_size"] = c.data.dev_size;
  d["seed"] = c.data.data_seed;
  d["max_len"] = c.data.max_len;
  d["task"] = to_string(c.data.synth.kind);
  d["filler_words"] = c.data.synth.filler_words;
  d["keywords"] = c.data.synth.keywords;
  d["min_words"] = c.data.synth.min_words;
  d["max_words"] = c.data.synth.max_words;
  j["data"] = d;
  j["teacher"] = {{"hidden_dim", c.teacher.hidden_dim}, {"intermediate_dim", c.teacher.intermediate_dim},
                  {"num_heads", c.teacher.num_heads},   {"num_layers", c.teacher.num_layers},
                  {"epochs", c.teacher.epochs},         {"lr", c.teacher.lr}};
  j["student"] = {{"hidden_dim", c.student.hidden_dim},
                  {"intermediate_dim", c.student.intermediate_dim},
                  {"num_heads", c.student.num_heads},
                  {"num_layers", c.student.num_layers},
                  {"quant", to_string(c.student.quant)},
                  {"gamma", c.student.lif.gamma},
                  {"v_th", c.student.lif.v_th},
                  {"feedback_scale", c.student.feedback_scale},
                  {"binary_scale", c.student.binary_scale},
                  {"epsilon", c.student.epsilon}};
  j["training"] = {{"batch_size", c.training.batch_size}, {"student_lr", c.training.student_lr},
                   {"kd_epochs", c.training.kd_epochs},   {"finetune_epochs", c.training.finetune_epochs},
                   {"beta1", c.training.beta1},           {"beta2", c.training.beta2},
                   {"adam_eps", c.training.adam_eps},     {"parallel", c.training.parallel}};
  j["solver"] = {{"max_iters", c.solver.max_iters}, {"tol", c.solver.tol}, {"damping", c.solver.damping}};
  j["vjp"] = {{"max_terms", c.vjp.max_terms}, {"tol", c.vjp.tol}};
  j["kd"] = {{"layer_map", c.kd.layer_map ? json(*c.kd.layer_map) : json()},
             {"loss_weights", c.kd.loss_weights ? json(*c.kd.loss_weights) : json()},
             {"eval_examples", c.kd.eval_examples}};
  j["simulate"] = {{"timesteps", c.simulate.timesteps}, {"examples", c.simulate.examples},
                   {"trace_tol", c.simulate.trace_tol},  {"burn_in", c.simulate.burn_in}};
  j["energy"] = {{"float_acc_pj", c.energy.profile.float_acc_pj},
                 {"int_acc_pj", c.energy.profile.int_acc_pj},
                 {"examples", c.energy.examples}};
  return j;
}

std::string output_path(const PipelineConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.output_dir) / name).string();
}

TaskData load_task(const PipelineConfig& cfg) {
  TaskData t;
  if (cfg.data.train_path) {
    t.train_corpus = load_tsv(*cfg.data.train_path);
    t.dev_corpus = load_tsv(*cfg.data.dev_path);
    t.dev_corpus.split = "dev";
    if (t.train_corpus.examples.empty()) throw ConfigError("training split is empty");
    if (t.train_corpus.pair != t.dev_corpus.pair) throw ConfigError("train and dev splits differ in pair mode");
    align_labels(t.dev_corpus, t.train_corpus);
  } else {
    t.train_corpus = synth_task(cfg.data.synth, cfg.data.train_size, cfg.data.data_seed);
    t.dev_corpus = synth_task(cfg.data.synth, cfg.data.dev_size, cfg.data.data_seed + 1);
    t.dev_corpus.split = "dev";
  }
  if (t.train_corpus.label_names.size() < 2) throw ConfigError("training split needs at least two labels");
  t.tokenizer = Tokenizer::build(t.train_corpus, cfg.data.max_len);
  t.train = encode_corpus(t.tokenizer, t.train_corpus);
  t.dev = encode_corpus(t.tokenizer, t.dev_corpus);
  return t;
}

StudentConfig student_config(const PipelineConfig& cfg, std::size_t vocab, std::size_t classes) {
  StudentConfig s;
  s.vocab_size = vocab;
  s.max_len = cfg.data.max_len;
  s.num_layers = cfg.student.num_layers;
  s.num_classes = classes;
  s.layer.hidden_dim = cfg.student.hidden_dim;
  s.layer.intermediate_dim = cfg.student.intermediate_dim;
  s.layer.num_heads = cfg.student.num_heads;
  s.layer.quant_mode = cfg.student.quant;
  s.lif = cfg.student.lif;
  s.feedback_scale = cfg.student.feedback_scale;
  s.binary_scale = cfg.student.binary_scale;
  s.epsilon = cfg.student.epsilon;
  return s;
}

TeacherConfig teacher_config(const PipelineConfig& cfg, std::size_t vocab, std::size_t classes) {
  TeacherConfig t;
  t.vocab_size = vocab;
  t.max_len = cfg.data.max_len;
  t.hidden_dim = cfg.teacher.hidden_dim;
  t.intermediate_dim = cfg.teacher.intermediate_dim;
  t.num_heads = cfg.teacher.num_heads;
  t.num_layers = cfg.teacher.num_layers;
  t.num_classes = classes;
  return t;
}

ImplicitConfig implicit_config(const PipelineConfig& cfg) {
  ImplicitConfig ic;
  ic.solver = cfg.solver;
  ic.vjp = cfg.vjp;
  ic.parallel = cfg.training.parallel;
  return ic;
}

FitConfig student_fit(const PipelineConfig& cfg, std::size_t epochs) {
  FitConfig f;
  f.epochs = epochs;
  f.batch_size = cfg.training.batch_size;
  f.adam = AdamConfig{cfg.training.student_lr, cfg.training.beta1, cfg.training.beta2, cfg.training.adam_eps};
  f.seed = cfg.seed;
  f.parallel = cfg.training.parallel;
  return f;
}

KdConfig kd_config(const PipelineConfig& cfg, std::size_t student_blocks, std::size_t teacher_blocks,
                   std::size_t student_dim, std::size_t teacher_dim) {
  KdConfig k = KdConfig::uniform(student_blocks, teacher_blocks, student_dim, teacher_dim);
  for (std::size_t i = 0; i < k.pairs.size(); ++i) {
    if (cfg.kd.layer_map) k.pairs[i].teacher_block = (*cfg.kd.layer_map)[i] - 1;
    if (cfg.kd.loss_weights) k.pairs[i].weight = (*cfg.kd.loss_weights)[i];
  }
  k.validate(student_blocks, teacher_blocks, student_dim, teacher_dim);
  return k;
}

StudentCheckpoint initial_student(const PipelineConfig& cfg, const TaskData& data) {
  StudentCheckpoint c;
  c.stage = Stage::Init;
  Rng rng(cfg.seed);
  Rng init = rng.fork(2);
  c.stack = EncoderStack::random(student_config(cfg, data.tokenizer.size(), data.train_corpus.label_names.size()), init);
  c.vocab = data.tokenizer.vocab();
  c.label_names = data.train_corpus.label_names;
  return c;
}

TeacherResult cmd_train_teacher(const PipelineConfig& cfg) {
  const TaskData data = load_task(cfg);
  ensure_dir(cfg.output_dir);
  Rng rng(cfg.seed);
  Rng init = rng.fork(1);
  TeacherCheckpoint ck;
  ck.teacher = TeacherModel::random(teacher_config(cfg, data.tokenizer.size(), data.train_corpus.label_names.size()), init);
  ck.vocab = data.tokenizer.vocab();
  ck.label_names = data.train_corpus.label_names;

  FitConfig f;
  f.epochs = cfg.teacher.epochs;
  f.batch_size = cfg.training.batch_size;
  f.adam = AdamConfig{cfg.teacher.lr, cfg.training.beta1, cfg.training.beta2, cfg.training.adam_eps};
  f.seed = cfg.seed;
  f.parallel = cfg.training.parallel;

  std::ofstream log = open_out(output_path(cfg, "teacher_train.jsonl"));
  TeacherResult res;
  res.epochs = train_teacher(ck.teacher, data.train, data.dev, f,
                             [&](std::size_t step, const GradientBundle& g) { log << training_log_line(step, g) << '\n'; });
  res.checkpoint = output_path(cfg, "teacher.ckpt.json");
  save_teacher(res.checkpoint, ck);
  write_json_file(output_path(cfg, "teacher_metrics.json"),
                  json{{"epochs", epochs_json(res.epochs)},
                       {"dev_accuracy", res.epochs.empty() ? teacher_accuracy(ck.teacher, data.dev)
                                                           : res.epochs.back().dev_accuracy}});
  return res;
}

DistillResult cmd_distill(const PipelineConfig& cfg, const std::string& teacher_ckpt,
                          const std::optional<std::string>& init_ckpt) {
  const TaskData data = load_task(cfg);
  const TeacherCheckpoint teacher = load_teacher(teacher_ckpt);
  check_vocab(teacher.vocab, data.tokenizer);
  StudentCheckpoint st = init_ckpt ? load_student(*init_ckpt) : initial_student(cfg, data);
  check_vocab(st.vocab, data.tokenizer);
  st.stack.set_quant_mode(cfg.student.quant);
  ensure_dir(cfg.output_dir);

  KdConfig kd = kd_config(cfg, st.stack.layers.size(), teacher.teacher.layers.size(), st.stack.hidden(),
                          teacher.teacher.cfg.hidden_dim);
  KdTrainConfig tc;
  tc.fit = student_fit(cfg, cfg.training.kd_epochs);
  tc.implicit = implicit_config(cfg);
  tc.eval_examples = cfg.kd.eval_examples;

  std::ofstream log = open_out(output_path(cfg, "distill_train.jsonl"));
  DistillResult res;
  res.reports = run_distillation(st.stack, teacher.teacher, data.train, kd, tc,
                                 [&](std::size_t step, const GradientBundle& g) { log << training_log_line(step, g) << '\n'; });
  st.stage = cfg.training.kd_epochs > 0 ? Stage::Distilled : Stage::Init;
  res.dev_accuracy = student_accuracy(st.stack, data.dev, cfg.solver, cfg.training.parallel);
  res.checkpoint = output_path(cfg, "student_kd.ckpt.json");
  save_student(res.checkpoint, st);
  {
    std::ofstream csv = open_out(output_path(cfg, "kd_report.csv"));
    write_kd_csv(res.reports, csv);
  }
  json proj = json::array();
  for (const auto& p : kd.pairs) proj.push_back({{"student_block", p.student_block + 1}, {"teacher_block", p.teacher_block + 1}, {"weight", p.weight}});
  write_json_file(output_path(cfg, "distill_metrics.json"),
                  json{{"quant", to_string(cfg.student.quant)},
                       {"pairs", proj},
                       {"initial_kd_loss", res.reports.front().total},
                       {"final_kd_loss", res.reports.back().total},
                       {"dev_accuracy", res.dev_accuracy}});
  return res;
}

FinetuneResult cmd_finetune(const PipelineConfig& cfg, const std::optional<std::string>& student_ckpt,
                            bool allow_skip_kd) {
  const TaskData data = load_task(cfg);
  if (!student_ckpt && !allow_skip_kd) throw ConfigError("finetune needs a distilled student checkpoint");
  StudentCheckpoint st;
  if (student_ckpt) {
    st = load_student(*student_ckpt);
    check_vocab(st.vocab, data.tokenizer);
  } else {
    st = initial_student(cfg, data);
    st.stack.set_quant_mode(cfg.student.quant);
  }
  if (st.stage == Stage::Init && !allow_skip_kd) {
    throw ConfigError("student checkpoint has not been distilled; pass --allow-skip-kd to fine-tune it anyway");
  }
  ensure_dir(cfg.output_dir);
  FinetuneResult res;
  res.initial_accuracy = student_accuracy(st.stack, data.dev, cfg.solver, cfg.training.parallel);
  std::ofstream log = open_out(output_path(cfg, "finetune_train.jsonl"));
  res.epochs = finetune_student(st.stack, data.train, data.dev, student_fit(cfg, cfg.training.finetune_epochs),
                                implicit_config(cfg),
                                [&](std::size_t step, const GradientBundle& g) { log << training_log_line(step, g) << '\n'; });
  st.stage = Stage::Finetuned;
  res.checkpoint = output_path(cfg, "student_final.ckpt.json");
  save_student(res.checkpoint, st);
  write_json_file(output_path(cfg, "finetune_metrics.json"),
                  json{{"quant", to_string(st.stack.quant_mode())},
                       {"skipped_kd", !student_ckpt || parse_stage(read_json_file(*student_ckpt).at("stage").get<std::string>()) == Stage::Init},
                       {"initial_dev_accuracy", res.initial_accuracy},
                       {"epochs", epochs_json(res.epochs)},
                       {"dev_accuracy", res.epochs.empty() ? res.initial_accuracy : res.epochs.back().dev_accuracy}});
  return res;
}

SimulateResult cmd_simulate(const PipelineConfig& cfg, const std::string& student_ckpt) {
  const TaskData data = load_task(cfg);
  const StudentCheckpoint st = load_student(student_ckpt);
  check_vocab(st.vocab, data.tokenizer);
  ensure_dir(cfg.output_dir);
  std::vector<TokenIds> batch;
  for (std::size_t i = 0; i < std::min(cfg.simulate.examples, data.dev.size()); ++i) batch.push_back(data.dev[i].tokens);

  SimulateResult res;
  res.trace = convergence_trace(st.stack, batch, cfg.simulate.timesteps, cfg.solver);
  res.temporal_logits = res.trace.temporal_logits;
  res.fixed_point_logits = res.trace.fixed_point_logits;
  {
    std::ofstream csv = open_out(output_path(cfg, "trace.csv"));
    write_trace_csv(res.trace, csv);
  }
  json layers = json::array();
  for (std::size_t l = 0; l < res.trace.layer_names.size(); ++l) {
    res.layer_deviation.push_back(res.trace.residual[l].back());
    res.steps_to_tol.push_back(res.trace.steps_to_tolerance(l, cfg.simulate.trace_tol));
    layers.push_back({{"name", res.trace.layer_names[l]},
                      {"fixed_point_mean_asr", res.trace.star_mean[l]},
                      {"final_mean_asr", res.trace.mean_asr[l].back()},
                      {"final_deviation", res.layer_deviation.back()},
                      {"steps_to_tolerance", res.steps_to_tol.back()},
                      {"nonincreasing_after_burn_in", nonincreasing_after(res.trace.residual[l], cfg.simulate.burn_in)}});
  }
  json logits = json::array();
  for (std::size_t i = 0; i < batch.size(); ++i)
    logits.push_back({{"temporal", res.temporal_logits[i].values()}, {"fixed_point", res.fixed_point_logits[i].values()}});
  write_json_file(output_path(cfg, "simulate_summary.json"),
                  json{{"quant", to_string(st.stack.quant_mode())},
                       {"timesteps", cfg.simulate.timesteps},
                       {"gamma", st.stack.cfg.lif.gamma},
                       {"sequences", batch.size()},
                       {"trace_tol", cfg.simulate.trace_tol},
                       {"burn_in", cfg.simulate.burn_in},
                       {"layers", layers},
                       {"logits", logits}});
  return res;
}

EnergyReport measure_energy(const EncoderStack& stack, const std::vector<Example>& eval, std::size_t timesteps,
                            const EnergyProfile& profile) {
  std::vector<InferenceResult> runs;
  SimulationOptions opts;
  opts.timesteps = timesteps;
  for (const auto& ex : eval) runs.push_back(student_forward_infer(stack, ex.tokens, opts));
  return energy_estimate(stack, runs, profile);
}

EnergyComparison cmd_energy(const PipelineConfig& cfg, const std::string& quant_ckpt, const std::string& fp_ckpt) {
  const TaskData data = load_task(cfg);
  const StudentCheckpoint q = load_student(quant_ckpt);
  const StudentCheckpoint fp = load_student(fp_ckpt);
  check_vocab(q.vocab, data.tokenizer);
  check_vocab(fp.vocab, data.tokenizer);
  StudentConfig a = q.stack.cfg, b = fp.stack.cfg;
  a.layer.quant_mode = b.layer.quant_mode = QuantMode::FullPrecision;
  if (student_config_json(a) != student_config_json(b)) throw ConfigError("energy: checkpoints differ in architecture");
  if (fp.stack.quant_mode() != QuantMode::FullPrecision) throw ConfigError("energy: reference checkpoint is not full precision");
  if (q.stack.quant_mode() == QuantMode::FullPrecision) throw ConfigError("energy: first checkpoint is not quantized");
  ensure_dir(cfg.output_dir);
  const std::vector<Example> eval(data.dev.begin(),
                                  data.dev.begin() + static_cast<std::ptrdiff_t>(std::min(cfg.energy.examples, data.dev.size())));
  const EnergyComparison c = compare_energy(measure_energy(q.stack, eval, cfg.simulate.timesteps, cfg.energy.profile),
                                            measure_energy(fp.stack, eval, cfg.simulate.timesteps, cfg.energy.profile));
  write_json_file(output_path(cfg, "energy.json"), to_json(c));
  return c;
}

EvalResult cmd_eval(const PipelineConfig& cfg, const std::string& ckpt, bool temporal) {
  const TaskData data = load_task(cfg);
  const json j = read_json_file(ckpt);
  EvalResult r;
  r.model_kind = j.value("model_kind", std::string());
  if (r.model_kind == "teacher") {
    const TeacherCheckpoint t = teacher_from_json(j);
    check_vocab(t.vocab, data.tokenizer);
    r.dev_accuracy = teacher_accuracy(t.teacher, data.dev);
  } else {
    const StudentCheckpoint s = student_from_json(j);
    check_vocab(s.vocab, data.tokenizer);
    r.dev_accuracy = student_accuracy(s.stack, data.dev, cfg.solver, cfg.training.parallel);
    if (temporal) {
      SimulationOptions opts;
      opts.timesteps = cfg.simulate.timesteps;
      std::size_t hit = 0;
      for (const auto& ex : data.dev) hit += argmax(student_forward_infer(s.stack, ex.tokens, opts).logits) == ex.label;
      r.temporal_accuracy = static_cast<double>(hit) / static_cast<double>(data.dev.size());
    }
  }
  ensure_dir(cfg.output_dir);
  json out{{"model_kind", r.model_kind}, {"dev_examples", data.dev.size()}, {"dev_accuracy", r.dev_accuracy}};
  out["temporal_dev_accuracy"] = r.temporal_accuracy ? json(*r.temporal_accuracy) : json();
  if (r.temporal_accuracy) out["timesteps"] = cfg.simulate.timesteps;
  write_json_file(output_path(cfg, "eval.json"), out);
  return r;
}

}  // namespace qspike
