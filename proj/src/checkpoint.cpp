#include "qspike/checkpoint.hpp"

#include <fstream>

namespace qspike {

using json = nlohmann::ordered_json;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Teacher: return "teacher";
    case Stage::Init: return "init";
    case Stage::Distilled: return "kd";
    case Stage::Finetuned: return "finetune";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  if (s == "teacher") return Stage::Teacher;
  if (s == "init") return Stage::Init;
  if (s == "kd") return Stage::Distilled;
  if (s == "finetune") return Stage::Finetuned;
  throw ConfigError("unknown checkpoint stage '" + s + "'");
}

std::string to_hex(const std::vector<std::uint8_t>& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s += digits[b >> 4];
    s += digits[b & 15];
  }
  return s;
}

std::vector<std::uint8_t> from_hex(const std::string& s) {
  if (s.size() % 2) throw ConfigError("hex string of odd length");
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw ConfigError("invalid hex digit");
  };
  std::vector<std::uint8_t> out(s.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::uint8_t>(nib(s[2 * i]) << 4 | nib(s[2 * i + 1]));
  return out;
}

namespace {

json matrix_json(const Matrix& m) { return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}}; }

Matrix matrix_from(const json& j, const std::string& name) {
  try {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != rows * cols) throw ConfigError("tensor '" + name + "' has wrong element count");
    return Matrix(rows, cols, std::move(data));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("tensor '" + name + "': " + e.what());
  }
}

json header(const std::string& kind, Stage stage) {
  return json{{"format", "qspike-checkpoint"}, {"version", kCheckpointVersion}, {"model_kind", kind},
              {"stage", to_string(stage)}};
}

void check_header(const json& j, const std::string& kind) {
  if (!j.is_object() || j.value("format", "") != "qspike-checkpoint") throw ConfigError("not a checkpoint file");
  if (j.value("version", -1) != kCheckpointVersion) throw ConfigError("unsupported checkpoint version");
  if (j.value("model_kind", "") != kind) {
    throw ConfigError("checkpoint holds a " + j.value("model_kind", std::string("?")) + ", expected a " + kind);
  }
}

template <typename Slots>
json tensors_json(const Slots& slots) {
  json t = json::object();
  for (const auto& p : slots) t[p.name] = matrix_json(*p.value);
  return t;
}

template <typename Slots>
void load_tensors(const json& t, Slots& slots) {
  for (auto& p : slots) {
    if (!t.contains(p.name)) throw ConfigError("checkpoint lacks tensor '" + p.name + "'");
    Matrix m = matrix_from(t.at(p.name), p.name);
    if (!m.same_shape(*p.value)) throw ConfigError("tensor '" + p.name + "' has shape " + m.shape_str());
    *p.value = std::move(m);
  }
  if (t.size() != slots.size()) throw ConfigError("checkpoint has unexpected tensors");
}

template <typename T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint field '") + key + "': " + e.what());
  }
}

}  // namespace

json student_config_json(const StudentConfig& c) {
  return json{{"vocab_size", c.vocab_size},
              {"max_len", c.max_len},
              {"num_layers", c.num_layers},
              {"num_classes", c.num_classes},
              {"hidden_dim", c.layer.hidden_dim},
              {"intermediate_dim", c.layer.intermediate_dim},
              {"num_heads", c.layer.num_heads},
              {"quant", to_string(c.layer.quant_mode)},
              {"gamma", c.lif.gamma},
              {"v_th", c.lif.v_th},
              {"feedback_scale", c.feedback_scale},
              {"binary_scale", c.binary_scale},
              {"epsilon", c.epsilon}};
}

StudentConfig student_config_from_json(const json& j) {
  StudentConfig c;
  c.vocab_size = get<std::size_t>(j, "vocab_size");
  c.max_len = get<std::size_t>(j, "max_len");
  c.num_layers = get<std::size_t>(j, "num_layers");
  c.num_classes = get<std::size_t>(j, "num_classes");
  c.layer.hidden_dim = get<std::size_t>(j, "hidden_dim");
  c.layer.intermediate_dim = get<std::size_t>(j, "intermediate_dim");
  c.layer.num_heads = get<std::size_t>(j, "num_heads");
  c.layer.quant_mode = parse_quant_mode(get<std::string>(j, "quant"));
  c.lif.gamma = get<double>(j, "gamma");
  c.lif.v_th = get<double>(j, "v_th");
  c.feedback_scale = get<double>(j, "feedback_scale");
  c.binary_scale = get<bool>(j, "binary_scale");
  c.epsilon = get<double>(j, "epsilon");
  c.validate();
  return c;
}

json teacher_config_json(const TeacherConfig& c) {
  return json{{"vocab_size", c.vocab_size},   {"max_len", c.max_len},
              {"hidden_dim", c.hidden_dim},   {"intermediate_dim", c.intermediate_dim},
              {"num_heads", c.num_heads},     {"num_layers", c.num_layers},
              {"num_classes", c.num_classes}};
}

TeacherConfig teacher_config_from_json(const json& j) {
  TeacherConfig c;
  c.vocab_size = get<std::size_t>(j, "vocab_size");
  c.max_len = get<std::size_t>(j, "max_len");
  c.hidden_dim = get<std::size_t>(j, "hidden_dim");
  c.intermediate_dim = get<std::size_t>(j, "intermediate_dim");
  c.num_heads = get<std::size_t>(j, "num_heads");
  c.num_layers = get<std::size_t>(j, "num_layers");
  c.num_classes = get<std::size_t>(j, "num_classes");
  c.validate();
  return c;
}

json to_json(const StudentCheckpoint& c) {
  json j = header("student", c.stage);
  j["config"] = student_config_json(c.stack.cfg);
  j["vocab"] = c.vocab;
  j["label_names"] = c.label_names;
  auto& stack = const_cast<EncoderStack&>(c.stack);
  j["tensors"] = tensors_json(stack.parameters());
  json q = json::object();
  for (const auto& p : stack.parameters()) {
    if (!p.owner || p.owner->mode == QuantMode::FullPrecision) continue;
    q[p.name] = json{{"alpha", p.owner->alpha()},
                     {"beta", p.owner->beta()},
                     {"codes", to_hex(pack_codes(p.owner->codes()))}};
  }
  j["quantized"] = q;
  return j;
}

StudentCheckpoint student_from_json(const json& j) {
  check_header(j, "student");
  StudentCheckpoint c;
  c.stage = parse_stage(get<std::string>(j, "stage"));
  const StudentConfig cfg = student_config_from_json(j.at("config"));
  Rng rng(0);
  c.stack = EncoderStack::random(cfg, rng);
  c.vocab = get<std::vector<std::string>>(j, "vocab");
  c.label_names = get<std::vector<std::string>>(j, "label_names");
  if (c.vocab.size() != cfg.vocab_size) throw ConfigError("checkpoint vocabulary does not match its config");
  auto slots = c.stack.parameters();
  load_tensors(j.at("tensors"), slots);
  const json& q = j.at("quantized");
  for (auto& p : slots) {
    if (!p.owner) continue;
    if (p.owner->mode == QuantMode::FullPrecision) {
      p.owner->refresh();
      continue;
    }
    if (!q.contains(p.name)) throw ConfigError("checkpoint lacks codes for '" + p.name + "'");
    const json& e = q.at(p.name);
    IntMatrix codes = unpack_codes(from_hex(get<std::string>(e, "codes")), p.owner->out_dim(), p.owner->in_dim());
    p.owner->set_frozen(std::move(codes), get<double>(e, "alpha"), get<double>(e, "beta"));
  }
  return c;
}

json to_json(const TeacherCheckpoint& c) {
  json j = header("teacher", Stage::Teacher);
  j["config"] = teacher_config_json(c.teacher.cfg);
  j["vocab"] = c.vocab;
  j["label_names"] = c.label_names;
  j["tensors"] = tensors_json(const_cast<TeacherModel&>(c.teacher).parameters());
  return j;
}

TeacherCheckpoint teacher_from_json(const json& j) {
  check_header(j, "teacher");
  TeacherCheckpoint c;
  c.teacher = TeacherModel::zeros(teacher_config_from_json(j.at("config")));
  c.vocab = get<std::vector<std::string>>(j, "vocab");
  c.label_names = get<std::vector<std::string>>(j, "label_names");
  auto slots = c.teacher.parameters();
  load_tensors(j.at("tensors"), slots);
  for (auto& p : slots)
    if (p.owner) p.owner->refresh();
  return c;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump() << '\n';
  if (!out) throw IoError("failed writing " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("corrupt file " + path + ": " + e.what());
  }
}

void save_student(const std::string& path, const StudentCheckpoint& c) { write_json_file(path, to_json(c)); }
StudentCheckpoint load_student(const std::string& path) { return student_from_json(read_json_file(path)); }
void save_teacher(const std::string& path, const TeacherCheckpoint& c) { write_json_file(path, to_json(c)); }
TeacherCheckpoint load_teacher(const std::string& path) { return teacher_from_json(read_json_file(path)); }

}  // namespace qspike
