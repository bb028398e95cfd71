#pragma once

// Versioned JSON checkpoints shared by teacher and student. A checkpoint
// carries a model-kind tag, a training-stage tag, the model configuration,
// the vocabulary and label names, every parameter tensor, and for quantized
// projections the frozen codes (2 bits per weight, hex) and statistics.

#include <string>
#include <vector>

#include "json.hpp"
#include "qspike/data.hpp"
#include "qspike/model.hpp"

namespace qspike {

inline constexpr int kCheckpointVersion = 1;

enum class Stage { Teacher, Init, Distilled, Finetuned };
std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

struct StudentCheckpoint {
  Stage stage = Stage::Init;
  EncoderStack stack;
  std::vector<std::string> vocab;
  std::vector<std::string> label_names;
};

struct TeacherCheckpoint {
  TeacherModel teacher;
  std::vector<std::string> vocab;
  std::vector<std::string> label_names;
};

nlohmann::ordered_json student_config_json(const StudentConfig& c);
StudentConfig student_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json teacher_config_json(const TeacherConfig& c);
TeacherConfig teacher_config_from_json(const nlohmann::ordered_json& j);

nlohmann::ordered_json to_json(const StudentCheckpoint& c);
StudentCheckpoint student_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const TeacherCheckpoint& c);
TeacherCheckpoint teacher_from_json(const nlohmann::ordered_json& j);

/// Writes `j` followed by a newline; IoError on failure.
void write_json_file(const std::string& path, const nlohmann::ordered_json& j);
nlohmann::ordered_json read_json_file(const std::string& path);

void save_student(const std::string& path, const StudentCheckpoint& c);
StudentCheckpoint load_student(const std::string& path);
void save_teacher(const std::string& path, const TeacherCheckpoint& c);
TeacherCheckpoint load_teacher(const std::string& path);

std::string to_hex(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> from_hex(const std::string& s);

}  // namespace qspike
