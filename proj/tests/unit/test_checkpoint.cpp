#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "qspike/checkpoint.hpp"
#include "qspike/equilibrium.hpp"
#include "qspike/errors.hpp"

using namespace qspike;

namespace {

std::string temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "qspike_checkpoint_test";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

StudentCheckpoint make_student(QuantMode mode, double feedback) {
  StudentConfig c;
  c.vocab_size = 6;
  c.max_len = 8;
  c.layer.hidden_dim = 8;
  c.layer.intermediate_dim = 16;
  c.layer.quant_mode = mode;
  c.feedback_scale = feedback;
  Rng rng(3);
  StudentCheckpoint ck;
  ck.stage = Stage::Distilled;
  ck.stack = EncoderStack::random(c, rng);
  ck.vocab = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "b"};
  ck.label_names = {"0", "1"};
  return ck;
}

}  // namespace

TEST(Checkpoint, StudentRoundTripInEveryMode) {
  for (QuantMode mode : {QuantMode::FullPrecision, QuantMode::Binary1Bit, QuantMode::Ternary158Bit}) {
    const StudentCheckpoint ck = make_student(mode, 0.5);
    const std::string path = temp_file("student.json");
    save_student(path, ck);
    StudentCheckpoint back = load_student(path);
    EXPECT_EQ(back.stage, Stage::Distilled);
    EXPECT_EQ(back.vocab, ck.vocab);
    EXPECT_EQ(back.label_names, ck.label_names);
    auto a = const_cast<EncoderStack&>(ck.stack).parameters();
    auto b = back.stack.parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].name, b[i].name);
      EXPECT_EQ(*a[i].value, *b[i].value) << a[i].name;
      EXPECT_EQ(*a[i].forward_value, *b[i].forward_value) << a[i].name;
    }
    const TokenIds toks{2, 4, 5, 3};
    EXPECT_EQ(solve_fixed_point(ck.stack, toks, SolverConfig{}).asr_star,
              solve_fixed_point(back.stack, toks, SolverConfig{}).asr_star);
    // Saving the loaded copy reproduces the file byte for byte.
    const std::string again = temp_file("student_again.json");
    save_student(again, back);
    std::ifstream f1(path), f2(again);
    EXPECT_EQ(std::string(std::istreambuf_iterator<char>(f1), {}), std::string(std::istreambuf_iterator<char>(f2), {}));
  }
}

TEST(Checkpoint, TeacherRoundTrip) {
  TeacherConfig c;
  c.vocab_size = 6;
  c.hidden_dim = 8;
  c.intermediate_dim = 16;
  Rng rng(4);
  TeacherCheckpoint ck{TeacherModel::random(c, rng), {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "b"}, {"x", "y"}};
  const std::string path = temp_file("teacher.json");
  save_teacher(path, ck);
  const TeacherCheckpoint back = load_teacher(path);
  EXPECT_EQ(back.teacher.forward(TokenIds{2, 4, 3}).logits, ck.teacher.forward(TokenIds{2, 4, 3}).logits);
  EXPECT_THROW(load_student(path), ConfigError);
}

TEST(Checkpoint, StageTags) {
  for (Stage s : {Stage::Teacher, Stage::Init, Stage::Distilled, Stage::Finetuned}) EXPECT_EQ(parse_stage(to_string(s)), s);
  EXPECT_EQ(to_string(Stage::Distilled), "kd");
  EXPECT_THROW(parse_stage("pretrained"), ConfigError);
}

TEST(Checkpoint, Hex) {
  const std::vector<std::uint8_t> bytes{0x00, 0x7f, 0xa5, 0xff};
  EXPECT_EQ(to_hex(bytes), "007fa5ff");
  EXPECT_EQ(from_hex("007fa5ff"), bytes);
  EXPECT_THROW(from_hex("abc"), ConfigError);
  EXPECT_THROW(from_hex("zz"), ConfigError);
}

TEST(Checkpoint, Errors) {
  EXPECT_THROW(load_student("/nonexistent/ckpt.json"), IoError);
  const std::string junk = temp_file("junk.json");
  std::ofstream(junk) << "{ not json";
  EXPECT_THROW(load_student(junk), IoError);
  const std::string other = temp_file("other.json");
  std::ofstream(other) << R"({"format": "something-else"})";
  EXPECT_THROW(load_student(other), ConfigError);
}
