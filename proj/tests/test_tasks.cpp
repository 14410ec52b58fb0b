#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "seekr/error.hpp"
#include "seekr/tasks.hpp"

using namespace seekr;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "seekr_test_tasks" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Solve, Examples) {
  EXPECT_EQ(solve_task(TaskKind::copy, "ab3"), "ab3");
  EXPECT_EQ(solve_task(TaskKind::reverse, "ab3"), "3ba");
  EXPECT_EQ(solve_task(TaskKind::sort, "cb3a"), "3abc");
  EXPECT_EQ(solve_task(TaskKind::modadd, "47+58"), "05");
  EXPECT_EQ(solve_task(TaskKind::modadd, "03+04"), "07");
  EXPECT_EQ(solve_task(TaskKind::parity, "1101"), "1");
  EXPECT_EQ(solve_task(TaskKind::parity, "0000"), "0");
  EXPECT_EQ(solve_task(TaskKind::kvlookup, "a1b2c3b"), "2");
}

TEST(Solve, MalformedPayloads) {
  EXPECT_THROW(solve_task(TaskKind::modadd, "4758"), InputError);
  EXPECT_THROW(solve_task(TaskKind::parity, "12a"), InputError);
  EXPECT_THROW(solve_task(TaskKind::kvlookup, "a1b2z"), InputError);
}

TEST(Vocab, LayoutAndRoundTrip) {
  EXPECT_EQ(vocab::char_token('0'), vocab::kFirstDigit);
  EXPECT_EQ(vocab::char_token('a'), vocab::kFirstLetter);
  EXPECT_EQ(vocab::char_token('+'), vocab::kPlus);
  EXPECT_FALSE(vocab::char_token('!').has_value());
  const auto m = vocab::manifest();
  EXPECT_EQ(m.size(), vocab::kSize);
  EXPECT_EQ(std::set<std::string>(m.begin(), m.end()).size(), m.size());
}

TEST(Sample, LayoutOfInstructionAndAnswer) {
  const Sample s = Sample::make(TaskKind::reverse, "ab", "ba");
  EXPECT_EQ(s.instruction, (Tokens{vocab::tag(TaskKind::reverse), 10, 11, vocab::kSeparator}));
  EXPECT_EQ(s.answer, (Tokens{11, 10, vocab::kEndOfAnswer}));
  EXPECT_EQ(s.length(), 7u);
  EXPECT_EQ(s.first_prediction_row(), 3u);
  EXPECT_EQ(s.sequence()[s.answer_begin()], 11u);
}

class GenerateAllKinds : public ::testing::TestWithParam<TaskKind> {};

TEST_P(GenerateAllKinds, DeterministicDisjointAndCorrect) {
  const TaskKind kind = GetParam();
  const auto a = generate_task(kind, 21, 300, 50);
  const auto b = generate_task(kind, 21, 300, 50);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.train.size(), 300u);
  EXPECT_EQ(a.test.size(), 50u);
  std::set<std::string> train;
  for (const auto& s : a.train) {
    train.insert(s.payload);
    EXPECT_EQ(s.answer_text, solve_task(kind, s.payload));
    EXPECT_EQ(s.instruction.front(), vocab::tag(kind));
  }
  for (const auto& s : a.test) EXPECT_EQ(train.count(s.payload), 0u) << s.payload;
  EXPECT_NE(generate_task(kind, 22, 300, 50), a);
}

INSTANTIATE_TEST_SUITE_P(Kinds, GenerateAllKinds,
                         ::testing::Values(TaskKind::copy, TaskKind::reverse, TaskKind::sort, TaskKind::modadd,
                                           TaskKind::parity, TaskKind::kvlookup));

TEST(Generate, ExhaustedPayloadSpaceIsConfigError) {
  GeneratorOptions tiny{1, 1};
  EXPECT_THROW(generate_task(TaskKind::parity, 1, 20, 5, tiny), ConfigError);
  EXPECT_THROW(generate_task("nope", 1, 10, 5), ConfigError);
}

TEST(Jsonl, RoundTrip) {
  const auto dir = temp_dir("rt");
  const auto ds = generate_task(TaskKind::kvlookup, 5, 40, 10);
  save_jsonl(ds, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "vocab.txt"));
  EXPECT_EQ(load_jsonl(dir, TaskKind::kvlookup), ds);
}

TEST(Jsonl, ErrorsCarryLineNumbers) {
  const auto dir = temp_dir("bad");
  const auto p = dir / "bad.jsonl";
  {
    std::ofstream os(p);
    os << R"({"task":"copy","instruction":"ab","answer":"ab"})" << '\n';
    os << R"({"task":"copy","instruction":"ab"})" << '\n';
  }
  try {
    read_samples_jsonl(p);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  {
    std::ofstream os(p);
    os << "{not json\n";
  }
  EXPECT_THROW(read_samples_jsonl(p), ParseError);
  EXPECT_THROW(read_samples_jsonl(dir / "missing.jsonl"), IoError);
}
