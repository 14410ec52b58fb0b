#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "seekr/model.hpp"

namespace seekr {

enum class TaskKind { copy, reverse, sort, modadd, parity, kvlookup };

inline constexpr std::array<TaskKind, 6> kAllTaskKinds = {TaskKind::copy,   TaskKind::reverse, TaskKind::sort,
                                                           TaskKind::modadd, TaskKind::parity, TaskKind::kvlookup};

std::string_view task_name(TaskKind kind);
// Throws ConfigError for unknown names.
TaskKind parse_task_kind(std::string_view name);

// Fixed token inventory. Ids follow the listing order: digits, letters, one
// tag per task kind, separator, end-of-answer, pad, then the '+' operator
// used by modadd payloads.
namespace vocab {
inline constexpr TokenId kFirstDigit = 0;
inline constexpr TokenId kFirstLetter = 10;
inline constexpr TokenId kFirstTag = 36;
inline constexpr TokenId kSeparator = 42;
inline constexpr TokenId kEndOfAnswer = 43;
inline constexpr TokenId kPad = 44;
inline constexpr TokenId kPlus = 45;
inline constexpr std::size_t kSize = 46;

TokenId tag(TaskKind kind);
std::optional<TokenId> char_token(char c);
// Printable form of a token ("7", "q", "<copy>", "<sep>", ...).
std::string token_text(TokenId id);
std::vector<std::string> manifest();
void write_manifest(const std::filesystem::path& path);
}  // namespace vocab

struct Sample {
  TaskKind kind = TaskKind::copy;
  std::string payload;      // instruction text without tag/separator
  std::string answer_text;  // answer text without end-of-answer
  Tokens instruction;       // tag, payload tokens, separator
  Tokens answer;            // answer tokens, end-of-answer

  static Sample make(TaskKind kind, std::string payload, std::string answer_text);

  // x ⊕ y.
  Tokens sequence() const;
  std::size_t length() const noexcept { return instruction.size() + answer.size(); }
  // First position of y within x ⊕ y.
  std::size_t answer_begin() const noexcept { return instruction.size(); }
  // Positions whose next-token prediction is an answer token.
  std::size_t first_prediction_row() const noexcept { return instruction.size() - 1; }

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct TaskDataset {
  TaskKind kind = TaskKind::copy;
  std::uint64_t seed = 0;
  std::vector<Sample> train;
  std::vector<Sample> test;

  friend bool operator==(const TaskDataset&, const TaskDataset&) = default;
};

struct GeneratorOptions {
  std::size_t min_payload = 4;
  std::size_t max_payload = 8;
};

// Ground-truth output for a payload. Throws InputError on malformed payloads.
std::string solve_task(TaskKind kind, std::string_view payload);

TaskDataset generate_task(TaskKind kind, std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                          const GeneratorOptions& options = {});
TaskDataset generate_task(std::string_view kind, std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                          const GeneratorOptions& options = {});

// JSONL: one {"task", "instruction", "answer"} object per line.
void write_samples_jsonl(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::vector<Sample> read_samples_jsonl(const std::filesystem::path& path);

// Writes <dir>/<task>_train.jsonl, <task>_test.jsonl, <task>_meta.json and vocab.txt.
void save_jsonl(const TaskDataset& dataset, const std::filesystem::path& dir);
TaskDataset load_jsonl(const std::filesystem::path& dir, TaskKind kind);

}  // namespace seekr
