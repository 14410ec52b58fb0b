#include "seekr/tasks.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include "seekr/error.hpp"
#include "seekr/rng.hpp"

namespace seekr {

namespace {

constexpr std::array<std::string_view, 6> kTaskNames = {"copy", "reverse", "sort", "modadd", "parity", "kvlookup"};
constexpr std::string_view kDigits = "0123456789";
constexpr std::string_view kSymbols = "0123456789abcdefghijklmnopqrstuvwxyz";

std::string random_string(Rng& rng, std::string_view alphabet, std::size_t len) {
  std::string s(len, ' ');
  for (auto& c : s) c = alphabet[rng.below(alphabet.size())];
  return s;
}

std::string two_digit(int v) {
  std::string s = std::to_string(v);
  return s.size() < 2 ? "0" + s : s;
}

std::string random_payload(TaskKind kind, Rng& rng, const GeneratorOptions& opt) {
  const auto len = static_cast<std::size_t>(rng.range(static_cast<int>(opt.min_payload), static_cast<int>(opt.max_payload)));
  switch (kind) {
    case TaskKind::copy:
    case TaskKind::reverse:
    case TaskKind::sort:
      return random_string(rng, kSymbols, len);
    case TaskKind::parity:
      return random_string(rng, kDigits, len);
    case TaskKind::modadd:
      return two_digit(rng.range(0, 99)) + "+" + two_digit(rng.range(0, 99));
    case TaskKind::kvlookup: {
      // n distinct letter keys with digit values, then one key as the query.
      const std::size_t n = std::max<std::size_t>(2, std::min<std::size_t>(3, (len - 1) / 2));
      auto keys = rng.sample_without_replacement(26, n);
      std::string s;
      for (auto k : keys) {
        s += static_cast<char>('a' + k);
        s += kDigits[rng.below(10)];
      }
      s += static_cast<char>('a' + keys[rng.below(n)]);
      return s;
    }
  }
  throw ConfigError("task", "unhandled task kind");
}

Tokens tokenize_text(std::string_view text) {
  Tokens out;
  out.reserve(text.size());
  for (char c : text) {
    auto t = vocab::char_token(c);
    if (!t) throw InputError(std::string("character '") + c + "' is not in the vocabulary");
    out.push_back(*t);
  }
  return out;
}

}  // namespace

std::string_view task_name(TaskKind kind) { return kTaskNames[static_cast<std::size_t>(kind)]; }

TaskKind parse_task_kind(std::string_view name) {
  for (std::size_t i = 0; i < kTaskNames.size(); ++i)
    if (kTaskNames[i] == name) return kAllTaskKinds[i];
  throw ConfigError("task", "unknown task kind '" + std::string(name) + "'");
}

namespace vocab {

TokenId tag(TaskKind kind) { return kFirstTag + static_cast<TokenId>(kind); }

std::optional<TokenId> char_token(char c) {
  if (c >= '0' && c <= '9') return kFirstDigit + static_cast<TokenId>(c - '0');
  if (c >= 'a' && c <= 'z') return kFirstLetter + static_cast<TokenId>(c - 'a');
  if (c == '+') return kPlus;
  return std::nullopt;
}

std::string token_text(TokenId id) {
  if (id < kFirstLetter) return std::string(1, static_cast<char>('0' + id));
  if (id < kFirstTag) return std::string(1, static_cast<char>('a' + (id - kFirstLetter)));
  if (id < kSeparator) return "<" + std::string(kTaskNames[id - kFirstTag]) + ">";
  switch (id) {
    case kSeparator: return "<sep>";
    case kEndOfAnswer: return "<eoa>";
    case kPad: return "<pad>";
    case kPlus: return "+";
    default: return "<unk:" + std::to_string(id) + ">";
  }
}

std::vector<std::string> manifest() {
  std::vector<std::string> out;
  for (TokenId i = 0; i < kSize; ++i) out.push_back(token_text(i));
  return out;
}

void write_manifest(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& t : manifest()) os << t << '\n';
}

}  // namespace vocab

Sample Sample::make(TaskKind kind, std::string payload, std::string answer_text) {
  Sample s;
  s.kind = kind;
  s.instruction.push_back(vocab::tag(kind));
  for (TokenId t : tokenize_text(payload)) s.instruction.push_back(t);
  s.instruction.push_back(vocab::kSeparator);
  s.answer = tokenize_text(answer_text);
  s.answer.push_back(vocab::kEndOfAnswer);
  s.payload = std::move(payload);
  s.answer_text = std::move(answer_text);
  return s;
}

Tokens Sample::sequence() const {
  Tokens s = instruction;
  s.insert(s.end(), answer.begin(), answer.end());
  return s;
}

std::string solve_task(TaskKind kind, std::string_view payload) {
  switch (kind) {
    case TaskKind::copy:
      return std::string(payload);
    case TaskKind::reverse:
      return std::string(payload.rbegin(), payload.rend());
    case TaskKind::sort: {
      std::string s(payload);
      std::sort(s.begin(), s.end(), [](char a, char b) { return *vocab::char_token(a) < *vocab::char_token(b); });
      return s;
    }
    case TaskKind::parity: {
      int sum = 0;
      for (char c : payload) {
        if (c < '0' || c > '9') throw InputError("parity payload must be digits");
        sum += c - '0';
      }
      return sum % 2 ? "1" : "0";
    }
    case TaskKind::modadd: {
      const auto plus = payload.find('+');
      if (plus == std::string_view::npos || plus == 0 || plus + 1 >= payload.size())
        throw InputError("modadd payload must look like 47+58");
      const int a = std::stoi(std::string(payload.substr(0, plus)));
      const int b = std::stoi(std::string(payload.substr(plus + 1)));
      return two_digit((a + b) % 100);
    }
    case TaskKind::kvlookup: {
      if (payload.size() < 3 || payload.size() % 2 == 0) throw InputError("kvlookup payload must be pairs + query");
      const char query = payload.back();
      for (std::size_t i = 0; i + 1 < payload.size(); i += 2)
        if (payload[i] == query) return std::string(1, payload[i + 1]);
      throw InputError("kvlookup query key not present");
    }
  }
  throw ConfigError("task", "unhandled task kind");
}

TaskDataset generate_task(TaskKind kind, std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                          const GeneratorOptions& options) {
  if (n_train == 0 || n_test == 0) throw ConfigError("n_train/n_test", "counts must be positive");
  if (options.min_payload == 0 || options.min_payload > options.max_payload)
    throw ConfigError("payload_length", "need 0 < min <= max");
  TaskDataset ds;
  ds.kind = kind;
  ds.seed = seed;
  Rng rng(derive_seed(seed, "task", static_cast<std::uint64_t>(kind)));
  std::unordered_set<std::string> seen;
  const std::size_t budget = 200 * (n_train + n_test);
  std::size_t attempts = 0;
  auto fill = [&](std::vector<Sample>& out, std::size_t n) {
    while (out.size() < n) {
      if (++attempts > budget)
        throw ConfigError("n_train/n_test", "payload space of task '" + std::string(task_name(kind)) +
                                                "' too small for the requested disjoint splits");
      std::string payload = random_payload(kind, rng, options);
      if (!seen.insert(payload).second) continue;
      std::string answer = solve_task(kind, payload);
      out.push_back(Sample::make(kind, std::move(payload), std::move(answer)));
    }
  };
  fill(ds.test, n_test);
  fill(ds.train, n_train);
  return ds;
}

TaskDataset generate_task(std::string_view kind, std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                          const GeneratorOptions& options) {
  return generate_task(parse_task_kind(kind), seed, n_train, n_test, options);
}

void write_samples_jsonl(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["task"] = task_name(s.kind);
    j["instruction"] = s.payload;
    j["answer"] = s.answer_text;
    os << j.dump() << '\n';
  }
}

std::vector<Sample> read_samples_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(line_no, "expected a JSON object");
    for (const char* field : {"task", "instruction", "answer"}) {
      if (!j.contains(field) || !j[field].is_string())
        throw ParseError(line_no, std::string("missing string field \"") + field + "\"");
    }
    try {
      const TaskKind kind = parse_task_kind(j["task"].get<std::string>());
      out.push_back(Sample::make(kind, j["instruction"].get<std::string>(), j["answer"].get<std::string>()));
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

void save_jsonl(const TaskDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string name(task_name(ds.kind));
  write_samples_jsonl(dir / (name + "_train.jsonl"), ds.train);
  write_samples_jsonl(dir / (name + "_test.jsonl"), ds.test);
  nlohmann::ordered_json meta;
  meta["task"] = name;
  meta["seed"] = ds.seed;
  std::ofstream(dir / (name + "_meta.json")) << meta.dump() << '\n';
  vocab::write_manifest(dir / "vocab.txt");
}

TaskDataset load_jsonl(const std::filesystem::path& dir, TaskKind kind) {
  const std::string name(task_name(kind));
  TaskDataset ds;
  ds.kind = kind;
  ds.train = read_samples_jsonl(dir / (name + "_train.jsonl"));
  ds.test = read_samples_jsonl(dir / (name + "_test.jsonl"));
  const auto meta_path = dir / (name + "_meta.json");
  if (std::filesystem::exists(meta_path)) {
    std::ifstream is(meta_path);
    const auto meta = nlohmann::json::parse(is, nullptr, false);
    if (!meta.is_discarded() && meta.contains("seed")) ds.seed = meta["seed"].get<std::uint64_t>();
  }
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& s : *split)
      if (s.kind != kind) throw InputError("dataset for '" + name + "' contains a sample tagged '" +
                                           std::string(task_name(s.kind)) + "'");
  return ds;
}

}  // namespace seekr
