#include "seekr/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "seekr/error.hpp"
#include "seekr/rng.hpp"

namespace seekr {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
    throw ConfigError(std::string(key), "expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty())
    throw ConfigError(std::string(key), "expected a number, got '" + std::string(v) + "'");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string(key), "expected true or false, got '" + std::string(v) + "'");
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

struct Entry {
  const char* name;
  const char* help;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SEEKR_SIZE_FIELD(key, member, help)                                                   \
  Entry {                                                                                     \
    key, help, [](RunConfig& c, std::string_view v) { c.member = to_u64(key, v); },           \
        [](const RunConfig& c) { return std::to_string(c.member); }                           \
  }
#define SEEKR_DOUBLE_FIELD(key, member, help)                                                 \
  Entry {                                                                                     \
    key, help, [](RunConfig& c, std::string_view v) { c.member = to_double(key, v); },        \
        [](const RunConfig& c) { return num(c.member); }                                      \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      {"method", "seqft, replay, derpp, seekr or mtl",
       [](RunConfig& c, std::string_view v) { c.method = parse_method(v); },
       [](const RunConfig& c) { return std::string(method_name(c.method)); }},
      {"tasks", "comma-separated task sequence",
       [](RunConfig& c, std::string_view v) {
         c.tasks.clear();
         for (auto t : split_list(v)) {
           try {
             c.tasks.push_back(parse_task_kind(t));
           } catch (const ConfigError& e) {
             throw ConfigError("tasks", e.what());
           }
         }
       },
       [](const RunConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < c.tasks.size(); ++i) s += (i ? "," : "") + std::string(task_name(c.tasks[i]));
         return s;
       }},
      {"task_seeds", "comma-separated data seeds, one per task; empty derives them from seed",
       [](RunConfig& c, std::string_view v) {
         c.task_seeds.clear();
         for (auto t : split_list(v)) c.task_seeds.push_back(to_u64("task_seeds", t));
       },
       [](const RunConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < c.task_seeds.size(); ++i) s += (i ? "," : "") + std::to_string(c.task_seeds[i]);
         return s;
       }},
      SEEKR_SIZE_FIELD("train_size", train_size, "training samples per task"),
      SEEKR_SIZE_FIELD("test_size", test_size, "test samples per task"),
      SEEKR_SIZE_FIELD("min_payload", generator.min_payload, "shortest generated payload"),
      SEEKR_SIZE_FIELD("max_payload", generator.max_payload, "longest generated payload"),
      SEEKR_SIZE_FIELD("n_layers", model.n_layers, "transformer blocks"),
      SEEKR_SIZE_FIELD("n_heads", model.n_heads, "attention heads per block"),
      SEEKR_SIZE_FIELD("d_model", model.d_model, "residual width"),
      SEEKR_SIZE_FIELD("d_k", model.d_k, "per-head width; n_heads * d_k must equal d_model"),
      SEEKR_SIZE_FIELD("d_ff", model.d_ff, "MLP hidden width"),
      SEEKR_SIZE_FIELD("max_seq_len", model.max_seq_len, "longest sequence the model accepts"),
      SEEKR_DOUBLE_FIELD("init_std", init_std, "standard deviation of initial weights"),
      SEEKR_SIZE_FIELD("epochs", epochs, "epochs per task"),
      SEEKR_SIZE_FIELD("batch_size", batch_size, "samples per step"),
      {"optimizer", "sgd, momentum or adam",
       [](RunConfig& c, std::string_view v) { c.optimizer.kind = parse_optimizer(v); },
       [](const RunConfig& c) { return std::string(optimizer_name(c.optimizer.kind)); }},
      SEEKR_DOUBLE_FIELD("learning_rate", optimizer.learning_rate, "step size"),
      SEEKR_DOUBLE_FIELD("momentum", optimizer.momentum, "momentum coefficient for optimizer=momentum"),
      SEEKR_DOUBLE_FIELD("clip_norm", optimizer.clip_norm, "global gradient-norm clip, 0 disables"),
      SEEKR_DOUBLE_FIELD("lambda1", weights.lambda1, "replay vs. logit distillation balance in [0, 1]"),
      SEEKR_DOUBLE_FIELD("lambda2", weights.lambda2, "attention distillation weight"),
      SEEKR_SIZE_FIELD("budget_layers", budgets.layers, "layer budget B_L"),
      SEEKR_SIZE_FIELD("budget_heads", budgets.heads, "head budget B_H"),
      SEEKR_SIZE_FIELD("budget_queries", budgets.queries, "query budget B_T"),
      SEEKR_DOUBLE_FIELD("replay_ratio", replay_ratio, "fraction of each task kept for replay"),
      {"scorer_mode", "product, sensitivity_only, forgettability_only or random",
       [](RunConfig& c, std::string_view v) { c.scorer = parse_scorer_mode(v); },
       [](const RunConfig& c) { return std::string(scorer_mode_name(c.scorer)); }},
      {"storage_policy", "full or selected_only",
       [](RunConfig& c, std::string_view v) { c.storage = parse_storage_policy(v); },
       [](const RunConfig& c) { return std::string(storage_policy_name(c.storage)); }},
      {"layer_normalization", "sum or max",
       [](RunConfig& c, std::string_view v) { c.importance.normalization = parse_layer_normalization(v); },
       [](const RunConfig& c) { return std::string(layer_normalization_name(c.importance.normalization)); }},
      {"per_token", "divide importance norms by sequence length",
       [](RunConfig& c, std::string_view v) { c.importance.per_token = to_bool("per_token", v); },
       [](const RunConfig& c) { return std::string(c.importance.per_token ? "true" : "false"); }},
      SEEKR_SIZE_FIELD("seed", seed, "global seed"),
  };
  return table;
}

#undef SEEKR_SIZE_FIELD
#undef SEEKR_DOUBLE_FIELD

}  // namespace

std::vector<ConfigKey> config_keys() {
  const RunConfig defaults;
  std::vector<ConfigKey> out;
  for (const auto& e : entries()) out.push_back({e.name, e.get(defaults), e.help});
  return out;
}

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  for (const auto& e : entries()) {
    if (key == e.name) {
      e.set(config, trim(value));
      return;
    }
  }
  throw ConfigError(std::string(key), "unknown key");
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected key = value");
    apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string describe(const RunConfig& config) {
  std::string out;
  for (const auto& e : entries()) out += std::string(e.name) + " = " + e.get(config) + "\n";
  return out;
}

std::uint64_t config_hash(const RunConfig& config) {
  RunConfig c = config;
  c.seed = 0;
  return hash_tag(describe(c));
}

std::string run_directory_name(const RunConfig& config) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(config)));
  return std::string("cfg") + buf + "-seed" + std::to_string(config.seed);
}

}  // namespace seekr
