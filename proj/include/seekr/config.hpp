#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "seekr/trainer.hpp"

namespace seekr {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

// Every accepted key with its default, in rendering order.
std::vector<ConfigKey> config_keys();

// Throws ConfigError naming `key` when it is unknown or the value does not parse.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

// Flat `key = value` text; '#' starts a comment. Later lines override earlier ones.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

// Full key = value rendering; parse_config(describe(c)) reproduces c.
std::string describe(const RunConfig& config);

// Hash of every field except the seed, for run-directory names.
std::uint64_t config_hash(const RunConfig& config);
std::string run_directory_name(const RunConfig& config);

}  // namespace seekr
