// SPDX-License-Identifier: Apache-2.0
//
// Batch subcommands driven by JSON configs. Each config is validated against
// the command's schema (unknown keys rejected, defaults filled) before any
// work starts.
#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace isogcn {

enum class ConfigType { String, Integer, Number, Boolean, IntegerList };

const char* config_type_name(ConfigType t) noexcept;

struct ConfigKey {
  std::string name;
  ConfigType type = ConfigType::String;
  std::string help;
  nlohmann::json default_value;  // null when required or optional without default
  bool required = false;
};

std::vector<std::string> command_names();
const std::vector<ConfigKey>& command_schema(const std::string& command);
std::string command_description(const std::string& command);

/// Defaults filled in; throws InvalidArgument on unknown keys, missing
/// required keys or type mismatches.
nlohmann::json validate_config(const std::string& command, const nlohmann::json& config);

/// Runs a subcommand. The result always carries a human-readable "summary".
nlohmann::json run_command(const std::string& command, const nlohmann::json& config);

/// Directory for preprocessed IsoAMs: config value, then ISOGCN_CACHE_DIR,
/// then <dataset>/cache.
std::string resolve_cache_dir(const std::string& configured, const std::string& dataset);

}  // namespace isogcn
