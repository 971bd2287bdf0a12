#pragma once

// Line-oriented text format for system descriptions. See docs/config-format.md.

#include <string>
#include <string_view>

#include "foe/cylinder.hpp"

namespace foe {

struct SystemConfig {
  LevelSpec levels;
  Measure measure;

  bool operator==(const SystemConfig&) const = default;
};

/// Parses and validates a system description; the measure is normalized.
/// Throws ParseError carrying the offending line number.
SystemConfig parse_system_config(std::string_view text);
/// Canonical text; parse_system_config(serialize_system_config(c)) == c.
std::string serialize_system_config(const SystemConfig& config);

SystemConfig load_system_config(const std::string& path);
void save_system_config(const SystemConfig& config, const std::string& path);

/// Splits on whitespace.
std::vector<std::string> split_fields(std::string_view line);

}  // namespace foe
