#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "voltrack/common.hpp"

namespace voltrack {

/// One schema row: a key, its default (empty = required, must be supplied
/// by file or flag) and a one-line description for generated config files.
struct ConfigEntry {
  std::string key;
  std::string default_value;
  std::string doc;
};

/// Allowed keys for one subcommand (simulate|train|track|eval|ablate|bench).
const std::vector<ConfigEntry>& config_schema(const std::string& command);

/// Parsed `key = value` text with typed access. Lines are trimmed, `#`
/// starts a comment, keys must be unique.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_text(const std::string& text);
  static KeyValueConfig parse_file(const std::filesystem::path& path);

  /// Defaulted view of a command's schema: unknown keys are rejected,
  /// schema defaults fill the gaps. Required keys may still be empty until
  /// set(); require() enforces them.
  static KeyValueConfig for_command(const std::string& command,
                                    const KeyValueConfig& overrides);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
  void require(const std::string& key) const;  // ConfigInvalid naming the key

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;  // comma separated
  std::vector<int> get_ints(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Emits a fully commented config with every default for one subcommand.
void write_default_config(const std::string& command, const std::filesystem::path& path);

}  // namespace voltrack
