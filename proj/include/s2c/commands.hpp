#pragma once

// Pipeline commands driven by key=value run configurations. The CLI and the
// C API both go through run_command.

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace s2c {

struct ConfigKey {
  std::string name;
  std::string default_value;  // empty: no default
  bool required = false;
  std::string help;
};

class RunConfig {
 public:
  /// Throws a usage error for an unknown command.
  explicit RunConfig(std::string command);

  const std::string& command() const { return command_; }
  /// Unknown keys are rejected. '-' in keys is read as '_'.
  void set(const std::string& key, const std::string& value);
  /// key=value lines, '#' comments. Later set() calls override file values.
  void load(const std::filesystem::path& path);
  void parse(const std::string& text, const std::string& where);

  bool has(const std::string& key) const;
  /// Explicit value or the default; usage error if neither exists.
  std::string get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  unsigned long long get_uint(const std::string& key) const;

  /// Every key with its effective value, one key=value line each.
  std::string resolved() const;

  static const std::vector<std::string>& commands();
  static const std::vector<ConfigKey>& keys(const std::string& command);

 private:
  const ConfigKey* find(const std::string& key) const;

  std::string command_;
  std::map<std::string, std::string> values_;
};

using LogFn = std::function<void(const std::string&)>;

/// Runs the command; returns what it prints on success. Outputs go under
/// the `out` key where the command has one, next to resolved.cfg.
std::string run_command(const RunConfig& cfg, const LogFn& log = {});

/// "1,2,3" or "1-5".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace s2c
