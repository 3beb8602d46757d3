// s2c command-line front end. Option tables come from the library, so every
// configuration key is also a flag: `--noise-sigma 0.1` sets noise_sigma.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "s2c/s2c.h"

namespace {

int exit_code(s2c_status s) {
  switch (s) {
    case S2C_OK: return 0;
    case S2C_ERR_USAGE:
    case S2C_ERR_INVALID: return 2;
    case S2C_ERR_IO:
    case S2C_ERR_FORMAT: return 3;
    case S2C_ERR_NUMERIC: return 4;
    default: return 1;
  }
}

int report(s2c_status s) {
  std::fprintf(stderr, "s2c: %s error: %s\n", s2c_status_name(s), s2c_last_error());
  return exit_code(s);
}

struct Command {
  CLI::App* app = nullptr;
  std::string config_file;
  std::map<std::string, std::string> values;  // key -> flag value, filled by CLI11
};

void log_line(const char* line, void*) {
  std::fprintf(stderr, "%s\n", line);
  std::fflush(stderr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Water segmentation from coarse labels and crowdsourced points"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(s2c_version()));

  std::map<std::string, Command> commands;
  const std::map<std::string, std::string> about = {
      {"gen", "generate a synthetic dataset and manifest"},
      {"train", "train a UNet or refiner"},
      {"infer", "predict one tile"},
      {"eval", "score a checkpoint on a manifest split"},
      {"benchmark", "train and score the five benchmark rows over seeds"},
      {"ablate", "train and score the point-scenario grid over seeds"},
      {"report", "comparison tables and prediction panels"},
      {"gradcheck", "finite-difference check of every op and the refiner"}};
  for (size_t i = 0; i < s2c_command_count(); ++i) {
    const std::string name = s2c_command_name(i);
    auto& cmd = commands[name];
    const auto it = about.find(name);
    cmd.app = app.add_subcommand(name, it == about.end() ? "" : it->second);
    cmd.app->add_option("--config", cmd.config_file, "key=value file; flags override it")->check(CLI::ExistingFile);
    size_t n = 0;
    if (s2c_command_key_count(name.c_str(), &n) != S2C_OK) return report(S2C_ERR_INTERNAL);
    for (size_t k = 0; k < n; ++k) {
      const char *key, *def, *help;
      int required = 0;
      s2c_command_key(name.c_str(), k, &key, &def, &help, &required);
      std::string flag = key;
      for (auto& c : flag)
        if (c == '_') c = '-';
      std::string text = help;
      if (*def) text += " [" + std::string(def) + "]";
      if (required) text += " (required)";
      cmd.app->add_option("--" + flag, cmd.values[key], text);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  for (auto& [name, cmd] : commands) {
    if (!cmd.app->parsed()) continue;
    s2c_config* cfg = nullptr;
    s2c_status st = s2c_config_create(name.c_str(), &cfg);
    if (st != S2C_OK) return report(st);
    if (!cmd.config_file.empty()) st = s2c_config_load(cfg, cmd.config_file.c_str());
    for (const auto& [key, value] : cmd.values) {
      if (st != S2C_OK) break;
      std::string flag = key;
      for (auto& c : flag)
        if (c == '_') c = '-';
      if (cmd.app->get_option("--" + flag)->count() > 0) st = s2c_config_set(cfg, key.c_str(), value.c_str());
    }
    char* result = nullptr;
    if (st == S2C_OK) st = s2c_run(cfg, log_line, nullptr, &result);
    s2c_config_destroy(cfg);
    if (st != S2C_OK) return report(st);
    if (result) {
      std::fputs(result, stdout);
      s2c_string_free(result);
    }
    return 0;
  }
  return 2;
}
