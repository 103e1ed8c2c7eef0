#pragma once

// Run configuration: a flat set of named keys read from `key = value` files
// and overridable from the command line.

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cxrclip/synth.hpp"
#include "cxrclip/train.hpp"

namespace cxrclip {

struct RunConfig {
  train::TrainConfig train;
  synth::SynthSpec synth;
  int prompt_renderings = 1;
  std::string eval_classes;  // comma separated; empty means the dataset's classes.txt
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();

// Throws ConfigError for unknown keys or unparsable values.
void set_config_value(RunConfig& cfg, std::string_view key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, std::string_view key);

// Lines of `key = value`; '#' starts a comment. Later lines win.
std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text);
void apply_config_text(RunConfig& cfg, std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

// Every key except seed as sorted `key=value` lines.
std::string canonical_config(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

std::vector<std::string> split_list(std::string_view text);

}  // namespace cxrclip
