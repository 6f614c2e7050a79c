#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nbed/eval.hpp"
#include "nbed/model.hpp"
#include "nbed/trainer.hpp"

namespace nbed {

// Everything a command can be configured with. Text form is one
// `section.key = value` per line; `#` starts a comment.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::string data_list;         // data.list
  std::string augment = "none";  // data.augment: none | bsds | nyud | biped
  std::uint64_t augment_seed = 0;
  std::string pretrained;        // data.pretrained: archive of "sem.*" arrays
  std::vector<double> scales{0.5, 1.0, 1.5};  // infer.scales

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Throws ConfigError naming the key for unknown keys or unparsable values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
// `key=value` (as given to --set).
void apply_override(RunConfig& cfg, const std::string& assignment);
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);
// Sets model.seed and train.seed when NBED_SEED is present.
void apply_seed_environment(RunConfig& cfg);
// Validates every section.
void validate(const RunConfig& cfg);

std::string dump_run_config(const RunConfig& cfg);
std::vector<std::string> config_keys();

std::string dump_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& text);

}  // namespace nbed
