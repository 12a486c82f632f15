#pragma once

#include <filesystem>
#include <string>

#include "lkaseg/model.hpp"
#include "lkaseg/synth.hpp"
#include "lkaseg/train.hpp"

namespace lkaseg {

inline constexpr int kConfigVersion = 1;

/// Everything a command needs. The JSON form is one flat object; a "preset"
/// key seeds the model fields, which any explicit key then overrides.
struct RunConfig {
  std::string preset = "toy";
  ModelConfig model = ModelConfig::preset("toy");
  TrainConfig train;
  std::string train_dir;
  std::string val_dir;
  /// Input used by flops / params / rf / bench.
  int input_height = 64;
  int input_width = 64;
  int batch = 1;

  Shape input_shape() const { return {batch, 3, input_height, input_width}; }
  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Throws ConfigError for unknown keys, wrong types, or a bad "version".
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& cfg);

SynthSpec parse_synth_spec(const std::string& json_text);
SynthSpec load_synth_spec(const std::filesystem::path& path);

}  // namespace lkaseg
