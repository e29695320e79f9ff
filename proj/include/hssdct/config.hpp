#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hssdct/network.hpp"
#include "hssdct/trainer.hpp"

namespace hssdct {

/// Synthetic dataset recipe. Band counts and ratio come from the model.
struct DataConfig {
  std::size_t n_scenes = 2;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t n_endmembers = 4;
  double noise_sigma = 0.0;
  /// <= 0 selects ratio / 2.
  double blur_sigma = 0.0;
  std::uint64_t seed = 0;
};

struct BenchConfig {
  std::vector<std::size_t> token_counts{64, 256, 1024, 4096};
  std::size_t channels = 32;
  std::size_t repeats = 5;
  std::size_t warmup = 2;
  std::vector<std::string> variants{"factorized", "naive"};
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  BenchConfig bench;

  void validate() const;
  /// Sets the model, train and data seeds.
  void set_seed(std::uint64_t seed);
  SceneSpec scene_spec(std::size_t index) const;
};

/// JSON text with sections "model", "train", "data", "bench". Missing keys
/// keep their defaults; unknown keys raise ConfigError.
std::string to_json_text(const RunConfig& config);
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Applies "section.key=value"; value is parsed as JSON, falling back to a
/// bare string. Unknown keys and type mismatches raise ConfigError.
void apply_override(RunConfig& config, const std::string& assignment);

std::string model_config_json(const ModelConfig& config);
ModelConfig parse_model_config(const std::string& text);

}  // namespace hssdct
