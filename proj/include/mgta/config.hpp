#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "mgta/augment.hpp"
#include "mgta/model.hpp"
#include "mgta/scene.hpp"

namespace mgta {

struct AugmentConfig {
  bool enabled = true;
  AugmentParams similarity;
  bool gt_sampling = true;
  std::size_t max_paste = 2;  // donor objects pasted per sample

  bool operator==(const AugmentConfig&) const = default;
};

struct TrainConfig {
  std::size_t stage1_epochs = 30;
  std::size_t stage2_epochs = 10;
  double lr = 2e-3;  // stage-1 peak of the one-cycle schedule
  double stage2_lr_divisor = 5.0;
  std::size_t batch = 1;  // gradient accumulation over this many sequences
  double grad_clip = 10.0;
  std::uint64_t seed = 7;
  AugmentConfig augment;

  bool operator==(const TrainConfig&) const = default;
};

struct DataConfig {
  std::size_t train_count = 60;
  std::size_t test_count = 20;
  std::uint64_t seed = 2024;

  bool operator==(const DataConfig&) const = default;
};

struct PathsConfig {
  std::string dataset = "data";
  std::string out = "runs/default";

  bool operator==(const PathsConfig&) const = default;
};

/// Everything a command needs. The head's class count always equals the
/// number of scene classes.
struct RunConfig {
  SceneSpec scene;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  PathsConfig paths;

  // Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Missing keys keep their defaults; unknown keys and wrong types throw ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string config_to_string(const RunConfig& cfg);  // pretty JSON, all fields
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace mgta
