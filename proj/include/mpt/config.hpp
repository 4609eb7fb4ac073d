#pragma once

// Run configuration: one JSON document, unknown keys rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpt/gfl.hpp"
#include "mpt/model.hpp"
#include "mpt/synth.hpp"
#include "mpt/trainer.hpp"

namespace mpt {

struct TaskConfig {
  SystemKind kind = SystemKind::kEulerian;
  std::size_t train_trajectories = 20;
  std::size_t valid_trajectories = 4;
  HeatSpec heat;
  SpringChainSpec spring;
};

struct RolloutConfig {
  std::string split = "valid";
  std::size_t trajectories = 0;  // 0: all in the split
  std::size_t rmse_k = 10;
};

struct AblationConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<double> segment_rates{0.3, 0.5, 0.7};
  double fixed_lambda = 1.0;
  /// Steps per run; 0 uses train.steps.
  std::size_t steps = 0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path data_dir = "data";
  std::filesystem::path cache_dir = "cache";
  std::filesystem::path out_dir = "runs/default";
  std::optional<std::filesystem::path> checkpoint;
  TaskConfig task;
  ModelConfig model;
  std::string model_kind = "mpt";  // "oracle" replays ground truth (test hook)
  GflConfig gfl;
  TrainConfig train;
  RolloutConfig rollout;
  AblationConfig ablation;

  /// Throws ConfigError on unknown keys, wrong types or invalid values.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
  /// Model and train seeds follow the top-level seed.
  void set_seed(std::uint64_t s);
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json gfl_config_to_json(const GflConfig& cfg, LossKind kind);
GflConfig gfl_config_from_json(const nlohmann::json& j, LossKind* kind);

}  // namespace mpt
