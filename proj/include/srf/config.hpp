#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "srf/data.hpp"
#include "srf/losses.hpp"
#include "srf/seg_net.hpp"

namespace srf {

struct OptimConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double power = 0.9;  ///< poly schedule exponent
};

struct TrainConfig {
  long steps = 2000;
  int batch = 4;
  long checkpoint_every = 0;  ///< 0 writes only the final checkpoint
  bool flip = true;
};

struct DataConfig {
  int train_scenes = 200;
  int eval_scenes = 100;
  std::uint64_t eval_offset = 1000000;  ///< held-out scenes use indices eval_offset + i
};

/// Everything a command needs. Serialized as flat "key = value" lines.
struct RunConfig {
  SceneSpec scene;
  DataConfig data;
  NetworkConfig net;  ///< num_classes follows scene.num_classes
  Variant variant;
  OptimConfig optim;
  TrainConfig train;
  LossConfig loss;
  int ablate_seeds = 5;
  std::uint64_t seed = 0;
  std::string out = "run";

  void validate() const;
};

/// Parses "key = value" lines ('#' starts a comment) over the defaults.
/// Unknown keys and malformed values raise ConfigError naming the line.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its current value, in a fixed order; parse_config of the
/// result reproduces the config.
std::string config_to_text(const RunConfig& config);

}  // namespace srf
