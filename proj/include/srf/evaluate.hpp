#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "srf/config.hpp"
#include "srf/data.hpp"
#include "srf/metrics.hpp"
#include "srf/seg_net.hpp"

namespace srf {

/// Held-out scenes eval_offset .. eval_offset + eval_scenes - 1.
std::vector<Scene> heldout_scenes(const RunConfig& config);

/// Writes scene_<i>.ppm / scene_<i>.pgm pairs.
void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes);
/// Reads every scene_*.ppm with a matching .pgm, in file-name order.
std::vector<Scene> read_dataset(const std::filesystem::path& dir);

struct EvalReport {
  int num_classes = 0;
  std::int64_t images = 0;
  bool oracle = false;
  IouReport iou;
  double boundary_f1 = 0.0;  ///< tolerance 1 px
  double boundary_f3 = 0.0;  ///< tolerance 3 px
};

inline constexpr int kEvalBatch = 8;

/// Single-scale inference over `scenes`. With `net` null the ground truth is
/// used as the prediction. Predictions are written to `dump_dir` when set.
EvalReport evaluate(const SegNet* net, const std::vector<Scene>& scenes, int num_classes,
                    const std::optional<std::filesystem::path>& dump_dir = std::nullopt);

std::string format_eval_report(const EvalReport& report, const RunConfig& config);
/// "class,iou" rows followed by mean_iou, boundary_f1 and boundary_f3 rows.
std::string format_eval_csv(const EvalReport& report);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> data_dir;  ///< otherwise held-out generated scenes
  bool oracle = false;
  bool dump_predictions = false;
};

/// Loads the checkpoint into a network built from `config`, evaluates, and
/// writes eval.txt and eval.csv (and predictions/) under config.out.
EvalReport cmd_eval(const RunConfig& config, const EvalOptions& options);

}  // namespace srf
