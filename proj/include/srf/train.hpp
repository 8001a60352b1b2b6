#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "srf/config.hpp"
#include "srf/data.hpp"
#include "srf/seg_net.hpp"

namespace srf {

/// lr · (1 − step/total)^power, with step counted from 0.
double poly_lr(double base, long step, long total, double power);

/// Momentum SGD with L2 weight decay on weights of rank ≥ 2:
///   v ← μ·v + g + wd·w,  w ← w − lr·v
class MomentumSgd {
 public:
  MomentumSgd(const ParameterSet& params, const OptimConfig& config);

  void step(ParameterSet& params, const GradientMap& grads, double lr);

 private:
  OptimConfig config_;
  std::vector<std::vector<double>> velocity_;
};

struct StepLog {
  long step = 0;  ///< 1-based
  double lr = 0.0;
  double ce = 0.0;
  double cl = 0.0;
  double total = 0.0;
};

/// Training scenes 0 .. data.train_scenes-1 of the configured corpus.
std::vector<Scene> training_corpus(const RunConfig& config);

/// Draws mini-batches: a seeded shuffle per epoch, optional horizontal flips.
class BatchSampler {
 public:
  BatchSampler(const std::vector<Scene>& corpus, int batch, bool flip, std::uint64_t seed);

  struct Batch {
    Tensor images;
    LabelMap labels;
  };
  Batch next();

 private:
  const std::vector<Scene>* corpus_;
  int batch_;
  bool flip_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
  std::mt19937_64 flips_;

  void reshuffle();
};

using StepCallback = std::function<void(const StepLog&, const SegNet&)>;

/// Runs config.train.steps optimizer steps on `net` over `corpus`. Raises
/// DivergenceError on a non-finite loss.
void train_network(const RunConfig& config, const std::vector<Scene>& corpus, SegNet& net,
                   const StepCallback& on_step = {});

struct TrainOutcome {
  std::vector<StepLog> log;
  std::filesystem::path checkpoint;  ///< final checkpoint
};

/// Trains into `out`: config.txt, metrics.csv, checkpoint_step_<N>.ckpt
/// every train.checkpoint_every steps and checkpoint_final.ckpt.
TrainOutcome cmd_train(const RunConfig& config, const std::filesystem::path& out);

inline constexpr char kMetricsHeader[] = "step,lr,ce,cl,total";
std::string format_step_row(const StepLog& row);

/// Creates `dir` (and parents); IoError when it cannot be created or written.
void ensure_writable_dir(const std::filesystem::path& dir);

/// Human-readable optimizer description used in report headers.
std::string optimizer_description(const OptimConfig& config);

}  // namespace srf
