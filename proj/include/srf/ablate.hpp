#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "srf/config.hpp"

namespace srf {

/// Table row order: baseline, +srm, +crm, both.
std::array<Variant, 4> ablation_variants();

struct AblationRun {
  Variant variant;
  std::uint64_t seed = 0;
  double miou = 0.0;
  double boundary_f1 = 0.0;
  double boundary_f3 = 0.0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation; 0 for a single run
};

MeanStd mean_std(const std::vector<double>& values);

struct AblationRow {
  Variant variant;
  int runs = 0;
  MeanStd miou, boundary_f1, boundary_f3;
};

struct AblationReport {
  std::vector<AblationRun> runs;  ///< variant-major, seeds ascending
  std::array<AblationRow, 4> rows;
};

AblationReport summarize_ablation(const std::vector<AblationRun>& runs);

std::string format_ablation_table(const AblationReport& report, const RunConfig& config);
std::string format_ablation_csv(const AblationReport& report);
std::string format_ablation_runs_csv(const AblationReport& report);

/// Trains and evaluates every variant for seeds config.seed ..
/// config.seed + ablate_seeds - 1 under out/<variant>/seed_<s>, then writes
/// ablation.csv, ablation_runs.csv and ablation.txt to out. Independent runs
/// are spread over `workers` threads (0 = hardware concurrency).
AblationReport cmd_ablate(const RunConfig& config, const std::filesystem::path& out, unsigned workers = 0);

}  // namespace srf
