#pragma once

#include <functional>
#include <string>
#include <vector>

#include "srf/grad_check.hpp"

namespace srf {

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckTarget {
  std::string name;
  /// Builds its own 64-bit inputs and runs the check with the given options
  /// (eps, seed and perturbation are taken from them).
  std::function<GradCheckReport(const GradCheckOptions&)> run;
};

/// Every operator, every module forward and the full network objective.
std::vector<GradCheckTarget> gradcheck_targets();

struct GradCheckRow {
  std::string name;
  GradCheckReport report;
  bool passed = false;
};

/// Runs all targets. `corrupt` names a target whose analytic gradient is
/// scaled by 1.01 (fault-injection hook); empty for none.
std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed, const std::string& corrupt = {});

/// Fixed-width table, one line per target plus a summary line.
std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows);

}  // namespace srf
