#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "srf/tensor.hpp"

namespace srf {

struct GradCheckOptions {
  double eps = 1e-5;
  /// 0 probes every element; otherwise a seeded random subset per input.
  std::size_t max_elements_per_input = 0;
  std::uint64_t seed = 0;
  /// Fault injection: analytic gradients are scaled by (1 + perturbation).
  double analytic_perturbation = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t elements_checked = 0;
  /// Probes discarded because x ± eps lands on a different branch of a
  /// piecewise operator (relu sign, sampler cell) than x itself.
  std::size_t kinks_skipped = 0;
  std::size_t worst_input = 0;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Closure evaluated on the probed inputs; must return a single-element tensor.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>& inputs)>;

/// Compares reverse-mode gradients against central differences
/// (f(x+eps) - f(x-eps)) / 2eps. The per-element error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
///
/// Inputs must be 64-bit leaves; they are flagged requires_grad and probed in
/// place (values are restored afterwards). A probe whose ±eps interval
/// crosses a kink is skipped; in sampled mode the next element is drawn
/// instead, so every input still gets max_elements_per_input probes.
GradCheckReport grad_check_report(const ScalarFn& f, std::vector<Tensor> inputs, const GradCheckOptions& options = {});

double grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double eps = 1e-5);

}  // namespace srf
