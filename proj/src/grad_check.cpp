#include "srf/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "srf/branch_trace.hpp"

namespace srf {

namespace {

struct Evaluation {
  double value;
  std::uint64_t branches;
};

Evaluation evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  NoGradScope no_grad;
  BranchTrace trace;
  Tensor out = f(inputs);
  if (out.numel() != 1) throw ShapeError("grad_check: closure returned shape " + shape_str(out.shape()));
  return {out.item(), trace.digest()};
}

}  // namespace

GradCheckReport grad_check_report(const ScalarFn& f, std::vector<Tensor> inputs, const GradCheckOptions& options) {
  for (auto& in : inputs) {
    if (in.dtype() != DType::f64) throw ConfigError("grad_check: inputs must be 64-bit");
    in.set_requires_grad(true);
  }
  Tensor out = f(inputs);
  if (out.numel() != 1) throw ShapeError("grad_check: closure returned shape " + shape_str(out.shape()));
  const GradientMap grads = backward(out);
  const std::uint64_t base_branches = evaluate(f, inputs).branches;

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& in = inputs[k];
    const Tensor* g = grads.find(in.id());
    std::vector<double> analytic = g ? g->to_vector() : std::vector<double>(static_cast<std::size_t>(in.numel()), 0.0);

    std::vector<std::int64_t> order(static_cast<std::size_t>(in.numel()));
    std::iota(order.begin(), order.end(), 0);
    std::size_t wanted = order.size();
    if (options.max_elements_per_input != 0 && order.size() > options.max_elements_per_input) {
      std::shuffle(order.begin(), order.end(), rng);
      wanted = options.max_elements_per_input;
    }

    auto values = in.mutable_data<double>();
    std::size_t probed = 0;
    for (std::size_t o = 0; o < order.size() && probed < wanted; ++o) {
      const std::int64_t idx = order[o];
      const double saved = values[static_cast<std::size_t>(idx)];
      values[static_cast<std::size_t>(idx)] = saved + options.eps;
      const Evaluation plus = evaluate(f, inputs);
      values[static_cast<std::size_t>(idx)] = saved - options.eps;
      const Evaluation minus = evaluate(f, inputs);
      values[static_cast<std::size_t>(idx)] = saved;
      if (plus.branches != base_branches || minus.branches != base_branches) {
        // The interval crosses a kink; the difference quotient is not a derivative there.
        ++report.kinks_skipped;
        continue;
      }
      ++probed;

      const double numeric = (plus.value - minus.value) / (2.0 * options.eps);
      const double a = analytic[static_cast<std::size_t>(idx)] * (1.0 + options.analytic_perturbation);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++report.elements_checked;
      if (err > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        report.worst_input = k;
        report.worst_index = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double eps) {
  GradCheckOptions options;
  options.eps = eps;
  return grad_check_report(f, std::move(inputs), options).max_rel_error;
}

}  // namespace srf
