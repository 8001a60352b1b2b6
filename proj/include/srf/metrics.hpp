#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "srf/label_map.hpp"

namespace srf {

/// Rows are ground truth, columns prediction. Ignore-labeled ground-truth
/// pixels are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(const LabelMap& prediction, const LabelMap& truth);
  void add(int truth, int prediction, std::int64_t count = 1);

  int num_classes() const { return k_; }
  std::int64_t at(int truth, int prediction) const { return counts_[static_cast<std::size_t>(truth * k_ + prediction)]; }
  std::int64_t total() const;

 private:
  int k_;
  std::vector<std::int64_t> counts_;
};

struct IouReport {
  std::vector<std::optional<double>> per_class;  ///< empty when the class has zero union
  double mean = 0.0;
};

/// Per-class TP / (TP + FP + FN) and their mean over classes with nonzero
/// union. An all-zero matrix raises EmptyBatchError.
IouReport miou(const ConfusionMatrix& conf);

/// Pixels with a 4-neighbour of a different label, for image `index`.
std::vector<std::uint8_t> boundary_mask(const LabelMap& labels, std::int64_t index);

/// Counts for boundary precision (prediction pixels matched) and recall
/// (ground-truth pixels matched).
struct BoundaryCounts {
  std::int64_t pred_matched = 0;
  std::int64_t pred_total = 0;
  std::int64_t truth_matched = 0;
  std::int64_t truth_total = 0;

  BoundaryCounts& operator+=(const BoundaryCounts& o);
  /// 1 when both boundary sets are empty, 0 when exactly one is.
  double f_score() const;
};

BoundaryCounts boundary_counts(const LabelMap& prediction, const LabelMap& truth, int tol_px);

/// Boundary F-score over all images of the maps, matching within Chebyshev
/// distance tol_px.
double boundary_f(const LabelMap& prediction, const LabelMap& truth, int tol_px);

}  // namespace srf
