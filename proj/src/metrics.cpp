#include "srf/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace srf {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(k_ * k_), 0);
}

void ConfusionMatrix::add(int truth, int prediction, std::int64_t count) {
  if (truth < 0 || truth >= k_ || prediction < 0 || prediction >= k_) {
    throw ConfigError("confusion matrix entry (" + std::to_string(truth) + ", " + std::to_string(prediction) +
                      ") outside " + std::to_string(k_) + " classes");
  }
  counts_[static_cast<std::size_t>(truth * k_ + prediction)] += count;
}

void ConfusionMatrix::add(const LabelMap& prediction, const LabelMap& truth) {
  if (prediction.n != truth.n || prediction.h != truth.h || prediction.w != truth.w) {
    throw ShapeError("confusion matrix: prediction and truth extents differ");
  }
  for (std::size_t i = 0; i < truth.values.size(); ++i) {
    if (truth.values[i] == kIgnoreLabel) continue;
    add(truth.values[i], prediction.values[i]);
  }
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

IouReport miou(const ConfusionMatrix& conf) {
  const int k = conf.num_classes();
  IouReport r;
  r.per_class.resize(static_cast<std::size_t>(k));
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += conf.at(c, j);
      col += conf.at(j, c);
    }
    const std::int64_t tp = conf.at(c, c);
    const std::int64_t uni = row + col - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class[static_cast<std::size_t>(c)] = iou;
    sum += iou;
    ++present;
  }
  if (present == 0) throw EmptyBatchError("miou: confusion matrix is empty");
  r.mean = sum / present;
  return r;
}

std::vector<std::uint8_t> boundary_mask(const LabelMap& labels, std::int64_t index) {
  const std::int64_t h = labels.h, w = labels.w;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h * w), 0);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const std::uint8_t v = labels.at(index, y, x);
      const bool edge = (x > 0 && labels.at(index, y, x - 1) != v) || (x + 1 < w && labels.at(index, y, x + 1) != v) ||
                        (y > 0 && labels.at(index, y - 1, x) != v) || (y + 1 < h && labels.at(index, y + 1, x) != v);
      mask[static_cast<std::size_t>(y * w + x)] = edge;
    }
  }
  return mask;
}

namespace {

// Square (Chebyshev) dilation by `r`, separable.
std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& mask, std::int64_t h, std::int64_t w, int r) {
  if (r == 0) return mask;
  std::vector<std::uint8_t> tmp(mask.size(), 0), out(mask.size(), 0);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      std::uint8_t any = 0;
      for (std::int64_t u = std::max<std::int64_t>(0, x - r); u <= std::min(w - 1, x + r) && !any; ++u) any = mask[y * w + u];
      tmp[y * w + x] = any;
    }
  }
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      std::uint8_t any = 0;
      for (std::int64_t v = std::max<std::int64_t>(0, y - r); v <= std::min(h - 1, y + r) && !any; ++v) any = tmp[v * w + x];
      out[y * w + x] = any;
    }
  }
  return out;
}

}  // namespace

BoundaryCounts& BoundaryCounts::operator+=(const BoundaryCounts& o) {
  pred_matched += o.pred_matched;
  pred_total += o.pred_total;
  truth_matched += o.truth_matched;
  truth_total += o.truth_total;
  return *this;
}

double BoundaryCounts::f_score() const {
  if (pred_total == 0 && truth_total == 0) return 1.0;
  if (pred_total == 0 || truth_total == 0) return 0.0;
  const double p = static_cast<double>(pred_matched) / static_cast<double>(pred_total);
  const double r = static_cast<double>(truth_matched) / static_cast<double>(truth_total);
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

BoundaryCounts boundary_counts(const LabelMap& prediction, const LabelMap& truth, int tol_px) {
  if (prediction.n != truth.n || prediction.h != truth.h || prediction.w != truth.w) {
    throw ShapeError("boundary_f: prediction and truth extents differ");
  }
  if (tol_px < 0) throw ConfigError("boundary_f: tolerance must be nonnegative");
  BoundaryCounts counts;
  for (std::int64_t b = 0; b < truth.n; ++b) {
    const auto pb = boundary_mask(prediction, b);
    const auto tb = boundary_mask(truth, b);
    const auto pd = dilate(pb, truth.h, truth.w, tol_px);
    const auto td = dilate(tb, truth.h, truth.w, tol_px);
    for (std::size_t i = 0; i < pb.size(); ++i) {
      counts.pred_total += pb[i];
      counts.pred_matched += pb[i] && td[i];
      counts.truth_total += tb[i];
      counts.truth_matched += tb[i] && pd[i];
    }
  }
  return counts;
}

double boundary_f(const LabelMap& prediction, const LabelMap& truth, int tol_px) {
  return boundary_counts(prediction, truth, tol_px).f_score();
}

}  // namespace srf
