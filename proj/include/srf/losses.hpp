#pragma once

#include <cstdint>
#include <vector>

#include "srf/label_map.hpp"
#include "srf/seg_net.hpp"

namespace srf {

inline constexpr double kDefaultLambda = 1.0;
inline constexpr double kDefaultTau = 0.1;
inline constexpr int kDefaultAnchorBudget = 1024;

/// Mean over non-ignore pixels of -log softmax(logits)[label]. logits are
/// N×K×H×W, labels N×H×W. Returns a [1] tensor.
Tensor cross_entropy(const Tensor& logits, const LabelMap& labels);

/// Per-pixel unit-length embedding: l2_normalize(norm(proj(features))).
Tensor embed(const Tensor& features, const EmbedParams& params);

/// Nearest-neighbour label downsampling by an integer factor (source pixel
/// factor·d + factor/2).
LabelMap downsample_labels(const LabelMap& labels, int factor);

struct AnchorSet {
  std::vector<std::int64_t> pixels;  ///< flat n·h·w + y·w + x indices into the embedding map
  std::vector<int> classes;
  std::vector<bool> hard;
  Tensor embeddings;  ///< A×D rows gathered from the embedding map (differentiable)

  std::size_t size() const { return pixels.size(); }
};

struct AnchorSelection {
  std::vector<std::int64_t> pixels;
  std::vector<int> classes;
  std::vector<bool> hard;
};

/// Per present class, floor(budget / #classes) pixels: half drawn from pixels
/// the prediction gets wrong, half from those it gets right, each pool
/// backfilling the other's shortfall. Deterministic in `seed`.
AnchorSelection select_anchors(const LabelMap& labels, const LabelMap& predictions, int budget, std::uint64_t seed);

/// select_anchors followed by a gather from `embeddings` (N×D×h×w).
AnchorSet sample_anchors(const Tensor& embeddings, const LabelMap& labels, const LabelMap& predictions,
                         int budget = kDefaultAnchorBudget, std::uint64_t seed = 0);

/// Supervised pixel-contrastive loss over the anchor rows. For anchor i with
/// positives P_i and negatives N_i (self excluded),
///
///   L_i = 1/|P_i| sum_{p in P_i} -log( e^{s_ip} / (e^{s_ip} + sum_{n in N_i} e^{s_in}) ),
///
/// s = e_i·e_j / tau. The result is the mean of L_i over anchors with a
/// nonempty P_i.
Tensor contrastive_loss(const Tensor& embeddings, const std::vector<int>& classes, double tau = kDefaultTau);
inline Tensor contrastive_loss(const AnchorSet& anchors, double tau = kDefaultTau) {
  return contrastive_loss(anchors.embeddings, anchors.classes, tau);
}

/// True if some class occurs at least twice.
bool has_positive_pair(const std::vector<int>& classes);

struct LossReport {
  double ce = 0.0;
  double cl = 0.0;
  double total = 0.0;
  double lambda = kDefaultLambda;
  double tau = kDefaultTau;
  Tensor objective;  ///< ce + lambda·cl as a differentiable [1] tensor
};

LossReport total_loss(const Tensor& ce, const Tensor& cl, double lambda = kDefaultLambda, double tau = kDefaultTau);

struct LossConfig {
  double lambda = kDefaultLambda;
  double tau = kDefaultTau;
  int anchor_budget = kDefaultAnchorBudget;
};

/// Full training objective for one batch. The anchor draw is seeded by
/// `seed` unless `fixed_anchors` supplies the selection (used to hold the
/// draw constant under finite-difference probes); batches without any
/// positive pair contribute cl = 0.
LossReport hybrid_loss(const DecodeOutput& output, const LabelMap& labels, const NetworkParams& net,
                       const LossConfig& config, std::uint64_t seed, const AnchorSelection* fixed_anchors = nullptr);

/// Anchor selection hybrid_loss would draw for this output.
AnchorSelection hybrid_anchor_selection(const DecodeOutput& output, const LabelMap& labels, const LossConfig& config,
                                        std::uint64_t seed);

}  // namespace srf
