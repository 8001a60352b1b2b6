#include "srf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <random>

#include "compensated.hpp"

namespace srf {

Tensor cross_entropy(const Tensor& logits, const LabelMap& labels) {
  if (logits.rank() != 4) throw ShapeError("cross_entropy: expected N×K×H×W logits, got " + shape_str(logits.shape()));
  const std::int64_t n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3), hw = h * w;
  if (labels.n != n || labels.h != h || labels.w != w) {
    throw ShapeError("cross_entropy: labels " + shape_str({labels.n, labels.h, labels.w}) + " do not match logits " +
                     shape_str(logits.shape()));
  }
  labels.validate(static_cast<int>(k));
  std::int64_t count = 0;
  for (auto v : labels.values) count += v != kIgnoreLabel;
  if (count == 0) throw EmptyBatchError("cross_entropy: every pixel is ignored");

  auto lab = std::make_shared<std::vector<std::uint8_t>>(labels.values);
  return dispatch(logits.dtype(), [&]<class T>() {
    const auto z = logits.data<T>();
    // Softmax probabilities are kept for the backward pass.
    auto prob = std::make_shared<std::vector<T>>(z.size(), T(0));
    detail::CompensatedSum total;
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t p = 0; p < hw; ++p) {
        const std::uint8_t y = (*lab)[static_cast<std::size_t>(b * hw + p)];
        if (y == kIgnoreLabel) continue;
        const T* zp = z.data() + b * k * hw + p;
        double m = -std::numeric_limits<double>::infinity();
        for (std::int64_t c = 0; c < k; ++c) m = std::max(m, static_cast<double>(zp[c * hw]));
        double s = 0.0;
        for (std::int64_t c = 0; c < k; ++c) s += std::exp(static_cast<double>(zp[c * hw]) - m);
        const double lse = m + std::log(s);
        total.add(lse - static_cast<double>(zp[y * hw]));
        T* pp = prob->data() + b * k * hw + p;
        for (std::int64_t c = 0; c < k; ++c) pp[c * hw] = static_cast<T>(std::exp(static_cast<double>(zp[c * hw]) - lse));
      }
    }
    const double inv = 1.0 / static_cast<double>(count);
    std::vector<T> out{static_cast<T>(total.value() * inv)};
    return make_op_result<T>({1}, std::move(out), {logits}, [prob, lab, n, k, hw, inv](BackwardContext& ctx) {
      const double g = static_cast<double>(ctx.grad_output<T>()[0]) * inv;
      auto gz = ctx.grad_input<T>(0);
      for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t p = 0; p < hw; ++p) {
          const std::uint8_t y = (*lab)[static_cast<std::size_t>(b * hw + p)];
          if (y == kIgnoreLabel) continue;
          const std::int64_t base = b * k * hw + p;
          for (std::int64_t c = 0; c < k; ++c) {
            const double d = static_cast<double>((*prob)[base + c * hw]) - (c == y ? 1.0 : 0.0);
            gz[base + c * hw] += static_cast<T>(g * d);
          }
        }
      }
    });
  });
}

Tensor embed(const Tensor& features, const EmbedParams& params) {
  return l2_normalize(params.norm(params.proj(features)), 1);
}

LabelMap downsample_labels(const LabelMap& labels, int factor) {
  if (factor < 1) throw ConfigError("downsample_labels: factor must be >= 1");
  if (labels.h % factor != 0 || labels.w % factor != 0) {
    throw ShapeError("downsample_labels: extents " + shape_str({labels.h, labels.w}) + " not divisible by " +
                     std::to_string(factor));
  }
  LabelMap out(labels.n, labels.h / factor, labels.w / factor);
  const int off = factor / 2;
  for (std::int64_t b = 0; b < out.n; ++b) {
    for (std::int64_t y = 0; y < out.h; ++y) {
      for (std::int64_t x = 0; x < out.w; ++x) out.at(b, y, x) = labels.at(b, factor * y + off, factor * x + off);
    }
  }
  return out;
}

namespace {

// Partial Fisher-Yates: moves `count` uniformly drawn elements to the front.
void draw_without_replacement(std::vector<std::int64_t>& pool, std::size_t count, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
}

}  // namespace

AnchorSelection select_anchors(const LabelMap& labels, const LabelMap& predictions, int budget, std::uint64_t seed) {
  if (labels.n != predictions.n || labels.h != predictions.h || labels.w != predictions.w) {
    throw ShapeError("select_anchors: label and prediction extents differ");
  }
  if (budget < 1) throw ConfigError("select_anchors: budget must be positive");
  std::map<int, std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>> pools;  // class -> (hard, easy)
  for (std::int64_t i = 0; i < labels.size(); ++i) {
    const std::uint8_t y = labels.values[static_cast<std::size_t>(i)];
    if (y == kIgnoreLabel) continue;
    auto& [hard, easy] = pools[y];
    (predictions.values[static_cast<std::size_t>(i)] != y ? hard : easy).push_back(i);
  }
  if (pools.empty()) throw EmptyBatchError("select_anchors: no labeled pixels");

  const std::size_t per_class = static_cast<std::size_t>(budget) / pools.size();
  std::mt19937_64 rng(seed);
  AnchorSelection sel;
  for (auto& [cls, pool] : pools) {
    auto& [hard, easy] = pool;
    const std::size_t want_hard = per_class / 2;
    const std::size_t want_easy = per_class - want_hard;
    std::size_t n_hard = std::min(want_hard, hard.size());
    std::size_t n_easy = std::min(want_easy, easy.size());
    if (n_hard < want_hard) n_easy = std::min(per_class - n_hard, easy.size());
    if (n_easy < want_easy) n_hard = std::min(per_class - n_easy, hard.size());
    draw_without_replacement(hard, n_hard, rng);
    draw_without_replacement(easy, n_easy, rng);
    for (auto p : hard) {
      sel.pixels.push_back(p);
      sel.classes.push_back(cls);
      sel.hard.push_back(true);
    }
    for (auto p : easy) {
      sel.pixels.push_back(p);
      sel.classes.push_back(cls);
      sel.hard.push_back(false);
    }
  }
  return sel;
}

AnchorSet sample_anchors(const Tensor& embeddings, const LabelMap& labels, const LabelMap& predictions, int budget,
                         std::uint64_t seed) {
  if (embeddings.rank() != 4 || embeddings.dim(0) != labels.n || embeddings.dim(2) != labels.h ||
      embeddings.dim(3) != labels.w) {
    throw ShapeError("sample_anchors: embeddings " + shape_str(embeddings.shape()) + " do not match labels " +
                     shape_str({labels.n, labels.h, labels.w}));
  }
  AnchorSelection sel = select_anchors(labels, predictions, budget, seed);
  AnchorSet set;
  set.embeddings = gather_pixels(embeddings, sel.pixels);
  set.pixels = std::move(sel.pixels);
  set.classes = std::move(sel.classes);
  set.hard = std::move(sel.hard);
  return set;
}

bool has_positive_pair(const std::vector<int>& classes) {
  std::map<int, int> count;
  for (int c : classes) {
    if (++count[c] >= 2) return true;
  }
  return false;
}

namespace {

// Loss over a precomputed similarity matrix s (A×A, already divided by tau).
template <class T>
Tensor contrastive_from_similarity(const Tensor& sim, std::shared_ptr<const std::vector<int>> cls) {
  const std::int64_t a = sim.dim(0);
  const auto s = sim.data<T>();
  const auto& c = *cls;
  std::vector<std::int64_t> positives(static_cast<std::size_t>(a), 0);
  std::int64_t valid = 0;
  for (std::int64_t i = 0; i < a; ++i) {
    for (std::int64_t j = 0; j < a; ++j) positives[i] += (j != i && c[j] == c[i]);
    valid += positives[i] > 0;
  }
  if (valid == 0) throw EmptyBatchError("contrastive_loss: no anchor has a positive");

  // Per row, shifted by m_i: neg_i = sum_n e^{s_in - m_i}.
  auto row_max = std::make_shared<std::vector<double>>(static_cast<std::size_t>(a), 0.0);
  auto neg = std::make_shared<std::vector<double>>(static_cast<std::size_t>(a), 0.0);
  detail::CompensatedSum total;
  for (std::int64_t i = 0; i < a; ++i) {
    if (positives[i] == 0) continue;
    const T* row = s.data() + i * a;
    double m = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < a; ++j) {
      if (j != i) m = std::max(m, static_cast<double>(row[j]));
    }
    double ns = 0.0;
    for (std::int64_t j = 0; j < a; ++j) {
      if (c[j] != c[i]) ns += std::exp(static_cast<double>(row[j]) - m);
    }
    detail::CompensatedSum li;
    for (std::int64_t j = 0; j < a; ++j) {
      if (j == i || c[j] != c[i]) continue;
      const double ep = std::exp(static_cast<double>(row[j]) - m);
      li.add(std::log(ep + ns) - (static_cast<double>(row[j]) - m));
    }
    total.add(li.value() / static_cast<double>(positives[i]));
    (*row_max)[i] = m;
    (*neg)[i] = ns;
  }
  const double inv_valid = 1.0 / static_cast<double>(valid);
  auto pos = std::make_shared<std::vector<std::int64_t>>(std::move(positives));
  std::vector<T> out{static_cast<T>(total.value() * inv_valid)};
  return make_op_result<T>({1}, std::move(out), {sim}, [sim, cls, pos, row_max, neg, a, inv_valid](BackwardContext& ctx) {
    const double g = static_cast<double>(ctx.grad_output<T>()[0]) * inv_valid;
    const auto s = sim.data<T>();
    const auto& c = *cls;
    auto gs = ctx.grad_input<T>(0);
    for (std::int64_t i = 0; i < a; ++i) {
      if ((*pos)[i] == 0) continue;
      const T* row = s.data() + i * a;
      T* grow = gs.data() + i * a;
      const double m = (*row_max)[i], ns = (*neg)[i];
      const double w = g / static_cast<double>((*pos)[i]);
      double inv_den_sum = 0.0;
      for (std::int64_t j = 0; j < a; ++j) {
        if (j == i || c[j] != c[i]) continue;
        const double ep = std::exp(static_cast<double>(row[j]) - m);
        const double den = ep + ns;
        inv_den_sum += 1.0 / den;
        grow[j] += static_cast<T>(w * (ep / den - 1.0));
      }
      for (std::int64_t j = 0; j < a; ++j) {
        if (c[j] == c[i]) continue;
        grow[j] += static_cast<T>(w * std::exp(static_cast<double>(row[j]) - m) * inv_den_sum);
      }
    }
  });
}

}  // namespace

Tensor contrastive_loss(const Tensor& embeddings, const std::vector<int>& classes, double tau) {
  if (!(tau > 0.0)) throw ConfigError("contrastive_loss: tau must be positive");
  if (embeddings.rank() != 2 || embeddings.dim(0) != static_cast<std::int64_t>(classes.size())) {
    throw ShapeError("contrastive_loss: expected " + std::to_string(classes.size()) + "×D embeddings, got " +
                     shape_str(embeddings.shape()));
  }
  if (!has_positive_pair(classes)) throw EmptyBatchError("contrastive_loss: no anchor has a positive");
  const Tensor sim = scale(matmul(embeddings, embeddings, false, true), 1.0 / tau);
  auto cls = std::make_shared<const std::vector<int>>(classes);
  return dispatch(embeddings.dtype(), [&]<class T>() { return contrastive_from_similarity<T>(sim, cls); });
}

LossReport total_loss(const Tensor& ce, const Tensor& cl, double lambda, double tau) {
  LossReport r;
  r.ce = ce.item();
  r.cl = cl.item();
  r.lambda = lambda;
  r.tau = tau;
  r.total = r.ce + lambda * r.cl;
  r.objective = add(ce, scale(cl, lambda));
  return r;
}

namespace {

LabelMap embedding_labels(const DecodeOutput& output, const LabelMap& labels) {
  const std::int64_t fh = output.features.dim(2);
  if (fh <= 0 || labels.h % fh != 0) throw ShapeError("hybrid_loss: label extent is not a multiple of the feature extent");
  return downsample_labels(labels, static_cast<int>(labels.h / fh));
}

bool any_labeled(const LabelMap& labels) {
  for (auto v : labels.values) {
    if (v != kIgnoreLabel) return true;
  }
  return false;
}

}  // namespace

AnchorSelection hybrid_anchor_selection(const DecodeOutput& output, const LabelMap& labels, const LossConfig& config,
                                        std::uint64_t seed) {
  const LabelMap small = embedding_labels(output, labels);
  if (!any_labeled(small)) return {};
  return select_anchors(small, argmax_labels(output.coarse_logits), config.anchor_budget, seed);
}

LossReport hybrid_loss(const DecodeOutput& output, const LabelMap& labels, const NetworkParams& net,
                       const LossConfig& config, std::uint64_t seed, const AnchorSelection* fixed_anchors) {
  const Tensor ce = cross_entropy(output.logits, labels);
  const AnchorSelection sel = fixed_anchors ? *fixed_anchors : hybrid_anchor_selection(output, labels, config, seed);
  Tensor cl;
  if (has_positive_pair(sel.classes)) {
    const Tensor emb = embed(output.features, net.embed);
    cl = contrastive_loss(gather_pixels(emb, sel.pixels), sel.classes, config.tau);
  } else {
    cl = Tensor::zeros({1}, ce.dtype());
  }
  return total_loss(ce, cl, config.lambda, config.tau);
}

}  // namespace srf
