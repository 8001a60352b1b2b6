#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "srf/grad_check.hpp"
#include "srf/losses.hpp"
#include "srf/ops.hpp"
#include "support.hpp"

using namespace srf;
using srf::test::random_normal;

namespace {

std::vector<double> unit_rows(std::mt19937_64& rng, std::size_t rows, std::size_t dim) {
  std::normal_distribution<double> d;
  std::vector<double> v(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += std::pow(v[r * dim + j] = d(rng), 2);
    for (std::size_t j = 0; j < dim; ++j) v[r * dim + j] /= std::sqrt(s);
  }
  return v;
}

double contrastive_oracle(const std::vector<double>& e, std::size_t dim, const std::vector<int>& cls, double tau) {
  const std::size_t a = cls.size();
  auto sim = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s += e[i * dim + k] * e[j * dim + k];
    return s / tau;
  };
  double total = 0.0;
  int valid = 0;
  for (std::size_t i = 0; i < a; ++i) {
    double neg = 0.0;
    int pos = 0;
    for (std::size_t j = 0; j < a; ++j)
      if (cls[j] != cls[i]) neg += std::exp(sim(i, j));
    double li = 0.0;
    for (std::size_t p = 0; p < a; ++p) {
      if (p == i || cls[p] != cls[i]) continue;
      ++pos;
      li += -std::log(std::exp(sim(i, p)) / (std::exp(sim(i, p)) + neg));
    }
    if (pos == 0) continue;
    total += li / pos;
    ++valid;
  }
  return total / valid;
}

}  // namespace

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  for (int k : {2, 5, 19}) {
    LabelMap labels(2, 3, 3, 1);
    EXPECT_NEAR(cross_entropy(Tensor::zeros({2, k, 3, 3}, DType::f64), labels).item(), std::log(k), 1e-9);
  }
}

TEST(CrossEntropy, SaturatedCorrectLogitIsNearZero) {
  std::vector<double> z{40.0, 0.0, 0.0};
  LabelMap labels(1, 1, 1, 0);
  EXPECT_LT(cross_entropy(Tensor::from_values({1, 3, 1, 1}, z, DType::f64), labels).item(), 1e-6);
}

TEST(CrossEntropy, MatchesHandOracle) {
  std::mt19937_64 rng(1);
  const Tensor logits = random_normal(rng, {1, 3, 2, 2});
  LabelMap labels(1, 2, 2);
  labels.values = {0, 2, 1, kIgnoreLabel};
  const auto z = logits.to_vector();
  double s = 0.0;
  for (int p = 0; p < 3; ++p) {
    double e = 0.0;
    for (int c = 0; c < 3; ++c) e += std::exp(z[static_cast<std::size_t>(c * 4 + p)]);
    s += std::log(e) - z[static_cast<std::size_t>(labels.values[static_cast<std::size_t>(p)] * 4 + p)];
  }
  EXPECT_NEAR(cross_entropy(logits, labels).item(), s / 3.0, 1e-10);
}

TEST(CrossEntropy, ShiftInvariantAndIgnoreOnlyThrows) {
  std::mt19937_64 rng(2);
  const Tensor logits = random_normal(rng, {2, 4, 3, 3});
  LabelMap labels(2, 3, 3);
  for (std::size_t i = 0; i < labels.values.size(); ++i) labels.values[i] = static_cast<std::uint8_t>(i % 4);
  EXPECT_NEAR(cross_entropy(add(logits, Tensor::full({1, 1, 1, 1}, 7.5, DType::f64)), labels).item(),
              cross_entropy(logits, labels).item(), 1e-12);
  EXPECT_THROW(cross_entropy(logits, LabelMap(2, 3, 3, kIgnoreLabel)), EmptyBatchError);
  EXPECT_THROW(cross_entropy(logits, LabelMap(2, 3, 4, 0)), ShapeError);
}

TEST(CrossEntropy, GradientsPassFiniteDifferences) {
  PrecisionScope p(DType::f64);
  std::mt19937_64 rng(3);
  LabelMap labels(1, 3, 3);
  labels.values = {0, 1, 2, 2, kIgnoreLabel, 1, 0, 0, 1};
  const auto f = [labels](const std::vector<Tensor>& v) { return cross_entropy(v[0], labels); };
  EXPECT_LT(grad_check(f, {random_normal(rng, {1, 3, 3, 3})}), 1e-4);
}

TEST(Embed, UnitNormRows) {
  EXPECT_EQ(NetworkConfig{}.embedding_dim, 256);
  ParameterSet params(1, DType::f64);
  NetworkConfig cfg;
  const NetworkParams net = make_network_params(params, cfg, Variant{});
  std::mt19937_64 rng(4);
  PrecisionScope p(DType::f64);
  const Tensor e = embed(random_normal(rng, {2, cfg.decoder_width, 3, 4}), net.embed);
  ASSERT_EQ(e.shape(), (Shape{2, 256, 3, 4}));
  const auto v = e.to_vector();
  for (int b = 0; b < 2; ++b)
    for (int px = 0; px < 12; ++px) {
      double s = 0.0;
      for (int c = 0; c < 256; ++c) s += std::pow(v[static_cast<std::size_t>((b * 256 + c) * 12 + px)], 2);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Anchors, AllCorrectGivesOnlyEasyAnchors) {
  LabelMap labels(1, 8, 8, 0);
  for (std::int64_t x = 0; x < 8; ++x) labels.at(0, 0, x) = 1;
  const AnchorSelection sel = select_anchors(labels, labels, 8, 3);
  EXPECT_EQ(sel.pixels.size(), 8u);
  for (bool h : sel.hard) EXPECT_FALSE(h);
  EXPECT_EQ(std::count(sel.classes.begin(), sel.classes.end(), 0), 4);
  EXPECT_EQ(std::count(sel.classes.begin(), sel.classes.end(), 1), 4);
}

TEST(Anchors, SingleClassTakesWholeBudgetWithBackfill) {
  LabelMap labels(1, 6, 6, 2), pred(1, 6, 6, 2);
  pred.at(0, 0, 0) = 0;
  pred.at(0, 5, 5) = 1;
  const AnchorSelection sel = select_anchors(labels, pred, 10, 4);
  ASSERT_EQ(sel.pixels.size(), 10u);
  EXPECT_EQ(std::count(sel.hard.begin(), sel.hard.end(), true), 2);
  for (std::size_t i = 0; i < sel.pixels.size(); ++i) {
    EXPECT_EQ(sel.classes[i], 2);
    const auto p = static_cast<std::size_t>(sel.pixels[i]);
    EXPECT_EQ(sel.hard[i], pred.values[p] != labels.values[p]);
  }
  auto pixels = sel.pixels;
  std::sort(pixels.begin(), pixels.end());
  EXPECT_EQ(std::adjacent_find(pixels.begin(), pixels.end()), pixels.end());
}

TEST(Anchors, DeterministicAndSkipsIgnore) {
  std::mt19937_64 rng(5);
  LabelMap labels(2, 8, 8), pred(2, 8, 8);
  std::uniform_int_distribution<int> d(0, 3);
  for (auto& v : labels.values) v = static_cast<std::uint8_t>(d(rng) == 3 ? kIgnoreLabel : d(rng) % 3);
  for (auto& v : pred.values) v = static_cast<std::uint8_t>(d(rng) % 3);
  const auto a = select_anchors(labels, pred, 30, 9), b = select_anchors(labels, pred, 30, 9);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_NE(a.pixels, select_anchors(labels, pred, 30, 10).pixels);
  for (auto p : a.pixels) EXPECT_NE(labels.values[static_cast<std::size_t>(p)], kIgnoreLabel);
  EXPECT_THROW(select_anchors(LabelMap(1, 2, 2, kIgnoreLabel), LabelMap(1, 2, 2, 0), 4, 0), EmptyBatchError);
}

TEST(Contrastive, SameClassPairWithoutNegativesIsZero) {
  std::mt19937_64 rng(6);
  const auto e = unit_rows(rng, 2, 4);
  EXPECT_NEAR(contrastive_loss(Tensor::from_values({2, 4}, e, DType::f64), {3, 3}).item(), 0.0, 1e-15);
}

TEST(Contrastive, EqualSimilarityGivesLogTwo) {
  std::mt19937_64 rng(7);
  auto e = unit_rows(rng, 1, 4);
  std::vector<double> rows;
  for (int i = 0; i < 3; ++i) rows.insert(rows.end(), e.begin(), e.end());
  EXPECT_NEAR(contrastive_loss(Tensor::from_values({3, 4}, rows, DType::f64), {0, 0, 1}).item(), std::log(2.0), 1e-12);
}

TEST(Contrastive, MatchesOracleAndIsPermutationInvariant) {
  std::mt19937_64 rng(8);
  const std::vector<int> cls{0, 1, 0, 2, 1};
  const auto e = unit_rows(rng, 5, 6);
  const double expect = contrastive_oracle(e, 6, cls, 0.1);
  EXPECT_NEAR(contrastive_loss(Tensor::from_values({5, 6}, e, DType::f64), cls, 0.1).item(), expect, 1e-10);
  const std::vector<std::size_t> perm{3, 0, 4, 2, 1};
  std::vector<double> pe;
  std::vector<int> pc;
  for (auto r : perm) {
    pe.insert(pe.end(), e.begin() + static_cast<long>(r * 6), e.begin() + static_cast<long>(r * 6 + 6));
    pc.push_back(cls[r]);
  }
  EXPECT_NEAR(contrastive_loss(Tensor::from_values({5, 6}, pe, DType::f64), pc, 0.1).item(), expect, 1e-12);
}

TEST(Contrastive, NonNegativeOverRandomDraws) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> d(0, 3);
  for (int t = 0; t < 50; ++t) {
    std::vector<int> cls{0, 0};
    for (int i = 0; i < 8; ++i) cls.push_back(d(rng));
    const auto e = unit_rows(rng, cls.size(), 5);
    const double tau = 0.05 + 0.5 * std::uniform_real_distribution<double>()(rng);
    const double l = contrastive_loss(Tensor::from_values({static_cast<std::int64_t>(cls.size()), 5}, e, DType::f64), cls, tau).item();
    EXPECT_GE(l, 0.0);
    EXPECT_NEAR(l, contrastive_oracle(e, 5, cls, tau), 1e-9);
  }
}

TEST(Contrastive, RejectsBatchesWithoutPositives) {
  EXPECT_THROW(contrastive_loss(Tensor::zeros({3, 4}, DType::f64), {0, 1, 2}), EmptyBatchError);
  EXPECT_THROW(contrastive_loss(Tensor::zeros({2, 4}, DType::f64), {0, 0}, 0.0), ConfigError);
  EXPECT_FALSE(has_positive_pair({0, 1, 2}));
  EXPECT_TRUE(has_positive_pair({0, 1, 0}));
}

TEST(Contrastive, GradientsPassFiniteDifferences) {
  PrecisionScope p(DType::f64);
  std::mt19937_64 rng(10);
  const std::vector<int> cls{0, 1, 0, 2, 1, 1};
  const auto f = [cls](const std::vector<Tensor>& v) { return contrastive_loss(l2_normalize(v[0], 1), cls, 0.1); };
  EXPECT_LT(grad_check(f, {random_normal(rng, {6, 5})}), 1e-4);
}

TEST(TotalLoss, CombinesTermsAndEchoesHyperparameters) {
  const Tensor ce = Tensor::full({1}, 1.5, DType::f64), cl = Tensor::full({1}, 0.25, DType::f64);
  const LossReport d = total_loss(ce, cl);
  EXPECT_EQ(d.lambda, 1.0);
  EXPECT_EQ(d.tau, 0.1);
  EXPECT_DOUBLE_EQ(d.total, 1.75);
  EXPECT_DOUBLE_EQ(d.objective.item(), 1.75);
  EXPECT_EQ(total_loss(ce, cl, 0.0).total, 1.5);
  EXPECT_EQ(total_loss(ce, Tensor::zeros({1}, DType::f64), 3.0).total, 1.5);
  const LossReport r = total_loss(ce, cl, 0.5, 0.2);
  EXPECT_EQ(r.ce, 1.5);
  EXPECT_EQ(r.cl, 0.25);
  EXPECT_EQ(r.tau, 0.2);
  EXPECT_DOUBLE_EQ(r.total, 1.625);
}

TEST(HybridLoss, SingleAnchorPerClassLeavesContrastiveAtZero) {
  NetworkConfig cfg;
  cfg.num_classes = 3;
  cfg.stage_widths = {8, 12, 16, 24};
  cfg.decoder_width = 16;
  cfg.embedding_dim = 8;
  cfg.blocks_per_stage = 0;
  cfg.srm_hidden = 4;
  SegNet net(cfg, Variant{}, 2, DType::f64);
  PrecisionScope p(DType::f64);
  std::mt19937_64 rng(11);
  const Tensor image = random_normal(rng, {1, 3, 32, 32});
  const DecodeOutput out = net.forward(image);
  LabelMap labels(1, 32, 32, 1);
  LossConfig lc;
  lc.anchor_budget = 1;
  const LossReport r = hybrid_loss(out, labels, net.handles(), lc, 0);
  EXPECT_EQ(r.cl, 0.0);
  EXPECT_NEAR(r.total, r.ce, 0.0);
  EXPECT_NEAR(r.ce, cross_entropy(out.logits, labels).item(), 1e-12);
}
