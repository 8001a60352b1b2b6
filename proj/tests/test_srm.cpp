#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "srf/grad_check.hpp"
#include "srf/grid_sampler.hpp"
#include "srf/ops.hpp"
#include "srf/srm.hpp"
#include "support.hpp"

using namespace srf;
using srf::test::random_normal;

namespace {

Tensor random_mask(std::mt19937_64& rng, std::int64_t n, std::int64_t h, std::int64_t w) {
  return softmax(random_normal(rng, {n, kMaskNeighbors, h, w}, 2.0), 1);
}

// Per-pixel 9-term sum with edge replication.
std::vector<double> refine_oracle(const Tensor& initial, const Tensor& mask) {
  const auto n = initial.dim(0), h = initial.dim(2), w = initial.dim(3);
  const auto d = initial.to_vector(), m = mask.to_vector();
  std::vector<double> out(d.size(), 0.0);
  for (std::int64_t b = 0; b < n; ++b)
    for (int ch = 0; ch < 2; ++ch)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          double s = 0.0;
          for (int k = 0; k < 9; ++k) {
            const auto ny = std::clamp<std::int64_t>(y + k / 3 - 1, 0, h - 1);
            const auto nx = std::clamp<std::int64_t>(x + k % 3 - 1, 0, w - 1);
            s += d[static_cast<std::size_t>(((b * 2 + ch) * h + ny) * w + nx)] *
                 m[static_cast<std::size_t>(((b * 9 + k) * h + y) * w + x)];
          }
          out[static_cast<std::size_t>(((b * 2 + ch) * h + y) * w + x)] = s;
        }
  return out;
}

void randomize_outputs(ParameterSet& params, const std::string& prefix) {
  params.reinitialize(prefix + ".offset.out.weight", Init::uniform_fan_in, 3, 1.0);
  params.reinitialize(prefix + ".offset.out.bias", Init::ones, 3, 0.5);
  params.reinitialize(prefix + ".mask.out.weight", Init::uniform_fan_in, 3, 1.0);
  params.reinitialize(prefix + ".mask.out.bias", Init::uniform_fan_in, 3, 1.0);
}

}  // namespace

TEST(Srm, OutputLayersStartAtZero) {
  ParameterSet params(1, DType::f64);
  make_srm_params(params, "s", SrmConfig{8, 6, 8, 8}, true);
  const auto names = srm_output_layer_names("s");
  EXPECT_EQ(names.size(), 4u);
  for (const auto& name : names) {
    for (double v : params.get(name).value.to_vector()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Srm, PredictionShapesAndZeroInit) {
  PrecisionScope p(DType::f64);
  std::mt19937_64 rng(1);
  ParameterSet params(2, DType::f64);
  const SrmParams srm = make_srm_params(params, "s", SrmConfig{32, 16, 16, 16}, true);
  const Tensor g = random_normal(rng, {1, 32, 8, 8}), f = random_normal(rng, {1, 16, 16, 16});
  const auto pred = predict_offset_and_mask(g, f, srm);
  EXPECT_EQ(pred.initial_offsets.shape(), (Shape{1, 2, 16, 16}));
  EXPECT_EQ(pred.mask.shape(), (Shape{1, 9, 16, 16}));
  for (double v : pred.initial_offsets.to_vector()) EXPECT_EQ(v, 0.0);
  for (double v : pred.mask.to_vector()) EXPECT_NEAR(v, 1.0 / 9.0, 1e-15);
}

TEST(Srm, PredictionIsDeterministic) {
  PrecisionScope p(DType::f64);
  std::mt19937_64 rng(2);
  ParameterSet params(3, DType::f64);
  const SrmParams srm = make_srm_params(params, "s", SrmConfig{8, 6, 8, 8}, true);
  randomize_outputs(params, "s");
  const Tensor g = random_normal(rng, {1, 8, 4, 4}), f = random_normal(rng, {1, 6, 8, 8});
  const auto a = predict_offset_and_mask(g, f, srm), b = predict_offset_and_mask(g, f, srm);
  EXPECT_EQ(a.initial_offsets.to_vector(), b.initial_offsets.to_vector());
  EXPECT_EQ(a.mask.to_vector(), b.mask.to_vector());
  const auto mv = a.mask.to_vector();
  for (std::int64_t px = 0; px < 64; ++px) {
    double s = 0;
    for (int k = 0; k < 9; ++k) {
      EXPECT_GE(mv[static_cast<std::size_t>(k * 64 + px)], 0.0);
      s += mv[static_cast<std::size_t>(k * 64 + px)];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Srm, ResolutionRatioMustBeTwo) {
  PrecisionScope p(DType::f64);
  ParameterSet params(3, DType::f64);
  const SrmParams srm = make_srm_params(params, "s", SrmConfig{8, 6, 8, 8}, true);
  EXPECT_THROW(predict_offset_and_mask(Tensor::zeros({1, 8, 4, 4}), Tensor::zeros({1, 6, 4, 4}), srm), ShapeError);
  EXPECT_THROW(srm_forward(Tensor::zeros({1, 8, 4, 4}), Tensor::zeros({1, 6, 12, 12}), srm), ShapeError);
}

TEST(RefineOffsets, CenterOneHotIsIdentity) {
  std::mt19937_64 rng(4);
  const Tensor initial = random_normal(rng, {2, 2, 5, 4});
  std::vector<double> m(static_cast<std::size_t>(2 * 9 * 20), 0.0);
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 20; ++i) m[static_cast<std::size_t>((b * 9 + 4) * 20 + i)] = 1.0;
  EXPECT_EQ(refine_offsets(initial, Tensor::from_values({2, 9, 5, 4}, m, DType::f64)).to_vector(), initial.to_vector());
}

TEST(RefineOffsets, ConstantOffsetsStayConstant) {
  std::mt19937_64 rng(5);
  const Tensor initial = Tensor::full({1, 2, 4, 6}, 0.625, DType::f64);
  for (double v : refine_offsets(initial, random_mask(rng, 1, 4, 6)).to_vector()) EXPECT_NEAR(v, 0.625, 1e-15);
}

TEST(RefineOffsets, MatchesNeighbourLoopOracle) {
  std::mt19937_64 rng(6);
  const Tensor initial = random_normal(rng, {1, 2, 5, 5});
  const Tensor mask = random_mask(rng, 1, 5, 5);
  EXPECT_LT(test::max_abs_diff(refine_offsets(initial, mask).to_vector(), refine_oracle(initial, mask)), 1e-12);
}

TEST(RefineOffsets, OracleSweep) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> ext(1, 6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t n = 1 + trial % 2, h = ext(rng), w = ext(rng);
    const Tensor initial = random_normal(rng, {n, 2, h, w}, 2.0);
    const Tensor mask = random_mask(rng, n, h, w);
    EXPECT_LT(test::max_abs_diff(refine_offsets(initial, mask).to_vector(), refine_oracle(initial, mask)), 1e-12)
        << "trial " << trial;
  }
}

TEST(RefineOffsets, UniformMaskIsBoxFilter) {
  std::mt19937_64 rng(8);
  const std::int64_t h = 4, w = 5;
  const Tensor initial = random_normal(rng, {1, 2, h, w});
  const auto d = initial.to_vector();
  const auto out = refine_offsets(initial, Tensor::full({1, 9, h, w}, 1.0 / 9.0, DType::f64)).to_vector();
  for (int ch = 0; ch < 2; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        double box = 0;
        for (std::int64_t dy = -1; dy <= 1; ++dy)
          for (std::int64_t dx = -1; dx <= 1; ++dx) {
            box += d[static_cast<std::size_t>((ch * h + std::clamp<std::int64_t>(y + dy, 0, h - 1)) * w +
                                              std::clamp<std::int64_t>(x + dx, 0, w - 1))];
          }
        EXPECT_NEAR(out[static_cast<std::size_t>((ch * h + y) * w + x)], box / 9.0, 1e-14);
      }
}

TEST(RefineOffsets, BoundedByNeighbourExtremes) {
  std::mt19937_64 rng(9);
  const std::int64_t h = 6, w = 6;
  const Tensor initial = random_normal(rng, {1, 2, h, w});
  const auto d = initial.to_vector();
  const auto out = refine_offsets(initial, random_mask(rng, 1, h, w)).to_vector();
  for (int ch = 0; ch < 2; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::int64_t dy = -1; dy <= 1; ++dy)
          for (std::int64_t dx = -1; dx <= 1; ++dx) {
            const double v = d[static_cast<std::size_t>((ch * h + std::clamp<std::int64_t>(y + dy, 0, h - 1)) * w +
                                                        std::clamp<std::int64_t>(x + dx, 0, w - 1))];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
        const double v = out[static_cast<std::size_t>((ch * h + y) * w + x)];
        EXPECT_GE(v, lo - 1e-12);
        EXPECT_LE(v, hi + 1e-12);
      }
}

TEST(RefineOffsets, MaskChannelCountChecked) {
  EXPECT_THROW(refine_offsets(Tensor::zeros({1, 2, 3, 3}, DType::f64), Tensor::zeros({1, 8, 3, 3}, DType::f64)), ShapeError);
}

TEST(SrmForward, ZeroInitEqualsBilinearStep) {
  PrecisionScope p(DType::f64);
  std::mt19937_64 rng(10);
  ParameterSet aligned_params(11, DType::f64), plain_params(11, DType::f64);
  const SrmConfig cfg{8, 6, 8, 8};
  const SrmParams aligned = make_srm_params(aligned_params, "s", cfg, true);
  const SrmParams plain = make_srm_params(plain_params, "s", cfg, false);
  const Tensor g = random_normal(rng, {2, 8, 4, 4}), f = random_normal(rng, {2, 6, 8, 8});
  EXPECT_EQ(srm_forward(g, f, aligned).to_vector(), srm_forward(g, f, plain).to_vector());
}

TEST(SrmForward, ZeroLateralLeavesAlignedFeature) {
  PrecisionScope p(DType::f64);
  std::mt19937_64 rng(11);
  ParameterSet params(12, DType::f64);
  const SrmParams srm = make_srm_params(params, "s", SrmConfig{8, 6, 8, 8}, true);
  randomize_outputs(params, "s");
  const Tensor g = random_normal(rng, {1, 8, 4, 4}), f = Tensor::zeros({1, 6, 8, 8}, DType::f64);
  const auto pred = predict_offset_and_mask(g, f, srm);
  const Tensor aligned = sample_with_offsets(srm.compress_high(bilinear_upsample(g, 2)), refine_offsets(pred.initial_offsets, pred.mask));
  EXPECT_LT(test::max_abs_diff(srm_forward(g, f, srm), aligned), 1e-14);
}

TEST(SrmForward, GradientCheckSmall) {
  PrecisionScope p(DType::f64);
  std::mt19937_64 rng(12);
  ParameterSet params(13, DType::f64);
  const SrmParams srm = make_srm_params(params, "s", SrmConfig{8, 8, 8, 8}, true);
  randomize_outputs(params, "s");
  const Tensor g = random_normal(rng, {1, 8, 4, 4}), f = random_normal(rng, {1, 8, 8, 8});
  const Tensor w = random_normal(rng, {1, 8, 8, 8});
  std::vector<Tensor> inputs{g, f};
  for (const auto& [name, param] : params) inputs.push_back(param.value);
  GradCheckOptions o;
  o.max_elements_per_input = 40;
  o.seed = 1;
  const auto report = grad_check_report(
      [&srm, w](const std::vector<Tensor>& v) { return sum(mul(srm_forward(v[0], v[1], srm), w)); }, inputs, o);
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(SrmForward, GradientCheckSummedOutput) {
  PrecisionScope p(DType::f64);
  std::mt19937_64 rng(14);
  ParameterSet params(15, DType::f64);
  const SrmParams srm = make_srm_params(params, "s", SrmConfig{8, 8, 8, 8}, true);
  randomize_outputs(params, "s");
  const Tensor g = random_normal(rng, {1, 8, 3, 3}), f = random_normal(rng, {1, 8, 6, 6});
  const auto report = grad_check_report([&srm](const std::vector<Tensor>& v) { return sum(srm_forward(v[0], v[1], srm)); }, {g, f});
  EXPECT_LT(report.max_rel_error, 1e-4);
}
