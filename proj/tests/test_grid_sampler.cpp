#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "srf/grad_check.hpp"
#include "srf/grid_sampler.hpp"
#include "srf/ops.hpp"
#include "support.hpp"

using namespace srf;
using srf::test::random_normal;
using srf::test::random_uniform;

namespace {

// Full-grid sum over every (m, n) of the map.
std::vector<double> sampling_oracle(const Tensor& input, const Tensor& offsets) {
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const auto x = input.to_vector(), o = offsets.to_vector();
  std::vector<double> out(x.size(), 0.0);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t yi = 0; yi < h; ++yi)
        for (std::int64_t xi = 0; xi < w; ++xi) {
          const double dx = o[static_cast<std::size_t>(((b * 2 + 0) * h + yi) * w + xi)];
          const double dy = o[static_cast<std::size_t>(((b * 2 + 1) * h + yi) * w + xi)];
          double s = 0.0;
          for (std::int64_t nn = 0; nn < h; ++nn)
            for (std::int64_t m = 0; m < w; ++m) {
              const double wx = std::max(0.0, 1.0 - std::abs(static_cast<double>(xi) + dx - static_cast<double>(m)));
              const double wy = std::max(0.0, 1.0 - std::abs(static_cast<double>(yi) + dy - static_cast<double>(nn)));
              s += x[static_cast<std::size_t>(((b * c + ch) * h + nn) * w + m)] * wx * wy;
            }
          out[static_cast<std::size_t>(((b * c + ch) * h + yi) * w + xi)] = s;
        }
  return out;
}

double upsample_oracle(const std::vector<double>& src, std::int64_t h, std::int64_t w, int factor, std::int64_t y,
                       std::int64_t x) {
  auto coord = [factor](std::int64_t d, std::int64_t extent, std::int64_t& lo, std::int64_t& hi, double& frac) {
    double s = (static_cast<double>(d) + 0.5) / factor - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(extent - 1));
    lo = static_cast<std::int64_t>(std::floor(s));
    hi = std::min(lo + 1, extent - 1);
    frac = s - static_cast<double>(lo);
  };
  std::int64_t y0, y1, x0, x1;
  double fy, fx;
  coord(y, h, y0, y1, fy);
  coord(x, w, x0, x1, fx);
  auto at = [&](std::int64_t yy, std::int64_t xx) { return src[static_cast<std::size_t>(yy * w + xx)]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

}  // namespace

TEST(BilinearUpsample, FactorOneIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor x = random_normal(rng, {2, 3, 4, 5});
  EXPECT_EQ(bilinear_upsample(x, 1).to_vector(), x.to_vector());
  EXPECT_THROW(bilinear_upsample(x, 0), ConfigError);
}

TEST(BilinearUpsample, ConstantPreserved) {
  for (int f : {2, 3, 4}) {
    for (double v : bilinear_upsample(Tensor::full({1, 2, 3, 3}, -1.25, DType::f64), f).to_vector()) EXPECT_DOUBLE_EQ(v, -1.25);
  }
}

TEST(BilinearUpsample, TwoByTwoMatchesClosedForm) {
  const std::vector<double> src{1, 2, 3, 4};
  const auto out = bilinear_upsample(Tensor::from_values({1, 1, 2, 2}, src, DType::f64), 2).to_vector();
  ASSERT_EQ(out.size(), 16u);
  for (std::int64_t y = 0; y < 4; ++y)
    for (std::int64_t x = 0; x < 4; ++x) EXPECT_NEAR(out[static_cast<std::size_t>(y * 4 + x)], upsample_oracle(src, 2, 2, 2, y, x), 1e-15);
  // Interior points sit a quarter pixel from the source centres.
  EXPECT_DOUBLE_EQ(out[5], 1.75);
}

TEST(BilinearUpsample, RandomMatchesClosedFormAndStaysInRange) {
  std::mt19937_64 rng(2);
  for (int factor : {2, 4}) {
    const Tensor x = random_normal(rng, {1, 1, 3, 5});
    const auto src = x.to_vector();
    const auto out = bilinear_upsample(x, factor).to_vector();
    const auto [lo, hi] = std::minmax_element(src.begin(), src.end());
    for (std::int64_t y = 0; y < 3 * factor; ++y)
      for (std::int64_t xx = 0; xx < 5 * factor; ++xx) {
        const double v = out[static_cast<std::size_t>(y * 5 * factor + xx)];
        EXPECT_NEAR(v, upsample_oracle(src, 3, 5, factor, y, xx), 1e-14);
        EXPECT_GE(v, *lo - 1e-15);
        EXPECT_LE(v, *hi + 1e-15);
      }
  }
}

TEST(SampleWithOffsets, ZeroOffsetsReproduceInputBitExact) {
  std::mt19937_64 rng(3);
  const Tensor x = random_normal(rng, {2, 3, 5, 4});
  const Tensor zero = Tensor::zeros({2, 2, 5, 4}, DType::f64);
  const auto a = sample_with_offsets(x, zero).to_vector(), b = x.to_vector();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(std::bit_cast<std::uint64_t>(a[i]), std::bit_cast<std::uint64_t>(b[i]));
}

TEST(SampleWithOffsets, FarOutsidePointIsZero) {
  std::mt19937_64 rng(4);
  const Tensor x = random_normal(rng, {1, 2, 3, 3});
  std::vector<double> off(18, 0.0);
  off[0] = -2.0;  // pixel (0, 0) samples at (-2, -2)
  off[9] = -2.0;
  const auto y = sample_with_offsets(x, Tensor::from_values({1, 2, 3, 3}, off, DType::f64)).to_vector();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[9], 0.0);
}

TEST(SampleWithOffsets, MatchesFullGridOracle) {
  std::mt19937_64 rng(5);
  const Tensor x = random_normal(rng, {1, 3, 4, 4});
  const Tensor off = random_uniform(rng, {1, 2, 4, 4}, -1.5, 1.5);
  EXPECT_LT(test::max_abs_diff(sample_with_offsets(x, off).to_vector(), sampling_oracle(x, off)), 1e-12);
}

TEST(SampleWithOffsets, OracleSweepSmallExtents) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> ext(1, 5);
  std::uniform_int_distribution<int> coin(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t n = ext(rng) > 3 ? 2 : 1, c = ext(rng), h = ext(rng), w = ext(rng);
    const Tensor x = random_normal(rng, {n, c, h, w});
    Tensor off = random_uniform(rng, {n, 2, h, w}, -3.0, 3.0);
    if (coin(rng) == 0) {
      // Integer and half-integer displacements hit cell edges exactly.
      auto d = off.mutable_data<double>();
      for (auto& v : d) v = std::round(v * 2.0) / 2.0;
    }
    EXPECT_LT(test::max_abs_diff(sample_with_offsets(x, off).to_vector(), sampling_oracle(x, off)), 1e-12) << "trial " << trial;
  }
}

TEST(SampleWithOffsets, ConvexInsideGrid) {
  std::mt19937_64 rng(7);
  const std::int64_t h = 5, w = 5;
  const Tensor x = random_normal(rng, {1, 1, h, w});
  const Tensor off = random_uniform(rng, {1, 2, h, w}, -1.0, 1.0);
  const auto xv = x.to_vector(), ov = off.to_vector(), y = sample_with_offsets(x, off).to_vector();
  for (std::int64_t yi = 0; yi < h; ++yi)
    for (std::int64_t xi = 0; xi < w; ++xi) {
      const double sx = static_cast<double>(xi) + ov[static_cast<std::size_t>(yi * w + xi)];
      const double sy = static_cast<double>(yi) + ov[static_cast<std::size_t>(h * w + yi * w + xi)];
      if (sx < 0 || sy < 0 || sx > w - 1 || sy > h - 1) continue;
      const auto x0 = static_cast<std::int64_t>(std::floor(sx)), y0 = static_cast<std::int64_t>(std::floor(sy));
      const auto x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double corners[4] = {xv[static_cast<std::size_t>(y0 * w + x0)], xv[static_cast<std::size_t>(y0 * w + x1)],
                                 xv[static_cast<std::size_t>(y1 * w + x0)], xv[static_cast<std::size_t>(y1 * w + x1)]};
      const double v = y[static_cast<std::size_t>(yi * w + xi)];
      EXPECT_GE(v, *std::min_element(corners, corners + 4) - 1e-12);
      EXPECT_LE(v, *std::max_element(corners, corners + 4) + 1e-12);
    }
}

TEST(SampleWithOffsets, ShapeErrors) {
  const Tensor x = Tensor::zeros({1, 3, 4, 4}, DType::f64);
  EXPECT_THROW(sample_with_offsets(x, Tensor::zeros({1, 3, 4, 4}, DType::f64)), ShapeError);
  EXPECT_THROW(sample_with_offsets(x, Tensor::zeros({1, 2, 4, 3}, DType::f64)), ShapeError);
}

TEST(SampleWithOffsets, GradientsPassFiniteDifferences) {
  PrecisionScope p(DType::f64);
  std::mt19937_64 rng(8);
  const Tensor x = random_normal(rng, {1, 3, 4, 4});
  const Tensor off = random_uniform(rng, {1, 2, 4, 4}, -1.5, 1.5);
  const Tensor w = random_normal(rng, {1, 3, 4, 4});
  const auto f = [w](const std::vector<Tensor>& v) { return sum(mul(sample_with_offsets(v[0], v[1]), w)); };
  EXPECT_LT(grad_check(f, {x, off}), 1e-4);
}

TEST(BilinearUpsample, GradientsPassFiniteDifferences) {
  PrecisionScope p(DType::f64);
  std::mt19937_64 rng(9);
  const Tensor x = random_normal(rng, {1, 2, 3, 3});
  const Tensor w = random_normal(rng, {1, 2, 6, 6});
  const auto f = [w](const std::vector<Tensor>& v) { return sum(mul(bilinear_upsample(v[0], 2), w)); };
  EXPECT_LT(grad_check(f, {x}), 1e-4);
}
