#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "srf/checkpoint.hpp"
#include "srf/grad_check.hpp"
#include "srf/label_map.hpp"
#include "srf/losses.hpp"
#include "srf/ops.hpp"
#include "srf/parameters.hpp"
#include "support.hpp"

using namespace srf;
using srf::test::max_abs_diff;
using srf::test::random_normal;

namespace {

// Direct nested-loop cross-correlation.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad, int groups) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto co = w.dim(0), k = w.dim(2);
  const auto cig = c / groups, cog = co / groups;
  const auto oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  const auto xv = x.to_vector(), wv = w.to_vector();
  const auto bv = b.defined() ? b.to_vector() : std::vector<double>(static_cast<std::size_t>(co), 0.0);
  std::vector<double> out(static_cast<std::size_t>(n * co * oh * ow));
  for (std::int64_t bi = 0; bi < n; ++bi)
    for (std::int64_t o = 0; o < co; ++o)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          double s = bv[static_cast<std::size_t>(o)];
          const auto g = o / cog;
          for (std::int64_t ci = 0; ci < cig; ++ci)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const auto iy = y * stride + ky - pad, ix = xx * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                const auto ch = g * cig + ci;
                s += wv[static_cast<std::size_t>(((o * cig + ci) * k + ky) * k + kx)] *
                     xv[static_cast<std::size_t>(((bi * c + ch) * h + iy) * wd + ix)];
              }
          out[static_cast<std::size_t>(((bi * co + o) * oh + y) * ow + xx)] = s;
        }
  return out;
}

}  // namespace

TEST(Tensor, ShapeAndValues) {
  const Tensor t = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, DType::f64);
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.rank(), 2);
  EXPECT_EQ(t.dim(-1), 3);
  EXPECT_DOUBLE_EQ(t.at(4), 5.0);
  EXPECT_THROW(Tensor::from_values({2, 2}, {1, 2, 3}, DType::f64), ShapeError);
  EXPECT_THROW(Tensor::zeros({2, 0}), ShapeError);
  EXPECT_THROW(Tensor::zeros({1, 1, 1, 1, 1}), ShapeError);
}

TEST(Tensor, PrecisionScopeSwitchesDefault) {
  EXPECT_EQ(default_dtype(), DType::f32);
  {
    PrecisionScope p(DType::f64);
    EXPECT_EQ(Tensor::zeros({2}).dtype(), DType::f64);
  }
  EXPECT_EQ(Tensor::zeros({2}).dtype(), DType::f32);
}

TEST(Tensor, MixedDtypeRejected) {
  const Tensor a = Tensor::zeros({2}, DType::f32), b = Tensor::zeros({2}, DType::f64);
  EXPECT_THROW(add(a, b), DTypeError);
}

TEST(Ops, BroadcastAddMul) {
  std::mt19937_64 rng(1);
  const Tensor a = random_normal(rng, {2, 3, 4}), b = random_normal(rng, {1, 3, 1});
  const auto av = a.to_vector(), bv = b.to_vector();
  const auto sum = add(a, b).to_vector(), prod = mul(a, b).to_vector(), diff = sub(a, b).to_vector();
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k) {
        const auto idx = static_cast<std::size_t>((i * 3 + j) * 4 + k);
        EXPECT_DOUBLE_EQ(sum[idx], av[idx] + bv[static_cast<std::size_t>(j)]);
        EXPECT_DOUBLE_EQ(prod[idx], av[idx] * bv[static_cast<std::size_t>(j)]);
        EXPECT_DOUBLE_EQ(diff[idx], av[idx] - bv[static_cast<std::size_t>(j)]);
      }
  EXPECT_THROW(add(a, random_normal(rng, {2, 2, 4})), ShapeError);
}

TEST(Ops, Conv2dIdentityAndZero) {
  std::mt19937_64 rng(2);
  const Tensor x = random_normal(rng, {2, 3, 4, 5});
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[static_cast<std::size_t>(i * 3 + i)] = 1.0;
  const Tensor w = Tensor::from_values({3, 3, 1, 1}, eye, DType::f64);
  EXPECT_EQ(conv2d(x, w, Tensor::zeros({3}, DType::f64)).to_vector(), x.to_vector());
  const Tensor z = conv2d(x, Tensor::zeros({4, 3, 3, 3}, DType::f64), Tensor::zeros({4}, DType::f64), 1, 1);
  for (double v : z.to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(Ops, Conv2dMatchesNestedLoopOracle) {
  std::mt19937_64 rng(3);
  const Tensor x = random_normal(rng, {1, 3, 5, 5}), w = random_normal(rng, {4, 3, 3, 3}), b = random_normal(rng, {4});
  EXPECT_LT(max_abs_diff(conv2d(x, w, b, 1, 1).to_vector(), conv_oracle(x, w, b, 1, 1, 1)), 1e-12);
}

TEST(Ops, Conv2dOracleSweep) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> ext(1, 8);
  for (int trial = 0; trial < 60; ++trial) {
    const int groups = std::vector<int>{1, 2, 4}[static_cast<std::size_t>(trial % 3)];
    const std::int64_t cin = groups * (1 + trial % 2), cout = groups * (1 + (trial / 2) % 2);
    const int k = std::vector<int>{1, 3}[static_cast<std::size_t>((trial / 3) % 2)];
    const int stride = 1 + (trial / 6) % 2, pad = (trial / 12) % 2;
    const std::int64_t h = std::max(ext(rng), k), wd = std::max(ext(rng), k);
    const Tensor x = random_normal(rng, {2, cin, h, wd});
    const Tensor w = random_normal(rng, {cout, cin / groups, k, k});
    const Tensor b = trial % 2 ? random_normal(rng, {cout}) : Tensor{};
    const Tensor y = conv2d(x, w, b, stride, pad, groups);
    EXPECT_EQ(y.dim(2), (h + 2 * pad - k) / stride + 1);
    EXPECT_EQ(y.dim(3), (wd + 2 * pad - k) / stride + 1);
    EXPECT_LT(max_abs_diff(y.to_vector(), conv_oracle(x, w, b, stride, pad, groups)), 1e-12) << "trial " << trial;
  }
}

TEST(Ops, Conv2dErrors) {
  const Tensor x = Tensor::zeros({1, 4, 4, 4}, DType::f64);
  try {
    conv2d(x, Tensor::zeros({2, 3, 3, 3}, DType::f64));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3x3x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("1x4x4x4"), std::string::npos) << msg;
  }
  EXPECT_THROW(conv2d(x, Tensor::zeros({3, 4, 1, 1}, DType::f64), {}, 1, 0, 3), ConfigError);
  EXPECT_THROW(conv2d(x, Tensor::zeros({4, 4, 1, 1}, DType::f64), {}, 1, -1), ConfigError);
}

TEST(Ops, SoftmaxExamples) {
  const auto half = softmax(Tensor::from_values({2}, {0, 0}, DType::f64), 0).to_vector();
  EXPECT_DOUBLE_EQ(half[0], 0.5);
  EXPECT_DOUBLE_EQ(half[1], 0.5);
  const auto sat = softmax(Tensor::from_values({2}, {3.0, -1e30}, DType::f64), 0).to_vector();
  EXPECT_NEAR(sat[0], 1.0, 1e-9);
  EXPECT_NEAR(sat[1], 0.0, 1e-9);
  const auto v = softmax(Tensor::from_values({3}, {1, 2, 3}, DType::f64), 0).to_vector();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(v[static_cast<std::size_t>(i)], std::exp(i + 1.0) / z, 1e-15);
  EXPECT_THROW(softmax(Tensor::zeros({2, 2}), 2), ShapeError);
}

TEST(Ops, SoftmaxSumsToOneAndIsShiftInvariant) {
  std::mt19937_64 rng(5);
  for (int axis = 0; axis < 3; ++axis) {
    const Tensor x = random_normal(rng, {3, 4, 5}, 3.0, DType::f32);
    const Tensor shifted = add(x, Tensor::full({1, 1, 1}, 7.5, DType::f32));
    const auto s = softmax(x, axis).to_vector(), t = softmax(shifted, axis).to_vector();
    EXPECT_LT(max_abs_diff(s, t), 1e-6);
    const std::array<std::int64_t, 3> ext{3, 4, 5};
    const std::array<std::int64_t, 3> stride{20, 5, 1};
    for (std::int64_t i = 0; i < 60; ++i) {
      if ((i / stride[static_cast<std::size_t>(axis)]) % ext[static_cast<std::size_t>(axis)] != 0) continue;
      double sum = 0;
      for (std::int64_t k = 0; k < ext[static_cast<std::size_t>(axis)]; ++k) {
        const double p = s[static_cast<std::size_t>(i + k * stride[static_cast<std::size_t>(axis)])];
        EXPECT_GT(p, 0.0);
        EXPECT_LT(p, 1.0);
        sum += p;
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Ops, SigmoidStrictlyInsideUnitInterval) {
  const auto s = sigmoid(Tensor::from_values({5}, {-30, -1, 0, 1, 30}, DType::f64)).to_vector();
  for (double v : s) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_DOUBLE_EQ(s[2], 0.5);
}

TEST(Ops, PoolingExamples) {
  const Tensor seven = Tensor::full({1, 2, 4, 4}, 7.0, DType::f64);
  for (double v : global_avg_pool(seven).to_vector()) EXPECT_DOUBLE_EQ(v, 7.0);
  for (double v : pool2d(seven, PoolMode::average, 2, 2).to_vector()) EXPECT_DOUBLE_EQ(v, 7.0);
  EXPECT_DOUBLE_EQ(global_avg_pool(Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4}, DType::f64)).item(), 2.5);

  std::mt19937_64 rng(6);
  const Tensor x = random_normal(rng, {2, 3, 4, 4});
  const auto xv = x.to_vector();
  const auto p = pool2d(x, PoolMode::average, 2, 2).to_vector();
  for (int bc = 0; bc < 6; ++bc)
    for (int qy = 0; qy < 2; ++qy)
      for (int qx = 0; qx < 2; ++qx) {
        double s = 0;
        for (int y = qy * 2; y < qy * 2 + 2; ++y)
          for (int xx = qx * 2; xx < qx * 2 + 2; ++xx) s += xv[static_cast<std::size_t>(bc * 16 + y * 4 + xx)];
        EXPECT_NEAR(p[static_cast<std::size_t>(bc * 4 + qy * 2 + qx)], s / 4.0, 1e-15);
      }
  EXPECT_THROW(pool2d(x, PoolMode::average, 0, 2), ConfigError);
  EXPECT_THROW(pool2d(x, PoolMode::average, 3, 3), ShapeError);
}

TEST(Ops, MatmulMatchesLoops) {
  std::mt19937_64 rng(7);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      const Tensor a = random_normal(rng, ta ? Shape{2, 4, 3} : Shape{2, 3, 4});
      const Tensor b = random_normal(rng, tb ? Shape{2, 5, 4} : Shape{2, 4, 5});
      const auto c = matmul(a, b, ta, tb).to_vector();
      const auto av = a.to_vector(), bv = b.to_vector();
      for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 5; ++j) {
            double s = 0;
            for (int k = 0; k < 4; ++k) {
              const double x = ta ? av[static_cast<std::size_t>(n * 12 + k * 3 + i)] : av[static_cast<std::size_t>(n * 12 + i * 4 + k)];
              const double y = tb ? bv[static_cast<std::size_t>(n * 20 + j * 4 + k)] : bv[static_cast<std::size_t>(n * 20 + k * 5 + j)];
              s += x * y;
            }
            EXPECT_NEAR(c[static_cast<std::size_t>(n * 15 + i * 5 + j)], s, 1e-12);
          }
    }
}

TEST(Ops, ChannelNormStatistics) {
  std::mt19937_64 rng(8);
  const Tensor x = random_normal(rng, {2, 3, 4, 5}, 2.0);
  const Tensor gain = Tensor::from_values({3}, {1.0, 2.0, 0.5}, DType::f64);
  const Tensor bias = Tensor::from_values({3}, {0.0, -1.0, 3.0}, DType::f64);
  const auto y = channel_norm(x, gain, bias).to_vector();
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double m = 0, v = 0;
      for (int i = 0; i < 20; ++i) m += y[static_cast<std::size_t>((n * 3 + c) * 20 + i)];
      m /= 20;
      for (int i = 0; i < 20; ++i) {
        const double d = y[static_cast<std::size_t>((n * 3 + c) * 20 + i)] - m;
        v += d * d;
      }
      v /= 20;
      EXPECT_NEAR(m, bias.at(c), 1e-12);
      EXPECT_NEAR(std::sqrt(v), gain.at(c), 1e-4);
    }
}

TEST(Ops, OperatorsArePure) {
  std::mt19937_64 rng(9);
  const Tensor x = random_normal(rng, {2, 4, 6, 6}, 1.0, DType::f32);
  const Tensor w = random_normal(rng, {4, 1, 3, 3}, 1.0, DType::f32);
  EXPECT_EQ(conv2d(x, w, {}, 1, 1, 4).to_vector(), conv2d(x, w, {}, 1, 1, 4).to_vector());
  EXPECT_EQ(softmax(x, 1).to_vector(), softmax(x, 1).to_vector());
}

TEST(Backward, LinearAndQuadratic) {
  std::mt19937_64 rng(10);
  Tensor x = random_normal(rng, {3, 4});
  x.set_requires_grad(true);
  const auto g1 = backward(sum(x)).at(x).to_vector();
  for (double v : g1) EXPECT_EQ(v, 1.0);
  const auto g2 = backward(sum(mul(x, x))).at(x).to_vector();
  const auto xv = x.to_vector();
  for (std::size_t i = 0; i < xv.size(); ++i) EXPECT_DOUBLE_EQ(g2[i], 2.0 * xv[i]);
}

TEST(Backward, AccumulatesOverUses) {
  Tensor x = Tensor::from_values({2}, {1.5, -2.0}, DType::f64);
  x.set_requires_grad(true);
  const Tensor y = add(add(x, x), mul(x, Tensor::full({2}, 3.0, DType::f64)));
  const auto g = backward(sum(y)).at(x).to_vector();
  EXPECT_DOUBLE_EQ(g[0], 5.0);
  EXPECT_DOUBLE_EQ(g[1], 5.0);
}

TEST(Backward, GradientShapesMatchValues) {
  std::mt19937_64 rng(11);
  Tensor x = random_normal(rng, {1, 2, 4, 4}), w = random_normal(rng, {3, 2, 3, 3});
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  const auto grads = backward(sum(conv2d(x, w, {}, 1, 1)));
  EXPECT_EQ(grads.at(x).shape(), x.shape());
  EXPECT_EQ(grads.at(w).shape(), w.shape());
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x = Tensor::zeros({2}, DType::f64);
  x.set_requires_grad(true);
  EXPECT_THROW(backward(x), ShapeError);
}

TEST(Backward, NoGradScopeRecordsNothing) {
  Tensor x = Tensor::zeros({2}, DType::f64);
  x.set_requires_grad(true);
  NoGradScope scope;
  EXPECT_FALSE(mul(x, x).requires_grad());
}

TEST(GradCheck, SumOfInputIsExact) {
  std::mt19937_64 rng(12);
  const Tensor x = random_normal(rng, {3, 5});
  EXPECT_LT(grad_check([](const std::vector<Tensor>& v) { return sum(v[0]); }, {x}), 1e-10);
}

TEST(GradCheck, CrossEntropyOfConvolution) {
  PrecisionScope p(DType::f64);
  std::mt19937_64 rng(13);
  const Tensor x = random_normal(rng, {1, 2, 4, 4}), w = random_normal(rng, {3, 2, 3, 3}, 0.5),
               b = random_normal(rng, {3}, 0.1);
  LabelMap labels(1, 4, 4);
  for (std::size_t i = 0; i < labels.values.size(); ++i) labels.values[i] = static_cast<std::uint8_t>(i % 3);
  const auto f = [&labels](const std::vector<Tensor>& v) { return cross_entropy(conv2d(v[0], v[1], v[2], 1, 1), labels); };
  EXPECT_LT(grad_check(f, {x, w, b}, 1e-5), 1e-4);
}

// sum(softmax(x)) is identically one. The analytic gradient vanishes to
// roundoff and the central difference is quantized to ulp(1)/(2 eps).
TEST(GradCheck, SumOfSoftmaxIsFlat) {
  PrecisionScope p(DType::f64);
  std::mt19937_64 rng(14);
  Tensor x = random_normal(rng, {2, 5});
  x.set_requires_grad(true);
  const auto g = backward(sum(softmax(x, 1))).at(x).to_vector();
  for (double v : g) EXPECT_LT(std::abs(v), 1e-12);
  auto data = x.mutable_data<double>();
  const double eps = 1e-5;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    data[i] = saved + eps;
    const double up = sum(softmax(x, 1)).item();
    data[i] = saved - eps;
    const double down = sum(softmax(x, 1)).item();
    data[i] = saved;
    EXPECT_LT(std::abs((up - down) / (2 * eps)), 1e-10);
  }
}

TEST(GradCheck, NonScalarOutputRejected) {
  const Tensor x = Tensor::zeros({3}, DType::f64);
  EXPECT_THROW(grad_check([](const std::vector<Tensor>& v) { return v[0]; }, {x}), ShapeError);
}

TEST(GradCheck, KinkProbesAreSkipped) {
  // One element sits exactly on the relu kink.
  const Tensor x = Tensor::from_values({4}, {0.0, 0.7, -0.4, 1.3}, DType::f64);
  const auto report = grad_check_report([](const std::vector<Tensor>& v) { return sum(relu(v[0])); }, {x});
  EXPECT_EQ(report.kinks_skipped, 1u);
  EXPECT_EQ(report.elements_checked, 3u);
  EXPECT_LT(report.max_rel_error, 1e-10);
}

TEST(GradCheck, PerturbedAnalyticGradientIsFlagged) {
  std::mt19937_64 rng(15);
  const Tensor x = random_normal(rng, {6});
  GradCheckOptions o;
  o.analytic_perturbation = 0.01;
  const auto report = grad_check_report([](const std::vector<Tensor>& v) { return sum(mul(v[0], v[0])); }, {x}, o);
  EXPECT_GT(report.max_rel_error, 1e-4);
}

TEST(Parameters, SeededPerNameIndependentOfOrder) {
  ParameterSet a(42, DType::f64), b(42, DType::f64);
  a.add("x.weight", {3, 4}, Init::uniform_fan_in);
  a.add("y.weight", {2, 2}, Init::uniform_fan_in);
  b.add("y.weight", {2, 2}, Init::uniform_fan_in);
  b.add("x.weight", {3, 4}, Init::uniform_fan_in);
  EXPECT_EQ(a.get("x.weight").value.to_vector(), b.get("x.weight").value.to_vector());
  EXPECT_THROW(a.add("x.weight", {1}, Init::zeros), ConfigError);
  const double bound = std::sqrt(1.0 / 4.0);
  for (double v : a.get("x.weight").value.to_vector()) EXPECT_LE(std::abs(v), bound);
  a.add("x.bias", {3}, Init::zeros);
  for (double v : a.get("x.bias").value.to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "srf_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "a.ckpt").string();
  ParameterSet a(1, DType::f32), b(2, DType::f32);
  for (auto* ps : {&a, &b}) {
    ps->add("conv.weight", {4, 3, 3, 3}, Init::uniform_fan_in);
    ps->add("norm.gain", {4}, Init::ones);
  }
  save_checkpoint(path, a);
  load_checkpoint(path, b);
  for (const auto& [name, p] : a) {
    const auto x = p.value.data<float>(), y = b.get(name).value.data<float>();
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(std::bit_cast<std::uint32_t>(x[i]), std::bit_cast<std::uint32_t>(y[i]));
  }
}

TEST(Checkpoint, MismatchNamesParameter) {
  const auto dir = std::filesystem::temp_directory_path() / "srf_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "b.ckpt").string();
  ParameterSet a(1, DType::f32), b(1, DType::f32);
  a.add("conv.weight", {4, 3, 3, 3}, Init::uniform_fan_in);
  b.add("conv.weight", {4, 3, 1, 1}, Init::uniform_fan_in);
  save_checkpoint(path, a);
  try {
    load_checkpoint(path, b);
    FAIL();
  } catch (const CheckpointMismatchError& e) {
    EXPECT_EQ(e.parameter(), "conv.weight");
  }
}
