#include "srf/srm.hpp"

#include <algorithm>

#include "srf/grid_sampler.hpp"

namespace srf {

SrmParams make_srm_params(ParameterSet& params, const std::string& prefix, const SrmConfig& config, bool aligned) {
  SrmParams p;
  p.compress_high = nn::make_conv_norm(params, prefix + ".compress_high", config.high_channels, config.width, 1);
  p.compress_low = nn::make_conv_norm(params, prefix + ".compress_low", config.low_channels, config.width, 1);
  p.aligned = aligned;
  if (!aligned) return p;
  const std::int64_t cat = 2 * config.width;
  p.offset_hidden = nn::make_conv(params, prefix + ".offset.hidden", {.in = cat, .out = config.hidden, .kernel = 3});
  p.offset_out = nn::make_conv(params, prefix + ".offset.out",
                               {.in = config.hidden, .out = 2, .kernel = 3, .weight_init = Init::zeros});
  p.mask_hidden = nn::make_conv(params, prefix + ".mask.hidden", {.in = cat, .out = config.hidden, .kernel = 3});
  p.mask_out = nn::make_conv(params, prefix + ".mask.out",
                             {.in = config.hidden, .out = kMaskNeighbors, .kernel = 3, .weight_init = Init::zeros});
  return p;
}

std::vector<std::string> srm_output_layer_names(const std::string& prefix) {
  return {prefix + ".offset.out.weight", prefix + ".offset.out.bias", prefix + ".mask.out.weight",
          prefix + ".mask.out.bias"};
}

namespace {

void check_pair(const Tensor& coarse, const Tensor& lateral) {
  if (coarse.rank() != 4 || lateral.rank() != 4 || coarse.dim(0) != lateral.dim(0) ||
      lateral.dim(2) != 2 * coarse.dim(2) || lateral.dim(3) != 2 * coarse.dim(3)) {
    throw ShapeError("srm: lateral feature " + shape_str(lateral.shape()) + " must have exactly twice the resolution of " +
                     shape_str(coarse.shape()));
  }
}

struct Streams {
  Tensor high;  // compressed upsampled coarse feature
  Tensor low;   // compressed lateral feature
};

Streams compress(const Tensor& coarse, const Tensor& lateral, const SrmParams& params) {
  check_pair(coarse, lateral);
  return {params.compress_high(bilinear_upsample(coarse, 2)), params.compress_low(lateral)};
}

OffsetPrediction predict(const Streams& s, const SrmParams& params) {
  if (!params.aligned) throw ConfigError("srm: offset prediction requested from a bilinear-only step");
  const Tensor fa = concat({s.high, s.low}, 1);
  OffsetPrediction out;
  out.initial_offsets = params.offset_out(relu(params.offset_hidden(fa)));
  out.mask = softmax(params.mask_out(relu(params.mask_hidden(fa))), 1);
  return out;
}

}  // namespace

OffsetPrediction predict_offset_and_mask(const Tensor& coarse, const Tensor& lateral, const SrmParams& params) {
  return predict(compress(coarse, lateral, params), params);
}

Tensor refine_offsets(const Tensor& initial, const Tensor& mask) {
  if (initial.rank() != 4 || initial.dim(1) != 2) {
    throw ShapeError("refine_offsets: initial offsets must be N×2×H×W, got " + shape_str(initial.shape()));
  }
  if (mask.rank() != 4 || mask.dim(1) != kMaskNeighbors) {
    throw ShapeError("refine_offsets: mask must have 9 channels, got " + shape_str(mask.shape()));
  }
  if (mask.dim(0) != initial.dim(0) || mask.dim(2) != initial.dim(2) || mask.dim(3) != initial.dim(3)) {
    throw ShapeError("refine_offsets: mask " + shape_str(mask.shape()) + " does not match offsets " +
                     shape_str(initial.shape()));
  }
  check_same_dtype(initial, mask, "refine_offsets");
  const std::int64_t n = initial.dim(0), h = initial.dim(2), w = initial.dim(3), hw = h * w;

  // Flat source index of neighbour k of every pixel, with edge replication.
  auto nbr = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(kMaskNeighbors * hw));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (int k = 0; k < kMaskNeighbors; ++k) {
        const std::int64_t ny = std::clamp<std::int64_t>(y + k / 3 - 1, 0, h - 1);
        const std::int64_t nx = std::clamp<std::int64_t>(x + k % 3 - 1, 0, w - 1);
        (*nbr)[static_cast<std::size_t>(k * hw + y * w + x)] = ny * w + nx;
      }

  return dispatch(initial.dtype(), [&]<class T>() {
    auto dv = initial.data<T>();
    auto mv = mask.data<T>();
    std::vector<T> out(dv.size(), T(0));
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t ch = 0; ch < 2; ++ch) {
        const T* src = dv.data() + (b * 2 + ch) * hw;
        T* dst = out.data() + (b * 2 + ch) * hw;
        for (int k = 0; k < kMaskNeighbors; ++k) {
          const T* m = mv.data() + (b * kMaskNeighbors + k) * hw;
          const std::int64_t* idx = nbr->data() + k * hw;
          for (std::int64_t i = 0; i < hw; ++i) dst[i] += src[idx[i]] * m[i];
        }
      }
    return make_op_result<T>(initial.shape(), std::move(out), {initial, mask},
                             [initial, mask, nbr, n, hw](BackwardContext& ctx) {
      auto g = ctx.grad_output<T>();
      auto gd = ctx.grad_input<T>(0);
      auto gm = ctx.grad_input<T>(1);
      auto dv = initial.data<T>();
      auto mv = mask.data<T>();
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < 2; ++ch) {
          const T* gp = g.data() + (b * 2 + ch) * hw;
          const T* src = dv.data() + (b * 2 + ch) * hw;
          for (int k = 0; k < kMaskNeighbors; ++k) {
            const std::int64_t* idx = nbr->data() + k * hw;
            const T* m = mv.data() + (b * kMaskNeighbors + k) * hw;
            if (!gd.empty()) {
              T* dst = gd.data() + (b * 2 + ch) * hw;
              for (std::int64_t i = 0; i < hw; ++i) dst[idx[i]] += gp[i] * m[i];
            }
            if (!gm.empty()) {
              T* dst = gm.data() + (b * kMaskNeighbors + k) * hw;
              for (std::int64_t i = 0; i < hw; ++i) dst[i] += gp[i] * src[idx[i]];
            }
          }
        }
    });
  });
}

Tensor srm_forward(const Tensor& coarse, const Tensor& lateral, const SrmParams& params) {
  const Streams s = compress(coarse, lateral, params);
  if (!params.aligned) return add(s.high, s.low);
  const OffsetPrediction pred = predict(s, params);
  const Tensor aligned = sample_with_offsets(s.high, refine_offsets(pred.initial_offsets, pred.mask));
  return add(aligned, s.low);
}

}  // namespace srf
