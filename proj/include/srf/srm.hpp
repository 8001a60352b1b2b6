#pragma once

#include <string>

#include "srf/layers.hpp"

namespace srf {

inline constexpr int kMaskNeighbors = 9;

struct SrmConfig {
  std::int64_t high_channels = 64;  ///< channels of the coarse input G_l
  std::int64_t low_channels = 64;   ///< channels of the lateral input F_{l-1}
  std::int64_t width = 64;          ///< uniform channel width after compression
  std::int64_t hidden = 64;         ///< width of the offset/mask subnets
};

/// Parameters of one semantic refinement step. With `aligned == false` the
/// subnets are absent and the step is the plain bilinear-upsample-then-add
/// decoder stage.
struct SrmParams {
  nn::ConvNorm compress_high;
  nn::ConvNorm compress_low;
  bool aligned = true;
  nn::Conv offset_hidden;
  nn::Conv offset_out;
  nn::Conv mask_hidden;
  nn::Conv mask_out;
};

/// Registers parameters under `prefix`. The offset and mask output layers
/// start at zero, so an untrained aligned step equals the bilinear step.
SrmParams make_srm_params(ParameterSet& params, const std::string& prefix, const SrmConfig& config, bool aligned);

/// Parameter names of the two zero-initialized output layers.
std::vector<std::string> srm_output_layer_names(const std::string& prefix);

struct OffsetPrediction {
  Tensor initial_offsets;  ///< N×2×H×W, (dx, dy) in pixels
  Tensor mask;             ///< N×9×H×W, softmax over the 9 neighbours
};

/// Predicts the initial offsets and the neighbour weight mask at F_prev's
/// resolution from the concatenated compressed streams.
OffsetPrediction predict_offset_and_mask(const Tensor& coarse, const Tensor& lateral, const SrmParams& params);

/// Replaces each pixel's offset by the mask-weighted sum of the initial offsets
/// over its 3×3 neighbourhood (row-major, k = 4 is the pixel itself). Both
/// offset channels share the weights; borders replicate the edge pixel.
Tensor refine_offsets(const Tensor& initial, const Tensor& mask);

/// One decoder refinement step: the compressed, upsampled coarse feature is
/// resampled at the refined offsets and added to the compressed lateral
/// feature. Output has `width` channels at lateral resolution.
Tensor srm_forward(const Tensor& coarse, const Tensor& lateral, const SrmParams& params);

}  // namespace srf
