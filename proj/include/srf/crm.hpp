#pragma once

#include <array>
#include <string>

#include "srf/layers.hpp"

namespace srf {

/// Encoder stage outputs F_1..F_4 at strides 4, 8, 16, 32.
struct FeaturePyramid {
  std::array<Tensor, 4> stages;

  /// Each stage must halve the previous one's extents exactly.
  void validate() const;
};

struct Mlp {
  nn::Linear fc1;
  nn::Linear fc2;

  Tensor operator()(const Tensor& x) const { return fc2(relu(fc1(x))); }
};

struct ChannelAttentionParams {
  std::array<Mlp, 4> stage_mlps;
  Mlp fuse;
};

struct DnlParams {
  nn::Conv query;  ///< C -> C/4, no bias (cancelled by whitening)
  nn::Conv key;    ///< C -> C/4, no bias
  nn::Conv unary;  ///< C -> 1, no bias (cancelled by the softmax)
  nn::Conv value;  ///< C -> C, no bias
  nn::Conv out_proj;  ///< C -> C, no bias
};

struct FfnParams {
  nn::Conv expand;
  nn::Conv depthwise;  ///< no bias
  nn::Conv project;  ///< no bias; the decoder normalizes the context per channel
};

struct CrmConfig {
  std::array<std::int64_t, 4> stage_widths{16, 32, 64, 128};
  std::int64_t width = 64;
  std::int64_t ffn_expansion = 2;
};

struct CrmParams {
  ChannelAttentionParams channel;
  nn::ConvNorm reduce;  ///< sum(C_l) -> width before the spatial block
  DnlParams spatial;
  FfnParams ffn;
};

/// Hidden width of the squeeze MLPs: channels / 4, at least 8.
std::int64_t mlp_hidden_width(std::int64_t channels);

ChannelAttentionParams make_channel_attention_params(ParameterSet& params, const std::string& prefix,
                                                     const std::array<std::int64_t, 4>& stage_widths);
DnlParams make_dnl_params(ParameterSet& params, const std::string& prefix, std::int64_t channels);
FfnParams make_ffn_params(ParameterSet& params, const std::string& prefix, std::int64_t channels,
                          std::int64_t expansion);
CrmParams make_crm_params(ParameterSet& params, const std::string& prefix, const CrmConfig& config);

/// Average-pools F_1..F_3 to F_4's extent and concatenates all four along channels.
Tensor concat_pyramid(const FeaturePyramid& pyramid);

/// sigmoid(MLP_fuse(cat_l MLP_l(global_pool(F_l)))), shaped N×sum(C_l)×1×1.
Tensor channel_scale(const FeaturePyramid& pyramid, const ChannelAttentionParams& params);

Tensor apply_channel_attention(const Tensor& concatenated, const Tensor& scale);

/// Intermediate quantities of the disentangled non-local block.
struct DnlTerms {
  Tensor pairwise;  ///< N×HW×HW, softmax over keys of whitened q·k
  Tensor unary;     ///< N×1×HW, softmax over keys of m
  Tensor context;   ///< N×C×H×W, y_i = sum_j (pairwise_ij + unary_j) g_j
};

DnlTerms dnl_attend(const Tensor& input, const DnlParams& params);

/// Full similarity matrix omega = pairwise + unary (broadcast over queries).
Tensor dnl_similarity(const DnlTerms& terms);

/// input + out_proj(context).
Tensor dnl_spatial_attention(const Tensor& input, const DnlParams& params);

/// input + project(relu(depthwise(expand(input)))).
Tensor ffn(const Tensor& input, const FfnParams& params);

/// Channel attention -> 1×1 reduction -> spatial attention -> FFN, at F_4's
/// resolution and `width` channels.
Tensor crm_forward(const FeaturePyramid& pyramid, const CrmParams& params);

}  // namespace srf
