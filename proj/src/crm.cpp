#include "srf/crm.hpp"

#include <algorithm>

namespace srf {

void FeaturePyramid::validate() const {
  for (std::size_t l = 0; l < stages.size(); ++l) {
    if (!stages[l].defined() || stages[l].rank() != 4) throw ShapeError("feature pyramid stage " + std::to_string(l + 1) + " missing or not rank 4");
  }
  for (std::size_t l = 1; l < stages.size(); ++l) {
    const auto& prev = stages[l - 1];
    const auto& cur = stages[l];
    if (cur.dim(0) != prev.dim(0) || prev.dim(2) != 2 * cur.dim(2) || prev.dim(3) != 2 * cur.dim(3)) {
      throw ShapeError("feature pyramid stage " + std::to_string(l + 1) + " " + shape_str(cur.shape()) +
                       " is not half of stage " + std::to_string(l) + " " + shape_str(prev.shape()));
    }
  }
}

std::int64_t mlp_hidden_width(std::int64_t channels) { return std::max<std::int64_t>(channels / 4, 8); }

namespace {

Mlp make_mlp(ParameterSet& params, const std::string& prefix, std::int64_t in, std::int64_t out) {
  const std::int64_t hidden = mlp_hidden_width(in);
  return Mlp{nn::make_linear(params, prefix + ".fc1", in, hidden), nn::make_linear(params, prefix + ".fc2", hidden, out)};
}

}  // namespace

ChannelAttentionParams make_channel_attention_params(ParameterSet& params, const std::string& prefix,
                                                     const std::array<std::int64_t, 4>& stage_widths) {
  ChannelAttentionParams p;
  std::int64_t total = 0;
  for (std::size_t l = 0; l < 4; ++l) {
    p.stage_mlps[l] = make_mlp(params, prefix + ".stage" + std::to_string(l + 1), stage_widths[l], stage_widths[l]);
    total += stage_widths[l];
  }
  p.fuse = make_mlp(params, prefix + ".fuse", total, total);
  return p;
}

DnlParams make_dnl_params(ParameterSet& params, const std::string& prefix, std::int64_t channels) {
  if (channels % 4 != 0) {
    throw ConfigError("dnl: channel count " + std::to_string(channels) + " is not divisible by 4");
  }
  DnlParams p;
  p.query = nn::make_conv(params, prefix + ".query", {.in = channels, .out = channels / 4, .bias = false});
  p.key = nn::make_conv(params, prefix + ".key", {.in = channels, .out = channels / 4, .bias = false});
  p.unary = nn::make_conv(params, prefix + ".unary", {.in = channels, .out = 1, .bias = false});
  p.value = nn::make_conv(params, prefix + ".value", {.in = channels, .out = channels, .bias = false});
  p.out_proj = nn::make_conv(params, prefix + ".out_proj", {.in = channels, .out = channels, .bias = false});
  return p;
}

FfnParams make_ffn_params(ParameterSet& params, const std::string& prefix, std::int64_t channels,
                          std::int64_t expansion) {
  const std::int64_t hidden = channels * expansion;
  FfnParams p;
  p.expand = nn::make_conv(params, prefix + ".expand", {.in = channels, .out = hidden});
  p.depthwise = nn::make_conv(params, prefix + ".depthwise", {.in = hidden, .out = hidden, .kernel = 3, .groups = static_cast<int>(hidden), .bias = false});
  p.project = nn::make_conv(params, prefix + ".project", {.in = hidden, .out = channels, .bias = false});
  return p;
}

CrmParams make_crm_params(ParameterSet& params, const std::string& prefix, const CrmConfig& config) {
  CrmParams p;
  p.channel = make_channel_attention_params(params, prefix + ".channel", config.stage_widths);
  std::int64_t total = 0;
  for (auto c : config.stage_widths) total += c;
  p.reduce = nn::make_conv_norm(params, prefix + ".reduce", total, config.width, 1);
  p.spatial = make_dnl_params(params, prefix + ".spatial", config.width);
  p.ffn = make_ffn_params(params, prefix + ".ffn", config.width, config.ffn_expansion);
  return p;
}

Tensor concat_pyramid(const FeaturePyramid& pyramid) {
  pyramid.validate();
  const auto& top = pyramid.stages[3];
  std::vector<Tensor> parts;
  for (std::size_t l = 0; l < 3; ++l) {
    parts.push_back(pool2d(pyramid.stages[l], PoolMode::average, top.dim(2), top.dim(3)));
  }
  parts.push_back(top);
  return concat(parts, 1);
}

Tensor channel_scale(const FeaturePyramid& pyramid, const ChannelAttentionParams& params) {
  pyramid.validate();
  std::vector<Tensor> descriptors;
  for (std::size_t l = 0; l < 4; ++l) {
    const Tensor& f = pyramid.stages[l];
    const Tensor pooled = reshape(global_avg_pool(f), {f.dim(0), f.dim(1)});
    descriptors.push_back(params.stage_mlps[l](pooled));
  }
  const Tensor fused = params.fuse(concat(descriptors, 1));
  return reshape(sigmoid(fused), {fused.dim(0), fused.dim(1), 1, 1});
}

Tensor apply_channel_attention(const Tensor& concatenated, const Tensor& scale) {
  return scale_channels(concatenated, scale);
}

DnlTerms dnl_attend(const Tensor& input, const DnlParams& params) {
  if (input.rank() != 4) throw ShapeError("dnl: expected N×C×H×W, got " + shape_str(input.shape()));
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3), hw = h * w;
  if (c % 4 != 0) throw ConfigError("dnl: channel count " + std::to_string(c) + " is not divisible by 4");
  const Tensor q = center(reshape(params.query(input), {n, c / 4, hw}), 2);
  const Tensor k = center(reshape(params.key(input), {n, c / 4, hw}), 2);
  const Tensor m = reshape(params.unary(input), {n, 1, hw});
  const Tensor g = reshape(params.value(input), {n, c, hw});

  DnlTerms t;
  t.pairwise = softmax(matmul(q, k, true, false), 2);
  t.unary = softmax(m, 2);
  const Tensor pair_ctx = matmul(g, t.pairwise, false, true);
  const Tensor unary_ctx = matmul(g, t.unary, false, true);
  t.context = reshape(add(pair_ctx, unary_ctx), {n, c, h, w});
  return t;
}

Tensor dnl_similarity(const DnlTerms& terms) { return add(terms.pairwise, terms.unary); }

Tensor dnl_spatial_attention(const Tensor& input, const DnlParams& params) {
  const DnlTerms t = dnl_attend(input, params);
  return add(input, params.out_proj(t.context));
}

Tensor ffn(const Tensor& input, const FfnParams& params) {
  return add(input, params.project(relu(params.depthwise(params.expand(input)))));
}

Tensor crm_forward(const FeaturePyramid& pyramid, const CrmParams& params) {
  const Tensor recalibrated = apply_channel_attention(concat_pyramid(pyramid), channel_scale(pyramid, params.channel));
  const Tensor reduced = params.reduce(recalibrated);
  return ffn(dnl_spatial_attention(reduced, params.spatial), params.ffn);
}

}  // namespace srf
