#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "srf/crm.hpp"
#include "srf/label_map.hpp"
#include "srf/srm.hpp"

namespace srf {

enum class Upsampler { bilinear, srm };
enum class Context { none, crm };

struct Variant {
  Upsampler upsampler = Upsampler::srm;
  Context context = Context::crm;

  bool operator==(const Variant&) const = default;
};

/// "upsampler=srm,context=crm"; either key may be omitted.
Variant parse_variant(const std::string& text, Variant base = {});
std::string variant_string(const Variant& variant);
/// Short row label: "baseline", "+srm", "+crm" or "both".
std::string variant_label(const Variant& variant);

struct NetworkConfig {
  std::int64_t in_channels = 3;
  int num_classes = 4;
  std::array<std::int64_t, 4> stage_widths{16, 32, 64, 128};
  std::int64_t decoder_width = 64;
  std::int64_t embedding_dim = 256;
  int blocks_per_stage = 2;
  std::int64_t srm_hidden = 64;
  std::int64_t ffn_expansion = 2;

  /// Throws ConfigError on an invalid combination.
  void validate() const;
};

struct ResBlock {
  nn::ConvNorm first;
  nn::ConvNorm second;  ///< no relu; applied after the residual add

  Tensor operator()(const Tensor& x) const { return relu(add(x, second(first(x)))); }
};

struct EncoderParams {
  nn::ConvNorm stem;
  std::array<nn::ConvNorm, 4> down;
  std::array<std::vector<ResBlock>, 4> blocks;
};

struct HeadParams {
  nn::ConvNorm hidden;
  nn::Conv classifier;
};

struct EmbedParams {
  nn::Conv proj;
  nn::Norm norm;
};

/// Handles into a ParameterSet for one network variant.
struct NetworkParams {
  NetworkConfig config;
  Variant variant;
  EncoderParams encoder;
  std::optional<CrmParams> crm;
  nn::ConvNorm context_proj;  ///< used when context == none
  std::array<SrmParams, 3> srm;  ///< srm[0] produces G_1 (stride 4) ... srm[2] produces G_3
  HeadParams head;
  EmbedParams embed;
};

NetworkParams make_network_params(ParameterSet& params, const NetworkConfig& config, const Variant& variant);

FeaturePyramid encoder_forward(const Tensor& image, const NetworkParams& net);

/// Bottleneck context G_4 at stride 32 with decoder width channels.
Tensor context_forward(const FeaturePyramid& pyramid, const NetworkParams& net);

struct DecodeOutput {
  Tensor features;       ///< G_1, stride 4
  Tensor coarse_logits;  ///< head output at stride 4
  Tensor logits;         ///< N×classes×H×W
};

DecodeOutput decode(const Tensor& context, const FeaturePyramid& pyramid, const NetworkParams& net);

DecodeOutput forward(const Tensor& image, const NetworkParams& net);

/// Per-pixel argmax over axis 1 of an N×K×H×W tensor; ties go to the lowest index.
LabelMap argmax_labels(const Tensor& logits);

LabelMap segment(const Tensor& image, const NetworkParams& net);

/// Owns the parameters of one network.
class SegNet {
 public:
  SegNet(const NetworkConfig& config, const Variant& variant, std::uint64_t seed, DType dtype = DType::f32);
  SegNet(const SegNet&) = delete;
  SegNet& operator=(const SegNet&) = delete;
  SegNet(SegNet&&) = default;
  SegNet& operator=(SegNet&&) = default;

  const NetworkConfig& config() const { return net_.config; }
  const Variant& variant() const { return net_.variant; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const NetworkParams& handles() const { return net_; }

  DecodeOutput forward(const Tensor& image) const { return srf::forward(image, net_); }
  LabelMap segment(const Tensor& image) const { return srf::segment(image, net_); }

 private:
  ParameterSet params_;
  NetworkParams net_;
};

}  // namespace srf
