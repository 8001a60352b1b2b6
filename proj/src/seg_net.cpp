#include "srf/seg_net.hpp"

#include <sstream>

#include "srf/grid_sampler.hpp"

namespace srf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

Variant parse_variant(const std::string& text, Variant base) {
  Variant v = base;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("variant entry '" + item + "' is not key=value");
    const std::string key = trim(item.substr(0, eq));
    const std::string value = trim(item.substr(eq + 1));
    if (key == "upsampler") {
      if (value == "srm") v.upsampler = Upsampler::srm;
      else if (value == "bilinear") v.upsampler = Upsampler::bilinear;
      else throw ConfigError("unknown upsampler '" + value + "' (expected bilinear or srm)");
    } else if (key == "context") {
      if (value == "crm") v.context = Context::crm;
      else if (value == "none") v.context = Context::none;
      else throw ConfigError("unknown context '" + value + "' (expected none or crm)");
    } else {
      throw ConfigError("unknown variant key '" + key + "'");
    }
  }
  return v;
}

std::string variant_string(const Variant& variant) {
  return std::string("upsampler=") + (variant.upsampler == Upsampler::srm ? "srm" : "bilinear") +
         ",context=" + (variant.context == Context::crm ? "crm" : "none");
}

std::string variant_label(const Variant& variant) {
  const bool s = variant.upsampler == Upsampler::srm;
  const bool c = variant.context == Context::crm;
  if (s && c) return "both";
  if (s) return "+srm";
  if (c) return "+crm";
  return "baseline";
}

void NetworkConfig::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels must be positive");
  if (num_classes < 2 || num_classes > 255) throw ConfigError("num_classes must be in [2, 255]");
  for (std::size_t l = 0; l < stage_widths.size(); ++l) {
    if (stage_widths[l] < 4 || stage_widths[l] % 4 != 0) {
      throw ConfigError("stage width " + std::to_string(stage_widths[l]) + " must be a positive multiple of 4");
    }
    if (l > 0 && stage_widths[l] <= stage_widths[l - 1]) throw ConfigError("stage widths must be strictly increasing");
  }
  if (decoder_width < 4 || decoder_width % 4 != 0) throw ConfigError("decoder_width must be a positive multiple of 4");
  if (embedding_dim < 1) throw ConfigError("embedding_dim must be positive");
  if (blocks_per_stage < 0) throw ConfigError("blocks_per_stage must be nonnegative");
  if (srm_hidden < 1) throw ConfigError("srm_hidden must be positive");
  if (ffn_expansion < 1) throw ConfigError("ffn_expansion must be positive");
}

NetworkParams make_network_params(ParameterSet& params, const NetworkConfig& config, const Variant& variant) {
  config.validate();
  NetworkParams net;
  net.config = config;
  net.variant = variant;

  const auto& c = config.stage_widths;
  const std::int64_t stem_width = std::max<std::int64_t>(c[0] / 2, 4);
  net.encoder.stem = nn::make_conv_norm(params, "encoder.stem", config.in_channels, stem_width, 3, 2);
  for (int l = 0; l < 4; ++l) {
    const std::string stage = "encoder.stage" + std::to_string(l + 1);
    const std::int64_t in = l == 0 ? stem_width : c[l - 1];
    net.encoder.down[l] = nn::make_conv_norm(params, stage + ".down", in, c[l], 3, 2);
    for (int b = 0; b < config.blocks_per_stage; ++b) {
      const std::string block = stage + ".block" + std::to_string(b + 1);
      net.encoder.blocks[l].push_back(ResBlock{nn::make_conv_norm(params, block + ".conv1", c[l], c[l], 3),
                                               nn::make_conv_norm(params, block + ".conv2", c[l], c[l], 3, 1, false)});
    }
  }

  const std::int64_t d = config.decoder_width;
  if (variant.context == Context::crm) {
    net.crm = make_crm_params(params, "context.crm", CrmConfig{c, d, config.ffn_expansion});
  } else {
    net.context_proj = nn::make_conv_norm(params, "context.proj", c[3], d, 1);
  }

  for (int l = 0; l < 3; ++l) {
    const SrmConfig sc{d, c[l], d, config.srm_hidden};
    net.srm[l] = make_srm_params(params, "decoder.srm" + std::to_string(l + 1), sc, variant.upsampler == Upsampler::srm);
  }

  net.head.hidden = nn::make_conv_norm(params, "head.hidden", d, d, 1);
  net.head.classifier = nn::make_conv(params, "head.classifier", {.in = d, .out = config.num_classes});
  net.embed.proj = nn::make_conv(params, "embed.proj", {.in = d, .out = config.embedding_dim, .bias = false});
  net.embed.norm = nn::make_norm(params, "embed.norm", config.embedding_dim);
  return net;
}

FeaturePyramid encoder_forward(const Tensor& image, const NetworkParams& net) {
  if (image.rank() != 4 || image.dim(1) != net.config.in_channels) {
    throw ShapeError("encoder: expected N×" + std::to_string(net.config.in_channels) + "×H×W, got " +
                     shape_str(image.shape()));
  }
  if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0) {
    throw ShapeError("encoder: image extents " + shape_str(image.shape()) + " are not divisible by 32");
  }
  FeaturePyramid pyr;
  Tensor x = net.encoder.stem(image);
  for (int l = 0; l < 4; ++l) {
    x = net.encoder.down[l](x);
    for (const auto& block : net.encoder.blocks[l]) x = block(x);
    pyr.stages[l] = x;
  }
  return pyr;
}

Tensor context_forward(const FeaturePyramid& pyramid, const NetworkParams& net) {
  if (net.crm) return crm_forward(pyramid, *net.crm);
  pyramid.validate();
  return net.context_proj(pyramid.stages[3]);
}

DecodeOutput decode(const Tensor& context, const FeaturePyramid& pyramid, const NetworkParams& net) {
  pyramid.validate();
  Tensor g = context;
  for (int l = 2; l >= 0; --l) g = srm_forward(g, pyramid.stages[l], net.srm[l]);
  DecodeOutput out;
  out.features = g;
  out.coarse_logits = net.head.classifier(net.head.hidden(g));
  out.logits = bilinear_upsample(out.coarse_logits, 4);
  return out;
}

DecodeOutput forward(const Tensor& image, const NetworkParams& net) {
  const FeaturePyramid pyr = encoder_forward(image, net);
  return decode(context_forward(pyr, net), pyr, net);
}

LabelMap argmax_labels(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax_labels: expected N×K×H×W, got " + shape_str(logits.shape()));
  const std::int64_t n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3), hw = h * w;
  if (k > 255) throw ShapeError("argmax_labels: too many classes");
  LabelMap labels(n, h, w);
  dispatch(logits.dtype(), [&]<class T>() {
    const auto v = logits.data<T>();
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t p = 0; p < hw; ++p) {
        const T* px = v.data() + b * k * hw + p;
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < k; ++c) {
          if (px[c * hw] > px[best * hw]) best = c;
        }
        labels.values[static_cast<std::size_t>(b * hw + p)] = static_cast<std::uint8_t>(best);
      }
    }
  });
  return labels;
}

LabelMap segment(const Tensor& image, const NetworkParams& net) {
  NoGradScope no_grad;
  return argmax_labels(forward(image, net).logits);
}

SegNet::SegNet(const NetworkConfig& config, const Variant& variant, std::uint64_t seed, DType dtype)
    : params_(seed, dtype), net_(make_network_params(params_, config, variant)) {}

}  // namespace srf
