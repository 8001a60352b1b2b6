#pragma once

#include <string>

#include "srf/ops.hpp"
#include "srf/parameters.hpp"

namespace srf::nn {

struct Conv {
  Tensor weight;
  Tensor bias;  // undefined when the layer has no bias
  int stride = 1;
  int padding = 0;
  int groups = 1;

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding, groups); }
};

struct ConvSpec {
  std::int64_t in = 0;
  std::int64_t out = 0;
  int kernel = 1;
  int stride = 1;
  int groups = 1;
  bool bias = true;
  Init weight_init = Init::uniform_fan_in;
};

/// Registers "<name>.weight" (and "<name>.bias") with same-size padding.
Conv make_conv(ParameterSet& params, const std::string& name, const ConvSpec& spec);

struct Norm {
  Tensor gain;
  Tensor bias;

  Tensor operator()(const Tensor& x) const { return channel_norm(x, gain, bias); }
};

Norm make_norm(ParameterSet& params, const std::string& name, std::int64_t channels);

struct Linear {
  Tensor weight;
  Tensor bias;

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

Linear make_linear(ParameterSet& params, const std::string& name, std::int64_t in, std::int64_t out,
                   Init weight_init = Init::uniform_fan_in);

/// conv (no bias) -> channel norm -> optional relu.
struct ConvNorm {
  Conv conv;
  Norm norm;
  bool relu = true;

  Tensor operator()(const Tensor& x) const {
    Tensor y = norm(conv(x));
    return relu ? srf::relu(y) : y;
  }
};

ConvNorm make_conv_norm(ParameterSet& params, const std::string& name, std::int64_t in, std::int64_t out, int kernel,
                        int stride = 1, bool relu = true);

}  // namespace srf::nn
