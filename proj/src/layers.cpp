#include "srf/layers.hpp"

namespace srf::nn {

Conv make_conv(ParameterSet& params, const std::string& name, const ConvSpec& spec) {
  if (spec.groups < 1 || spec.in % spec.groups != 0 || spec.out % spec.groups != 0) {
    throw ConfigError(name + ": groups must divide both channel counts");
  }
  Conv c;
  c.weight = params.add(name + ".weight", {spec.out, spec.in / spec.groups, spec.kernel, spec.kernel}, spec.weight_init);
  if (spec.bias) c.bias = params.add(name + ".bias", {spec.out}, Init::zeros);
  c.stride = spec.stride;
  c.padding = spec.kernel / 2;
  c.groups = spec.groups;
  return c;
}

Norm make_norm(ParameterSet& params, const std::string& name, std::int64_t channels) {
  return Norm{params.add(name + ".gain", {channels}, Init::ones), params.add(name + ".bias", {channels}, Init::zeros)};
}

Linear make_linear(ParameterSet& params, const std::string& name, std::int64_t in, std::int64_t out, Init weight_init) {
  return Linear{params.add(name + ".weight", {out, in}, weight_init), params.add(name + ".bias", {out}, Init::zeros)};
}

ConvNorm make_conv_norm(ParameterSet& params, const std::string& name, std::int64_t in, std::int64_t out, int kernel,
                        int stride, bool relu) {
  ConvNorm cn;
  cn.conv = make_conv(params, name + ".conv", {.in = in, .out = out, .kernel = kernel, .stride = stride, .bias = false});
  cn.norm = make_norm(params, name + ".norm", out);
  cn.relu = relu;
  return cn;
}

}  // namespace srf::nn
