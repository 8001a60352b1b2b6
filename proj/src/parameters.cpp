#include "srf/parameters.hpp"

#include <cmath>
#include <random>

namespace srf {

const char* init_name(Init init) {
  switch (init) {
    case Init::uniform_fan_in: return "uniform_fan_in";
    case Init::zeros: return "zeros";
    case Init::ones: return "ones";
  }
  return "?";
}

std::uint64_t hash_name(const std::string& name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::vector<double> draw(const Shape& shape, Init init, std::uint64_t seed, double scale) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      std::fill(v.begin(), v.end(), scale);
      break;
    case Init::uniform_fan_in: {
      std::int64_t fan_in = 1;
      for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
      const double bound = scale * std::sqrt(1.0 / static_cast<double>(fan_in));
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& x : v) x = dist(rng);
      break;
    }
  }
  return v;
}

}  // namespace

ParameterSet::ParameterSet(std::uint64_t seed, DType dtype) : seed_(seed), dtype_(dtype) {}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

Tensor ParameterSet::add(const std::string& name, Shape shape, Init init) {
  if (params_.count(name) != 0) throw ConfigError("duplicate parameter name '" + name + "'");
  const auto values = draw(shape, init, splitmix64(seed_ ^ hash_name(name)), 1.0);
  Tensor t = Tensor::from_values(std::move(shape), values, dtype_);
  t.set_requires_grad(true);
  params_.emplace(name, Parameter{name, t, init});
  return t;
}

const Parameter& ParameterSet::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Parameter& ParameterSet::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

void ParameterSet::reinitialize(const std::string& name, Init init, std::uint64_t salt, double scale) {
  Parameter& p = get(name);
  const auto values = draw(p.value.shape(), init, splitmix64(seed_ ^ hash_name(name) ^ splitmix64(salt + 1)), scale);
  dispatch(p.value.dtype(), [&]<class T>() {
    auto dst = p.value.mutable_data<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(values[i]);
  });
}

std::int64_t ParameterSet::element_count() const {
  std::int64_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.numel();
  return n;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(p.value);
  return out;
}

}  // namespace srf
