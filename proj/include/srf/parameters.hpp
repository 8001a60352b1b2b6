#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "srf/tensor.hpp"

namespace srf {

enum class Init {
  /// U(-sqrt(1/fan_in), +sqrt(1/fan_in)), fan_in = product of all but the first extent.
  uniform_fan_in,
  zeros,
  ones,
};

const char* init_name(Init init);

struct Parameter {
  std::string name;
  Tensor value;
  Init init = Init::zeros;
};

/// Named, sorted collection of trainable leaves.
///
/// Each tensor is drawn from a generator seeded by (seed, name), so a value
/// does not depend on which other parameters exist or their creation order.
class ParameterSet {
 public:
  explicit ParameterSet(std::uint64_t seed = 0, DType dtype = default_dtype());

  /// Registers and initializes a parameter. Duplicate names raise ConfigError.
  Tensor add(const std::string& name, Shape shape, Init init);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Parameter& get(const std::string& name) const;
  Parameter& get(const std::string& name);
  /// Draws fresh values for one parameter under a different initializer;
  /// `scale` multiplies the uniform bound or the constant of Init::ones.
  void reinitialize(const std::string& name, Init init, std::uint64_t salt = 0, double scale = 1.0);

  std::size_t size() const { return params_.size(); }
  std::int64_t element_count() const;
  DType dtype() const { return dtype_; }
  std::uint64_t seed() const { return seed_; }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  std::vector<Tensor> tensors() const;

 private:
  std::uint64_t seed_;
  DType dtype_;
  std::map<std::string, Parameter> params_;
};

std::uint64_t hash_name(const std::string& name);

/// Combines two seeds into a well-mixed third.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace srf
