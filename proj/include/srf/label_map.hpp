#pragma once

#include <cstdint>
#include <vector>

#include "srf/errors.hpp"

namespace srf {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// N×H×W class indices, row-major. kIgnoreLabel marks unlabeled pixels.
struct LabelMap {
  std::int64_t n = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::uint8_t> values;

  LabelMap() = default;
  LabelMap(std::int64_t n_, std::int64_t h_, std::int64_t w_, std::uint8_t fill = 0)
      : n(n_), h(h_), w(w_), values(static_cast<std::size_t>(n_ * h_ * w_), fill) {}

  std::int64_t size() const { return n * h * w; }
  std::uint8_t& at(std::int64_t b, std::int64_t y, std::int64_t x) { return values[static_cast<std::size_t>((b * h + y) * w + x)]; }
  std::uint8_t at(std::int64_t b, std::int64_t y, std::int64_t x) const {
    return values[static_cast<std::size_t>((b * h + y) * w + x)];
  }

  /// Throws ConfigError if a non-ignore value is >= num_classes.
  void validate(int num_classes) const {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] != kIgnoreLabel && values[i] >= num_classes) {
        throw ConfigError("label " + std::to_string(values[i]) + " at index " + std::to_string(i) +
                          " is outside [0, " + std::to_string(num_classes) + ")");
      }
    }
  }

  bool operator==(const LabelMap&) const = default;
};

}  // namespace srf
