#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "srf/label_map.hpp"
#include "srf/tensor.hpp"

namespace srf {

/// 8-bit RGB image, interleaved row-major (HWC).
struct RgbImage {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::uint8_t> rgb;

  RgbImage() = default;
  RgbImage(std::int64_t h_, std::int64_t w_, std::uint8_t fill = 0)
      : h(h_), w(w_), rgb(static_cast<std::size_t>(h_ * w_ * 3), fill) {}

  bool operator==(const RgbImage&) const = default;
};

struct SceneSpec {
  std::int64_t height = 64;
  std::int64_t width = 64;
  int num_classes = 4;  ///< background + one class per shape kind (disk, rectangle, triangle, ...)
  int min_shapes = 2;
  int max_shapes = 5;
  double noise_std = 0.04;  ///< additive pixel noise, in units of full intensity
  double min_size = 9.0;    ///< shape radius range in pixels
  double max_size = 18.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError on invalid values (including extents not divisible by 32).
  void validate() const;
};

struct Scene {
  RgbImage image;
  LabelMap labels;  ///< n = 1
};

/// Renders scene `index` of the corpus described by `spec`. A pure function
/// of (spec, index).
Scene generate_scene(const SceneSpec& spec, std::uint64_t index);

/// Stacks images into an N×3×H×W tensor scaled to [-1, 1].
Tensor images_to_tensor(const std::vector<const RgbImage*>& images, DType dtype = default_dtype());
Tensor image_to_tensor(const RgbImage& image, DType dtype = default_dtype());

/// Stacks single-image label maps into one N×H×W map.
LabelMap stack_labels(const std::vector<const LabelMap*>& labels);

RgbImage flip_horizontal(const RgbImage& image);
LabelMap flip_horizontal(const LabelMap& labels);

/// Binary PPM (P6, maxval 255).
void write_image(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_image(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);
RgbImage decode_ppm(const std::vector<std::uint8_t>& bytes);

/// Binary PGM (P5, maxval 255) of a single-image label map.
void write_labels(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_labels(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_pgm(const LabelMap& labels);
LabelMap decode_pgm(const std::vector<std::uint8_t>& bytes);

/// Visualization palette for label maps (ignore = white).
RgbImage colorize(const LabelMap& labels, std::int64_t image_index = 0);

}  // namespace srf
