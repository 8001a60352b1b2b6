#include "srf/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

namespace srf {

void SceneSpec::validate() const {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0) {
    throw ConfigError("scene size " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be positive and divisible by 32");
  }
  if (num_classes < 2 || num_classes > 254) throw ConfigError("scene num_classes must be in [2, 254]");
  if (min_shapes < 0 || max_shapes < min_shapes) throw ConfigError("scene shape count range is invalid");
  if (!(noise_std >= 0.0)) throw ConfigError("scene noise_std must be nonnegative");
  if (!(min_size > 0.0) || max_size < min_size) throw ConfigError("scene size range is invalid");
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Small self-contained generator so scenes are identical across standard libraries.
class SceneRng {
 public:
  SceneRng(std::uint64_t seed, std::uint64_t index) : state_(seed * 0x9E3779B97F4A7C15ULL ^ (index + 0x632BE59BD9B4E019ULL)) {
    splitmix64(state_);
  }
  double uniform() { return static_cast<double>(splitmix64(state_) >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) { return lo + static_cast<int>(uniform() * (hi - lo + 1)); }
  double normal() {
    const double u1 = std::max(uniform(), 1e-300);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

using Color = std::array<double, 3>;

// Well-separated colour families for foreground classes (cycled beyond the table).
constexpr std::array<Color, 8> kFamilies{{
    {0.85, 0.20, 0.20},
    {0.20, 0.70, 0.25},
    {0.20, 0.35, 0.90},
    {0.90, 0.80, 0.15},
    {0.75, 0.25, 0.80},
    {0.15, 0.80, 0.80},
    {0.95, 0.55, 0.15},
    {0.55, 0.35, 0.20},
}};

struct Figure {
  int cls = 1;
  int kind = 0;  // 0 disk, 1 rectangle, 2 triangle
  double cx = 0, cy = 0;
  double r = 0;          // disk radius
  double a = 0, b = 0;   // rectangle half extents
  double cos_t = 1, sin_t = 0;
  std::array<double, 6> tri{};
  Color color{};

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    switch (kind) {
      case 0:
        return dx * dx + dy * dy <= r * r;
      case 1: {
        const double u = cos_t * dx + sin_t * dy;
        const double v = -sin_t * dx + cos_t * dy;
        return std::abs(u) <= a && std::abs(v) <= b;
      }
      default: {
        bool pos = false, neg = false;
        for (int e = 0; e < 3; ++e) {
          const double x0 = tri[2 * e], y0 = tri[2 * e + 1];
          const double x1 = tri[(2 * e + 2) % 6], y1 = tri[(2 * e + 3) % 6];
          const double cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
          pos = pos || cross > 0;
          neg = neg || cross < 0;
        }
        return !(pos && neg);
      }
    }
  }
};

Figure random_shape(const SceneSpec& spec, SceneRng& rng) {
  Figure s;
  s.cls = rng.integer(1, spec.num_classes - 1);
  s.kind = (s.cls - 1) % 3;
  s.cx = rng.uniform(0.1, 0.9) * static_cast<double>(spec.width);
  s.cy = rng.uniform(0.1, 0.9) * static_cast<double>(spec.height);
  const double size = rng.uniform(spec.min_size, spec.max_size);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  s.cos_t = std::cos(theta);
  s.sin_t = std::sin(theta);
  s.r = size;
  s.a = size * rng.uniform(0.6, 1.0);
  s.b = size * rng.uniform(0.45, 0.8);
  for (int v = 0; v < 3; ++v) {
    const double ang = theta + 2.0 * std::numbers::pi * v / 3.0 + rng.uniform(-0.3, 0.3);
    const double rad = size * rng.uniform(1.0, 1.3);
    s.tri[2 * v] = s.cx + rad * std::cos(ang);
    s.tri[2 * v + 1] = s.cy + rad * std::sin(ang);
  }
  const Color& base = kFamilies[static_cast<std::size_t>(s.cls - 1) % kFamilies.size()];
  for (int c = 0; c < 3; ++c) s.color[c] = std::clamp(base[c] + rng.uniform(-0.08, 0.08), 0.0, 1.0);
  return s;
}

constexpr int kSuper = 4;

}  // namespace

Scene generate_scene(const SceneSpec& spec, std::uint64_t index) {
  spec.validate();
  SceneRng rng(spec.seed, index);
  const std::int64_t h = spec.height, w = spec.width;

  // Background: a muted base colour with a low-frequency texture whose
  // amplitude follows the noise level.
  Color bg;
  for (auto& c : bg) c = rng.uniform(0.35, 0.55);
  const double fx = rng.uniform(0.05, 0.2), fy = rng.uniform(0.05, 0.2), phase = rng.uniform(0.0, 6.28);
  const double texture = 2.0 * spec.noise_std;
  std::vector<double> img(static_cast<std::size_t>(h * w * 3));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double t = texture * std::sin(fx * x + phase) * std::cos(fy * y - phase);
      for (int c = 0; c < 3; ++c) img[static_cast<std::size_t>((y * w + x) * 3 + c)] = bg[c] + t;
    }
  }

  Scene scene;
  scene.labels = LabelMap(1, h, w, 0);
  const int count = spec.max_shapes == 0 ? 0 : rng.integer(spec.min_shapes, spec.max_shapes);
  for (int i = 0; i < count; ++i) {
    const Figure s = random_shape(spec, rng);
    const double shade = rng.uniform(-0.5, 0.5) * texture;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        int inside = 0;
        for (int sy = 0; sy < kSuper; ++sy) {
          for (int sx = 0; sx < kSuper; ++sx) {
            inside += s.contains(x + (sx + 0.5) / kSuper, y + (sy + 0.5) / kSuper);
          }
        }
        if (inside == 0) continue;
        const double cover = static_cast<double>(inside) / (kSuper * kSuper);
        for (int c = 0; c < 3; ++c) {
          double& v = img[static_cast<std::size_t>((y * w + x) * 3 + c)];
          v = (1.0 - cover) * v + cover * (s.color[c] + shade);
        }
        if (s.contains(x + 0.5, y + 0.5)) scene.labels.at(0, y, x) = static_cast<std::uint8_t>(s.cls);
      }
    }
  }

  scene.image = RgbImage(h, w);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = img[i] + (spec.noise_std > 0.0 ? spec.noise_std * rng.normal() : 0.0);
    scene.image.rgb[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }
  return scene;
}

Tensor images_to_tensor(const std::vector<const RgbImage*>& images, DType dtype) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const std::int64_t h = images[0]->h, w = images[0]->w, n = static_cast<std::int64_t>(images.size());
  std::vector<double> v(static_cast<std::size_t>(n * 3 * h * w));
  for (std::int64_t b = 0; b < n; ++b) {
    const RgbImage& im = *images[static_cast<std::size_t>(b)];
    if (im.h != h || im.w != w) throw ShapeError("images_to_tensor: images differ in size");
    for (std::int64_t c = 0; c < 3; ++c) {
      for (std::int64_t p = 0; p < h * w; ++p) {
        v[static_cast<std::size_t>((b * 3 + c) * h * w + p)] = im.rgb[static_cast<std::size_t>(p * 3 + c)] / 127.5 - 1.0;
      }
    }
  }
  return Tensor::from_values({n, 3, h, w}, v, dtype);
}

Tensor image_to_tensor(const RgbImage& image, DType dtype) { return images_to_tensor({&image}, dtype); }

LabelMap stack_labels(const std::vector<const LabelMap*>& labels) {
  if (labels.empty()) throw ShapeError("stack_labels: empty batch");
  const std::int64_t h = labels[0]->h, w = labels[0]->w;
  std::int64_t n = 0;
  for (const auto* l : labels) {
    if (l->h != h || l->w != w) throw ShapeError("stack_labels: label maps differ in size");
    n += l->n;
  }
  LabelMap out;
  out.n = n;
  out.h = h;
  out.w = w;
  out.values.reserve(static_cast<std::size_t>(n * h * w));
  for (const auto* l : labels) out.values.insert(out.values.end(), l->values.begin(), l->values.end());
  return out;
}

RgbImage flip_horizontal(const RgbImage& image) {
  RgbImage out(image.h, image.w);
  for (std::int64_t y = 0; y < image.h; ++y) {
    for (std::int64_t x = 0; x < image.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.rgb[static_cast<std::size_t>((y * image.w + x) * 3 + c)] =
            image.rgb[static_cast<std::size_t>((y * image.w + (image.w - 1 - x)) * 3 + c)];
      }
    }
  }
  return out;
}

LabelMap flip_horizontal(const LabelMap& labels) {
  LabelMap out(labels.n, labels.h, labels.w);
  for (std::int64_t b = 0; b < labels.n; ++b) {
    for (std::int64_t y = 0; y < labels.h; ++y) {
      for (std::int64_t x = 0; x < labels.w; ++x) out.at(b, y, x) = labels.at(b, y, labels.w - 1 - x);
    }
  }
  return out;
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to " + path.string() + " failed");
}

std::vector<std::uint8_t> netpbm_header(const char* magic, std::int64_t w, std::int64_t h) {
  const std::string s = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  return {s.begin(), s.end()};
}

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

struct HeaderParser {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
  std::size_t token_start = 0;

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      if (is_space(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  std::int64_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos;
    token_start = start;
    std::int64_t v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1 << 20)) throw FormatError(std::string("netpbm ") + what + " is too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("netpbm: expected ") + what, start);
    return v;
  }
};

// Returns (width, height, payload offset).
std::array<std::int64_t, 3> parse_netpbm(const std::vector<std::uint8_t>& bytes, char kind) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != static_cast<std::uint8_t>(kind)) {
    throw FormatError(std::string("netpbm: expected magic P") + kind, 0);
  }
  HeaderParser p{bytes, 2};
  if (p.pos >= bytes.size() || !is_space(bytes[p.pos])) throw FormatError("netpbm: missing whitespace after magic", p.pos);
  const std::int64_t w = p.number("width");
  const std::size_t width_at = p.token_start;
  const std::int64_t h = p.number("height");
  const std::size_t height_at = p.token_start;
  const std::int64_t maxval = p.number("maxval");
  const std::size_t maxval_at = p.token_start;
  if (w <= 0) throw FormatError("netpbm: zero image width", width_at);
  if (h <= 0) throw FormatError("netpbm: zero image height", height_at);
  if (maxval != 255) throw FormatError("netpbm: only maxval 255 is supported", maxval_at);
  if (p.pos >= bytes.size() || !is_space(bytes[p.pos])) throw FormatError("netpbm: missing whitespace after maxval", p.pos);
  return {w, h, static_cast<std::int64_t>(p.pos + 1)};
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
  auto bytes = netpbm_header("P6", image.w, image.h);
  bytes.insert(bytes.end(), image.rgb.begin(), image.rgb.end());
  return bytes;
}

RgbImage decode_ppm(const std::vector<std::uint8_t>& bytes) {
  const auto [w, h, off] = parse_netpbm(bytes, '6');
  const std::size_t need = static_cast<std::size_t>(w * h * 3);
  if (bytes.size() - static_cast<std::size_t>(off) < need) {
    throw FormatError("ppm: truncated pixel data, expected " + std::to_string(need) + " bytes", bytes.size());
  }
  RgbImage im(h, w);
  std::copy_n(bytes.begin() + off, need, im.rgb.begin());
  return im;
}

std::vector<std::uint8_t> encode_pgm(const LabelMap& labels) {
  if (labels.n != 1) throw ShapeError("pgm: expected a single-image label map");
  auto bytes = netpbm_header("P5", labels.w, labels.h);
  bytes.insert(bytes.end(), labels.values.begin(), labels.values.end());
  return bytes;
}

LabelMap decode_pgm(const std::vector<std::uint8_t>& bytes) {
  const auto [w, h, off] = parse_netpbm(bytes, '5');
  const std::size_t need = static_cast<std::size_t>(w * h);
  if (bytes.size() - static_cast<std::size_t>(off) < need) {
    throw FormatError("pgm: truncated pixel data, expected " + std::to_string(need) + " bytes", bytes.size());
  }
  LabelMap labels(1, h, w);
  std::copy_n(bytes.begin() + off, need, labels.values.begin());
  return labels;
}

void write_image(const std::filesystem::path& path, const RgbImage& image) { write_file(path, encode_ppm(image)); }
RgbImage read_image(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }
void write_labels(const std::filesystem::path& path, const LabelMap& labels) { write_file(path, encode_pgm(labels)); }
LabelMap read_labels(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

RgbImage colorize(const LabelMap& labels, std::int64_t image_index) {
  RgbImage out(labels.h, labels.w);
  for (std::int64_t y = 0; y < labels.h; ++y) {
    for (std::int64_t x = 0; x < labels.w; ++x) {
      const std::uint8_t v = labels.at(image_index, y, x);
      Color c{0.1, 0.1, 0.1};
      if (v == kIgnoreLabel) c = {1.0, 1.0, 1.0};
      else if (v > 0) c = kFamilies[static_cast<std::size_t>(v - 1) % kFamilies.size()];
      for (int k = 0; k < 3; ++k) {
        out.rgb[static_cast<std::size_t>((y * labels.w + x) * 3 + k)] = static_cast<std::uint8_t>(std::lround(c[k] * 255.0));
      }
    }
  }
  return out;
}

}  // namespace srf
