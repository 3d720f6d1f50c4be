#pragma once

// Per-pixel matching descriptors at the coarse (1/16) and fine (1/4) stage
// resolutions, their average-pooled pyramids, and bilinear sampling.

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "epiflow/binary.hpp"
#include "epiflow/error.hpp"
#include "epiflow/geom.hpp"
#include "epiflow/raster.hpp"

namespace epiflow {

enum class Stage { kCoarse, kFine };

inline int stage_scale(Stage stage) { return stage == Stage::kCoarse ? 16 : 4; }
inline const char* stage_name(Stage stage) { return stage == Stage::kCoarse ? "coarse" : "fine"; }

// Images are padded up to a multiple of this before feature extraction.
inline constexpr int kPadMultiple = 16;
// Descriptors with a smaller pre-normalization norm are flagged as textureless.
inline constexpr float kZeroDescriptorNorm = 1e-5f;

struct FeatureMap {
  int width = 0;
  int height = 0;
  int channels = 0;
  int scale = 1;
  std::vector<float> data;
  std::vector<std::uint8_t> valid;

  FeatureMap() = default;
  FeatureMap(int w, int h, int c, int s)
      : width(w), height(h), channels(c), scale(s),
        data(static_cast<std::size_t>(w) * h * c, 0.0f),
        valid(static_cast<std::size_t>(w) * h, 0) {}

  std::size_t offset(int x, int y) const { return (static_cast<std::size_t>(y) * width + x) * channels; }
  std::span<const float> at(int x, int y) const { return {data.data() + offset(x, y), static_cast<std::size_t>(channels)}; }
  std::span<float> at(int x, int y) { return {data.data() + offset(x, y), static_cast<std::size_t>(channels)}; }
  bool is_valid(int x, int y) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }

  bool operator==(const FeatureMap&) const = default;
};

struct FeaturePyramid {
  std::vector<FeatureMap> levels;
  int size() const { return static_cast<int>(levels.size()); }
};

struct DescriptorConfig {
  int window = 7;
  int channels = 32;
  std::uint64_t seed = 0x5eedf00dULL;
  // scale of the Sobel taps relative to the intensity taps
  float gradient_weight = 0.25f;
};

namespace detail {

// Subtracts the channel mean and L2-normalizes. Returns false (and zeroes the
// vector) when there is nothing left to normalize.
inline bool normalize_descriptor(std::span<float> v) {
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double norm2 = 0.0;
  for (float& x : v) {
    x = static_cast<float>(x - mean);
    norm2 += static_cast<double>(x) * x;
  }
  const double norm = std::sqrt(norm2);
  if (!(norm > kZeroDescriptorNorm)) {
    std::fill(v.begin(), v.end(), 0.0f);
    return false;
  }
  for (float& x : v) x = static_cast<float>(x / norm);
  return true;
}

inline GrayImage pad_reflect(const GrayImage& image, int multiple) {
  const int w = (image.width + multiple - 1) / multiple * multiple;
  const int h = (image.height + multiple - 1) / multiple * multiple;
  if (w == image.width && h == image.height) return image;
  GrayImage out(w, h, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(x, y) = image.at(reflect_index(x, image.width), reflect_index(y, image.height));
  return out;
}

inline GrayImage box_downsample(const GrayImage& image, int factor) {
  GrayImage out(image.width / factor, image.height / factor, 1);
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      double sum = 0.0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) sum += image.at(x * factor + dx, y * factor + dy);
      out.at(x, y) = static_cast<float>(sum * inv);
    }
  }
  return out;
}

// Fixed Gaussian projection matrix, rows = output channels.
inline std::vector<float> projection_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto uniform = [&rng] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
  std::vector<float> m(static_cast<std::size_t>(rows) * cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
  for (std::size_t i = 0; i < m.size(); i += 2) {
    // Box-Muller keeps the matrix identical across standard libraries.
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double t = 2.0 * M_PI * uniform();
    m[i] = static_cast<float>(r * std::cos(t) * scale);
    if (i + 1 < m.size()) m[i + 1] = static_cast<float>(r * std::sin(t) * scale);
  }
  return m;
}

}  // namespace detail

// Default descriptor: mean-removed window intensities plus Sobel x/y responses
// over the same window, randomly projected to `channels` dimensions, then made
// zero-mean and unit-norm. Textureless pixels are flagged invalid.
inline FeatureMap extract_features(const GrayImage& image, Stage stage, const DescriptorConfig& config = {}) {
  require(!image.empty(), ErrorCode::kInvalidInput, "cannot extract features from an empty image");
  require(config.window % 2 == 1 && config.window >= 3, ErrorCode::kInvalidConfig, "descriptor window must be odd and >= 3");
  require(config.channels >= 2, ErrorCode::kInvalidConfig, "descriptor needs at least two channels");

  const int scale = stage_scale(stage);
  const GrayImage small = detail::box_downsample(detail::pad_reflect(image, kPadMultiple), scale);
  const int w = small.width;
  const int h = small.height;
  const auto px = [&](int x, int y) { return small.at(reflect_index(x, w), reflect_index(y, h)); };

  GrayImage gx(w, h, 1), gy(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      gx.at(x, y) = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                    (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
      gy.at(x, y) = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                    (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
    }
  }

  const int radius = config.window / 2;
  const int taps = config.window * config.window;
  const int raw_dim = 3 * taps;
  const std::vector<float> proj = detail::projection_matrix(config.channels, raw_dim, config.seed);

  FeatureMap out(w, h, config.channels, scale);
  parallel_for(h, [&](int y0, int y1) {
    std::vector<float> raw(raw_dim);
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        double mean = 0.0;
        int k = 0;
        for (int dy = -radius; dy <= radius; ++dy) {
          for (int dx = -radius; dx <= radius; ++dx, ++k) {
            const int sx = reflect_index(x + dx, w);
            const int sy = reflect_index(y + dy, h);
            raw[k] = small.at(sx, sy);
            raw[taps + k] = config.gradient_weight * gx.at(sx, sy);
            raw[2 * taps + k] = config.gradient_weight * gy.at(sx, sy);
            mean += raw[k];
          }
        }
        mean /= taps;
        for (int i = 0; i < taps; ++i) raw[i] = static_cast<float>(raw[i] - mean);

        std::span<float> desc = out.at(x, y);
        for (int c = 0; c < config.channels; ++c) {
          const float* row = proj.data() + static_cast<std::size_t>(c) * raw_dim;
          double acc = 0.0;
          for (int i = 0; i < raw_dim; ++i) acc += static_cast<double>(row[i]) * raw[i];
          desc[c] = static_cast<float>(acc);
        }
        out.valid[static_cast<std::size_t>(y) * w + x] = detail::normalize_descriptor(desc) ? 1 : 0;
      }
    }
  });
  return out;
}

inline FeatureMap extract_features(const RgbImage& image, Stage stage, const DescriptorConfig& config = {}) {
  return extract_features(to_gray(image), stage, config);
}

// 2x2 average pooling with ceiling division; edge blocks average the pixels
// that exist. No renormalization.
inline FeatureMap pool_average(const FeatureMap& map) {
  FeatureMap out((map.width + 1) / 2, (map.height + 1) / 2, map.channels, map.scale * 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      std::span<float> dst = out.at(x, y);
      int count = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int sx = 2 * x + dx;
          const int sy = 2 * y + dy;
          if (sx >= map.width || sy >= map.height) continue;
          const auto src = map.at(sx, sy);
          for (int c = 0; c < map.channels; ++c) dst[c] += src[c];
          ++count;
        }
      }
      for (float& v : dst) v /= static_cast<float>(count);
    }
  }
  return out;
}

inline FeaturePyramid build_pyramid(const FeatureMap& map, int levels) {
  require(levels >= 1, ErrorCode::kInvalidConfig, "pyramid needs at least one level");
  const int min_dim = std::min(map.width, map.height);
  require(min_dim >= 1 && (1 << (levels - 1)) <= min_dim, ErrorCode::kInvalidConfig,
          "pyramid with " + std::to_string(levels) + " levels needs more than " + std::to_string(levels - 1) +
              " halvings of a " + std::to_string(map.width) + "x" + std::to_string(map.height) + " map");
  FeaturePyramid pyramid;
  pyramid.levels.push_back(map);
  for (int k = 1; k < levels; ++k) {
    FeatureMap next = pool_average(pyramid.levels.back());
    for (int y = 0; y < next.height; ++y)
      for (int x = 0; x < next.width; ++x)
        next.valid[static_cast<std::size_t>(y) * next.width + x] = detail::normalize_descriptor(next.at(x, y)) ? 1 : 0;
    pyramid.levels.push_back(std::move(next));
  }
  return pyramid;
}

// Bilinear sample of the descriptors around p, renormalized. Positions more
// than half a pixel outside the map, or with no valid neighbor, yield false.
inline bool sample_feature(const FeatureMap& map, const Pixel& p, std::span<float> out) {
  if (!(p.x >= -0.5 && p.y >= -0.5 && p.x <= map.width - 0.5 && p.y <= map.height - 0.5)) return false;
  const double x = std::clamp(p.x, 0.0, static_cast<double>(map.width - 1));
  const double y = std::clamp(p.y, 0.0, static_cast<double>(map.height - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  const std::array<double, 2> wx{1.0 - fx, fx};
  const std::array<double, 2> wy{1.0 - fy, fy};
  std::fill(out.begin(), out.end(), 0.0f);
  double total = 0.0;
  for (int j = 0; j < 2; ++j) {
    const int sy = std::min(y0 + j, map.height - 1);
    for (int i = 0; i < 2; ++i) {
      const int sx = std::min(x0 + i, map.width - 1);
      const double weight = wx[i] * wy[j];
      if (weight == 0.0 || !map.is_valid(sx, sy)) continue;
      const auto src = map.at(sx, sy);
      for (int c = 0; c < map.channels; ++c) out[c] += static_cast<float>(weight * src[c]);
      total += weight;
    }
  }
  if (total < 1e-9) return false;
  double norm2 = 0.0;
  for (float v : out) norm2 += static_cast<double>(v) * v;
  const double norm = std::sqrt(norm2);
  if (!(norm > kZeroDescriptorNorm * total)) return false;
  for (float& v : out) v = static_cast<float>(v / norm);
  return true;
}

// Descriptor file: 16-byte header then float32 data in [y][x][c] order, all
// little-endian.
//   bytes 0..3   magic "EFFM"
//   bytes 4..7   uint32 width
//   bytes 8..11  uint32 height
//   bytes 12..13 uint16 channels
//   bytes 14..15 uint16 scale
// Imported vectors are made zero-mean and unit-norm; all-zero vectors are
// flagged textureless.
inline constexpr char kFeatureMagic[4] = {'E', 'F', 'F', 'M'};

inline void write_feature_map(const FeatureMap& map, const std::string& path) {
  auto out = binary::open_out(path);
  out.write(kFeatureMagic, 4);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.width));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.height));
  binary::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(map.channels));
  binary::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(map.scale));
  for (float v : map.data) binary::write_le<float>(out, v);
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path);
}

inline FeatureMap read_feature_map(const std::string& path) {
  auto in = binary::open_in(path);
  char magic[4];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kFeatureMagic)) throw Error(ErrorCode::kParse, path + ": bad descriptor magic");
  const auto w = binary::read_le<std::uint32_t>(in, "descriptor header");
  const auto h = binary::read_le<std::uint32_t>(in, "descriptor header");
  const auto c = binary::read_le<std::uint16_t>(in, "descriptor header");
  const auto s = binary::read_le<std::uint16_t>(in, "descriptor header");
  if (w == 0 || h == 0 || c < 2 || s == 0 || w > (1u << 16) || h > (1u << 16))
    throw Error(ErrorCode::kParse, path + ": bad descriptor dimensions");
  FeatureMap map(static_cast<int>(w), static_cast<int>(h), c, s);
  for (float& v : map.data) {
    v = binary::read_le<float>(in, "descriptor data in " + path);
    if (!std::isfinite(v)) throw Error(ErrorCode::kParse, path + ": non-finite descriptor value");
  }
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x)
      map.valid[static_cast<std::size_t>(y) * map.width + x] = detail::normalize_descriptor(map.at(x, y)) ? 1 : 0;
  return map;
}

}  // namespace epiflow
