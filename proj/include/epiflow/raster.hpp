#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <thread>
#include <vector>

#include "epiflow/error.hpp"

namespace epiflow {

// Dense row-major raster with interleaved channels: data[(y * width + x) * channels + c].
template <class T>
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, int c = 1, T fill = T{})
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return width <= 0 || height <= 0 || data.empty(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * width + x) * channels;
  }
  T& at(int x, int y, int c = 0) { return data[index(x, y) + c]; }
  const T& at(int x, int y, int c = 0) const { return data[index(x, y) + c]; }
  std::span<T> pixel(int x, int y) { return {data.data() + index(x, y), static_cast<std::size_t>(channels)}; }
  std::span<const T> pixel(int x, int y) const {
    return {data.data() + index(x, y), static_cast<std::size_t>(channels)};
  }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

  bool operator==(const Raster&) const = default;
};

using GrayImage = Raster<float>;
using RgbImage = Raster<std::uint8_t>;

// Mirror index without repeating the edge sample (…2 1 0 1 2…).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Luminance in [0, 1] from an 8-bit raster with 1, 3 or 4 channels.
inline GrayImage to_gray(const RgbImage& image) {
  require(!image.empty(), ErrorCode::kInvalidInput, "empty image");
  GrayImage out(image.width, image.height, 1);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      float v;
      if (image.channels >= 3) {
        v = 0.299f * image.at(x, y, 0) + 0.587f * image.at(x, y, 1) + 0.114f * image.at(x, y, 2);
      } else {
        v = image.at(x, y, 0);
      }
      out.at(x, y) = v / 255.0f;
    }
  }
  return out;
}

// Runs body(begin, end) over [0, n) split into contiguous chunks, one per
// hardware thread. Callers write disjoint outputs, so results do not depend
// on the thread count.
template <class Body>
void parallel_for(int n, Body&& body) {
  const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const int workers = std::min(hw, std::max(1, n / 8));
  if (workers <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int begin = w * chunk;
    const int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
}

}  // namespace epiflow
