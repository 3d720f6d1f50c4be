#pragma once

// Epipolar cost slices and the E-flow update rules.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "epiflow/binary.hpp"
#include "epiflow/error.hpp"
#include "epiflow/feat.hpp"
#include "epiflow/geom.hpp"

namespace epiflow {

inline std::optional<float> similarity(std::span<const float> a, std::span<const float> b) {
  if (a.empty() || b.empty()) return std::nullopt;
  require(a.size() == b.size(), ErrorCode::kInvalidInput,
          "similarity of " + std::to_string(a.size()) + "- and " + std::to_string(b.size()) + "-channel vectors");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * b[i];
  return static_cast<float>(sum);
}

// Per-pixel E-flow for one (reference, source) pair.
struct EFlowField {
  int width = 0;
  int height = 0;
  int source = -1;
  std::vector<double> eflow;
  std::vector<EpipolarFrame> frames;
  std::vector<std::uint8_t> valid;

  EFlowField() = default;
  EFlowField(int w, int h, int src)
      : width(w), height(h), source(src),
        eflow(static_cast<std::size_t>(w) * h, 0.0),
        frames(static_cast<std::size_t>(w) * h),
        valid(static_cast<std::size_t>(w) * h, 0) {}
  std::size_t size() const { return eflow.size(); }
};

// m_s * m_p similarity scores per pixel. Entry (k, j) compares the reference
// descriptor with pyramid level k sampled at (j - (m_p-1)/2) * 2^k stage
// pixels along the epipolar direction from the current match.
struct CostSlice {
  int width = 0;
  int height = 0;
  int levels = 0;
  int samples = 0;
  std::vector<float> scores;
  std::vector<std::uint8_t> entry_valid;
  std::vector<std::uint8_t> pixel_valid;
  std::vector<std::uint8_t> centered;  // level-0 sample at the current E-flow is in frame

  int entries_per_pixel() const { return levels * samples; }
  int half_window() const { return (samples - 1) / 2; }
  double offset(int level, int j) const { return static_cast<double>(j - half_window()) * (1 << level); }
  std::size_t entry(std::size_t pixel, int level, int j) const {
    return pixel * entries_per_pixel() + static_cast<std::size_t>(level) * samples + j;
  }
};

inline CostSlice build_cost_slice(const FeatureMap& ref, const EFlowField& eflow, const FeaturePyramid& src, int levels,
                                  int samples) {
  require(samples >= 1 && samples % 2 == 1, ErrorCode::kInvalidConfig, "m_p must be odd");
  require(levels >= 1 && levels <= src.size(), ErrorCode::kInvalidConfig, "m_s exceeds the source pyramid depth");
  require(ref.width == eflow.width && ref.height == eflow.height, ErrorCode::kInvalidInput,
          "E-flow field does not match the reference feature map");
  require(ref.channels == src.levels[0].channels, ErrorCode::kInvalidInput, "reference and source channel counts differ");

  CostSlice slice;
  slice.width = ref.width;
  slice.height = ref.height;
  slice.levels = levels;
  slice.samples = samples;
  const std::size_t n = static_cast<std::size_t>(ref.width) * ref.height;
  slice.scores.assign(n * slice.entries_per_pixel(), 0.0f);
  slice.entry_valid.assign(n * slice.entries_per_pixel(), 0);
  slice.pixel_valid.assign(n, 0);
  slice.centered.assign(n, 0);

  parallel_for(ref.height, [&](int y0, int y1) {
    std::vector<float> sample(ref.channels);
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < ref.width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * ref.width + x;
        if (!eflow.valid[i] || !ref.is_valid(x, y)) continue;
        const EpipolarFrame& frame = eflow.frames[i];
        const Vec2 center = frame.point_at(eflow.eflow[i]).vec();
        const auto ref_desc = ref.at(x, y);
        bool any = false;
        for (int k = 0; k < levels; ++k) {
          const double inv_scale = 1.0 / (1 << k);
          for (int j = 0; j < samples; ++j) {
            const Vec2 q0 = center + frame.direction * slice.offset(k, j);
            const Pixel qk{(q0.x() + 0.5) * inv_scale - 0.5, (q0.y() + 0.5) * inv_scale - 0.5};
            if (!sample_feature(src.levels[k], qk, sample)) continue;
            const std::size_t e = slice.entry(i, k, j);
            slice.scores[e] = *similarity(ref_desc, sample);
            slice.entry_valid[e] = 1;
            any = true;
          }
        }
        slice.pixel_valid[i] = any ? 1 : 0;
        slice.centered[i] = slice.entry_valid[slice.entry(i, 0, slice.half_window())];
      }
    }
  });
  return slice;
}

struct UpdateResult {
  int width = 0;
  int height = 0;
  std::vector<double> delta_eflow;
  std::vector<double> weight;
  std::vector<std::uint8_t> valid;

  UpdateResult() = default;
  UpdateResult(int w, int h)
      : width(w), height(h),
        delta_eflow(static_cast<std::size_t>(w) * h, 0.0),
        weight(static_cast<std::size_t>(w) * h, -std::numeric_limits<double>::infinity()),
        valid(static_cast<std::size_t>(w) * h, 0) {}
};

// Averages the levels of one pixel onto the level-0 offset grid. A coarser
// level is linearly interpolated between its valid entries and takes its
// nearest valid entry beyond them, so every offset averages the same set of
// levels. Offsets where level 0 is masked are nullopt, unless level 0 is
// masked everywhere; then the coarser levels alone fill every offset.
inline std::vector<std::optional<double>> combine_levels(const CostSlice& slice, std::size_t pixel) {
  const int half = slice.half_window();
  std::vector<std::optional<double>> combined(slice.samples);
  std::vector<double> sum(slice.samples, 0.0);
  int used = 0;
  for (int k = 0; k < slice.levels; ++k) {
    int first = -1, last = -1;
    for (int j = 0; j < slice.samples; ++j)
      if (slice.entry_valid[slice.entry(pixel, k, j)]) {
        if (first < 0) first = j;
        last = j;
      }
    if (first < 0) continue;
    ++used;
    for (int o = -half; o <= half; ++o) {
      const double u = std::clamp(static_cast<double>(o) / (1 << k) + half, static_cast<double>(first),
                                  static_cast<double>(last));
      const int i0 = static_cast<int>(std::floor(u));
      const double frac = u - i0;
      const std::size_t e0 = slice.entry(pixel, k, i0);
      double value;
      if (frac == 0.0) {
        value = slice.entry_valid[e0] ? slice.scores[e0] : std::numeric_limits<double>::quiet_NaN();
      } else {
        const std::size_t e1 = slice.entry(pixel, k, i0 + 1);
        if (slice.entry_valid[e0] && slice.entry_valid[e1])
          value = (1.0 - frac) * slice.scores[e0] + frac * slice.scores[e1];
        else if (slice.entry_valid[e0] || slice.entry_valid[e1])
          value = slice.scores[slice.entry_valid[e0] && (frac < 0.5 || !slice.entry_valid[e1]) ? e0 : e1];
        else
          value = std::numeric_limits<double>::quiet_NaN();
      }
      if (std::isnan(value)) {
        // interior hole in this level: fall back to the nearest valid entry
        int best = first;
        for (int j = first; j <= last; ++j)
          if (slice.entry_valid[slice.entry(pixel, k, j)] && std::abs(j - u) < std::abs(best - u)) best = j;
        value = slice.scores[slice.entry(pixel, k, best)];
      }
      sum[o + half] += value;
    }
  }
  if (used == 0) return combined;
  bool level0 = false;
  for (int j = 0; j < slice.samples; ++j) level0 = level0 || slice.entry_valid[slice.entry(pixel, 0, j)];
  for (int j = 0; j < slice.samples; ++j)
    if (!level0 || slice.entry_valid[slice.entry(pixel, 0, j)]) combined[j] = sum[j] / used;
  return combined;
}

// Vertex of the parabola through (-1, s_minus), (0, s_center), (1, s_plus).
// Returns 0 when the three points do not form a maximum.
inline double parabolic_vertex(double s_minus, double s_center, double s_plus) {
  const double den = s_minus - 2.0 * s_center + s_plus;
  if (!(den < 0.0)) return 0.0;
  return std::clamp((s_minus - s_plus) / (2.0 * den), -0.5, 0.5);
}

// Cost-peak update: argmax of the level-combined scores, refined by a
// parabola through the level-0 scores (combined ones where level 0 is masked)
// at the peak and both neighbours when they exist.
inline UpdateResult update_deterministic(const CostSlice& slice, const EFlowField& eflow) {
  require(slice.width == eflow.width && slice.height == eflow.height, ErrorCode::kInvalidInput,
          "cost slice and E-flow field sizes differ");
  UpdateResult out(slice.width, slice.height);
  const int half = slice.half_window();
  for (std::size_t i = 0; i < slice.pixel_valid.size(); ++i) {
    if (!slice.pixel_valid[i]) continue;
    const auto combined = combine_levels(slice, i);
    int best = -1;
    for (int j = 0; j < slice.samples; ++j)
      if (combined[j] && (best < 0 || *combined[j] > *combined[best])) best = j;
    if (best < 0) continue;
    double refined = best - half;
    if (best > 0 && best + 1 < slice.samples && combined[best - 1] && combined[best + 1]) {
      const auto score = [&](int j) {
        const std::size_t e = slice.entry(i, 0, j);
        return slice.entry_valid[e] ? slice.scores[e] : *combined[j];
      };
      refined += parabolic_vertex(score(best - 1), score(best), score(best + 1));
    }
    out.delta_eflow[i] = refined;
    out.weight[i] = *combined[best];
    out.valid[i] = 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolutional GRU update (optional; weights come from file).

struct GruWeights {
  int hidden = 0;
  int input = 0;
  std::vector<float> wz, bz, wr, br, wh, bh;
  std::vector<float> head_w, head_b;

  int in_channels() const { return hidden + input; }
  std::size_t conv_size() const { return static_cast<std::size_t>(hidden) * in_channels() * 9; }

  void validate() const {
    require(hidden > 0 && input > 0, ErrorCode::kInvalidConfig, "GRU dimensions must be positive");
    const bool ok = wz.size() == conv_size() && wr.size() == conv_size() && wh.size() == conv_size() &&
                    bz.size() == static_cast<std::size_t>(hidden) && br.size() == bz.size() && bh.size() == bz.size() &&
                    head_w.size() == static_cast<std::size_t>(2 * hidden) && head_b.size() == 2;
    require(ok, ErrorCode::kInvalidConfig, "GRU weight blocks are ill-shaped");
  }

  static GruWeights random(int hidden, int input, std::uint64_t seed, float scale = 0.1f) {
    GruWeights w;
    w.hidden = hidden;
    w.input = input;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-scale, scale);
    const auto fill = [&](std::vector<float>& v, std::size_t n) {
      v.resize(n);
      for (float& x : v) x = dist(rng);
    };
    fill(w.wz, w.conv_size());
    fill(w.bz, hidden);
    fill(w.wr, w.conv_size());
    fill(w.br, hidden);
    fill(w.wh, w.conv_size());
    fill(w.bh, hidden);
    fill(w.head_w, 2 * static_cast<std::size_t>(hidden));
    fill(w.head_b, 2);
    return w;
  }
};

struct GruState {
  int width = 0;
  int height = 0;
  int hidden = 0;
  std::vector<float> h;

  static GruState zeros(int w, int h, int hidden) {
    return {w, h, hidden, std::vector<float>(static_cast<std::size_t>(w) * h * hidden, 0.0f)};
  }
};

// Gate activations of one step, kept for inspection.
struct GruStep {
  GruState state;
  std::vector<float> z;
  std::vector<float> r;
  std::vector<float> candidate;
};

namespace detail {

// 3x3 zero-padded convolution; weights [out][in][3][3], data [y][x][c].
inline std::vector<double> conv3x3(const std::vector<float>& in, int w, int h, int in_c, const std::vector<float>& weight,
                                   const std::vector<float>& bias, int out_c) {
  std::vector<double> out(static_cast<std::size_t>(w) * h * out_c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* dst = out.data() + (static_cast<std::size_t>(y) * w + x) * out_c;
      for (int o = 0; o < out_c; ++o) dst[o] = bias[o];
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = x + kx - 1;
          if (sx < 0 || sx >= w) continue;
          const float* src = in.data() + (static_cast<std::size_t>(sy) * w + sx) * in_c;
          for (int o = 0; o < out_c; ++o) {
            const float* wk = weight.data() + (static_cast<std::size_t>(o) * in_c) * 9 + ky * 3 + kx;
            double acc = 0.0;
            for (int c = 0; c < in_c; ++c) acc += static_cast<double>(wk[static_cast<std::size_t>(c) * 9]) * src[c];
            dst[o] += acc;
          }
        }
      }
    }
  }
  return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace detail

// z = sigma(f_z([h, x])), r = sigma(f_r([h, x])), h~ = tanh(f_h([r*h, x])),
// h' = (1 - z) * h + z * h~, with every f a 3x3 convolution.
inline GruStep gru_step(const GruWeights& weights, const GruState& state, const Raster<float>& input) {
  weights.validate();
  require(state.hidden == weights.hidden && input.channels == weights.input, ErrorCode::kInvalidConfig,
          "GRU weights do not match state/input dimensions");
  require(state.width == input.width && state.height == input.height, ErrorCode::kInvalidInput,
          "GRU state and input grids differ");
  const int w = state.width, h = state.height, H = weights.hidden, X = weights.input, C = H + X;
  const std::size_t n = static_cast<std::size_t>(w) * h;

  std::vector<float> cat(n * C);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(state.h.data() + i * H, H, cat.data() + i * C);
    std::copy_n(input.data.data() + i * X, X, cat.data() + i * C + H);
  }
  const auto z_pre = detail::conv3x3(cat, w, h, C, weights.wz, weights.bz, H);
  const auto r_pre = detail::conv3x3(cat, w, h, C, weights.wr, weights.br, H);

  GruStep step;
  step.z.resize(n * H);
  step.r.resize(n * H);
  for (std::size_t i = 0; i < n * H; ++i) {
    step.z[i] = static_cast<float>(detail::sigmoid(z_pre[i]));
    step.r[i] = static_cast<float>(detail::sigmoid(r_pre[i]));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < H; ++c) cat[i * C + c] = step.r[i * H + c] * state.h[i * H + c];
  const auto h_pre = detail::conv3x3(cat, w, h, C, weights.wh, weights.bh, H);

  step.candidate.resize(n * H);
  step.state = GruState{w, h, H, std::vector<float>(n * H)};
  for (std::size_t i = 0; i < n * H; ++i) {
    step.candidate[i] = static_cast<float>(std::tanh(h_pre[i]));
    step.state.h[i] = (1.0f - step.z[i]) * state.h[i] + step.z[i] * step.candidate[i];
  }
  return step;
}

inline GruState gru_cell(const GruWeights& weights, const GruState& state, const Raster<float>& input) {
  return gru_step(weights, state, input).state;
}

// Cost entries (masked ones as 0) followed by the current E-flow.
inline Raster<float> gru_input(const CostSlice& slice, const EFlowField& eflow) {
  const int e = slice.entries_per_pixel();
  Raster<float> x(slice.width, slice.height, e + 1);
  for (std::size_t i = 0; i < slice.pixel_valid.size(); ++i) {
    for (int k = 0; k < e; ++k) {
      const std::size_t idx = i * e + k;
      x.data[i * (e + 1) + k] = slice.entry_valid[idx] ? slice.scores[idx] : 0.0f;
    }
    x.data[i * (e + 1) + e] = eflow.valid[i] ? static_cast<float>(eflow.eflow[i]) : 0.0f;
  }
  return x;
}

// Runs one GRU step and maps the new hidden state to (delta E-flow, weight).
inline UpdateResult update_gru(const CostSlice& slice, const EFlowField& eflow, const GruWeights& weights,
                               GruState& state) {
  require(weights.input == slice.entries_per_pixel() + 1, ErrorCode::kInvalidConfig,
          "GRU input width must be m_s*m_p + 1 = " + std::to_string(slice.entries_per_pixel() + 1));
  if (state.width != slice.width || state.height != slice.height || state.hidden != weights.hidden)
    state = GruState::zeros(slice.width, slice.height, weights.hidden);
  state = gru_cell(weights, state, gru_input(slice, eflow));
  UpdateResult out(slice.width, slice.height);
  const int H = weights.hidden;
  for (std::size_t i = 0; i < slice.pixel_valid.size(); ++i) {
    if (!slice.pixel_valid[i]) continue;
    double delta = weights.head_b[0], logit = weights.head_b[1];
    for (int c = 0; c < H; ++c) {
      delta += static_cast<double>(weights.head_w[c]) * state.h[i * H + c];
      logit += static_cast<double>(weights.head_w[H + c]) * state.h[i * H + c];
    }
    out.delta_eflow[i] = delta;
    out.weight[i] = logit;
    out.valid[i] = 1;
  }
  return out;
}

// GRU weight file, little-endian:
//   bytes 0..3   magic "EGRU"
//   bytes 4..7   uint32 version (1)
//   bytes 8..11  uint32 hidden size H
//   bytes 12..15 uint32 input size X
//   float32 blocks in order: Wz[H][H+X][3][3], bz[H], Wr, br, Wh, bh,
//   head_w[2][H], head_b[2]
inline constexpr char kGruMagic[4] = {'E', 'G', 'R', 'U'};

inline void write_gru_weights(const GruWeights& weights, const std::string& path) {
  weights.validate();
  auto out = binary::open_out(path);
  out.write(kGruMagic, 4);
  binary::write_le<std::uint32_t>(out, 1);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(weights.hidden));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(weights.input));
  for (const auto* block : {&weights.wz, &weights.bz, &weights.wr, &weights.br, &weights.wh, &weights.bh,
                            &weights.head_w, &weights.head_b})
    for (float v : *block) binary::write_le<float>(out, v);
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path);
}

inline GruWeights read_gru_weights(const std::string& path) {
  auto in = binary::open_in(path);
  char magic[4];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kGruMagic)) throw Error(ErrorCode::kInvalidConfig, path + ": bad GRU magic");
  const auto version = binary::read_le<std::uint32_t>(in, "GRU header");
  if (version != 1) throw Error(ErrorCode::kInvalidConfig, path + ": unsupported GRU version");
  GruWeights w;
  const auto hidden = binary::read_le<std::uint32_t>(in, "GRU header");
  const auto input = binary::read_le<std::uint32_t>(in, "GRU header");
  if (hidden == 0 || input == 0 || hidden > 4096 || input > 4096)
    throw Error(ErrorCode::kInvalidConfig, path + ": bad GRU dimensions");
  w.hidden = static_cast<int>(hidden);
  w.input = static_cast<int>(input);
  const auto read_block = [&](std::vector<float>& v, std::size_t n) {
    v.resize(n);
    for (float& x : v) {
      in.read(reinterpret_cast<char*>(&x), sizeof(float));
      if (!in) throw Error(ErrorCode::kInvalidConfig, path + ": truncated GRU weights");
      if constexpr (std::endian::native == std::endian::big) x = binary::byteswap(x);
    }
  };
  read_block(w.wz, w.conv_size());
  read_block(w.bz, w.hidden);
  read_block(w.wr, w.conv_size());
  read_block(w.br, w.hidden);
  read_block(w.wh, w.conv_size());
  read_block(w.bh, w.hidden);
  read_block(w.head_w, 2 * static_cast<std::size_t>(w.hidden));
  read_block(w.head_b, 2);
  return w;
}

}  // namespace epiflow
