#pragma once

// Iterative E-flow depth estimation: random inverse-depth initialization,
// per-pair epipolar matching, closed-form triangulation, softmax-weighted
// multi-view fusion, and coarse-to-fine staging.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "epiflow/error.hpp"
#include "epiflow/feat.hpp"
#include "epiflow/geom.hpp"
#include "epiflow/match.hpp"

namespace epiflow {

struct DepthField {
  int width = 0;
  int height = 0;
  std::vector<double> depth;
  std::vector<std::uint8_t> valid;
  Stage stage = Stage::kFine;
  int iteration = 0;

  DepthField() = default;
  DepthField(int w, int h, Stage s = Stage::kFine)
      : width(w), height(h),
        depth(static_cast<std::size_t>(w) * h, 0.0),
        valid(static_cast<std::size_t>(w) * h, 0),
        stage(s) {}

  std::size_t size() const { return depth.size(); }
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v != 0;
    return n;
  }
};

struct FusionWeights {
  int width = 0;
  int height = 0;
  int sources = 0;
  // logits[s * width * height + pixel]; -inf marks a failed pair.
  std::vector<double> logits;
  bool normalized = false;

  FusionWeights() = default;
  FusionWeights(int w, int h, int n)
      : width(w), height(h), sources(n),
        logits(static_cast<std::size_t>(w) * h * n, -std::numeric_limits<double>::infinity()) {}
  double& at(int source, std::size_t pixel) { return logits[static_cast<std::size_t>(source) * width * height + pixel]; }
  double at(int source, std::size_t pixel) const {
    return logits[static_cast<std::size_t>(source) * width * height + pixel];
  }
};

struct StageParams {
  int iterations = 8;
  int levels = 4;   // m_s
  int samples = 9;  // m_p
  double temperature = 0.03;  // fusion softmax runs on logit / temperature
};

inline StageParams default_stage_params(Stage stage) {
  return stage == Stage::kCoarse ? StageParams{8, 4, 9} : StageParams{2, 2, 5};
}

// 1/d = u * (1/d_min - 1/d_max) + 1/d_max
inline double depth_from_uniform(double u, double depth_min, double depth_max) {
  const double inv = u * (1.0 / depth_min - 1.0 / depth_max) + 1.0 / depth_max;
  return 1.0 / inv;
}

// Uniform [0, 1) with 53 random bits; identical across standard libraries.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Random depth uniform in inverse depth over the camera's declared range.
inline DepthField init_depth(const CameraView& cam, std::uint64_t seed, Stage stage = Stage::kCoarse) {
  require(cam.depth_min > 0.0 && cam.depth_min < cam.depth_max, ErrorCode::kInvalidInput, "invalid depth range");
  DepthField field(cam.width, cam.height, stage);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < field.size(); ++i) {
    field.depth[i] = depth_from_uniform(uniform01(rng), cam.depth_min, cam.depth_max);
    field.valid[i] = 1;
  }
  return field;
}

// Camera, descriptors and pyramid of one view at one stage.
struct StageView {
  int id = 0;
  CameraView camera;
  FeatureMap features;
  FeaturePyramid pyramid;
};

inline StageView make_stage_view(int id, const CameraView& full_res, const FeatureMap& features, int levels) {
  StageView view;
  view.id = id;
  view.camera = full_res.scaled(features.scale);
  view.camera.width = features.width;
  view.camera.height = features.height;
  view.features = features;
  view.pyramid = build_pyramid(features, levels);
  return view;
}

// Chooses between the cost-peak rule and a loaded GRU. GRU hidden states are
// kept per pair and cleared by reset() at stage boundaries.
class Updater {
 public:
  Updater() = default;
  explicit Updater(std::optional<GruWeights> gru) : gru_(std::move(gru)) {
    if (gru_) gru_->validate();
  }

  bool uses_gru() const { return gru_.has_value(); }
  void reset() { states_.clear(); }

  UpdateResult apply(const CostSlice& slice, const EFlowField& eflow, int pair) {
    if (!gru_) return update_deterministic(slice, eflow);
    if (static_cast<int>(states_.size()) <= pair) states_.resize(pair + 1);
    return update_gru(slice, eflow, *gru_, states_[pair]);
  }

 private:
  std::optional<GruWeights> gru_;
  std::vector<GruState> states_;
};

struct PairIteration {
  EFlowField eflow;
  UpdateResult update;
  std::vector<std::uint8_t> centered;  // see CostSlice::centered
};

// Converts the current depth to this pair's E-flow, scores the epipolar
// neighbourhood and applies the update rule.
inline PairIteration iterate_pair(const DepthField& depth, const StageView& ref, const StageView& src,
                                  const StageParams& params, Updater& updater, int pair = 0) {
  require(depth.width == ref.features.width && depth.height == ref.features.height, ErrorCode::kInvalidInput,
          "depth field does not match the stage resolution");
  const StereoPair geometry(ref.camera, src.camera);
  require(geometry.baseline() > kEpsilonBaseline, ErrorCode::kInvalidConfig,
          "views " + std::to_string(ref.id) + " and " + std::to_string(src.id) + " share a camera center");

  PairIteration out;
  out.eflow = EFlowField(depth.width, depth.height, src.id);
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) {
      const std::size_t i = depth.index(x, y);
      if (!depth.valid[i]) continue;
      const auto frame = geometry.epipolar_frame({static_cast<double>(x), static_cast<double>(y)});
      if (!frame) continue;
      const auto e = geometry.depth_to_eflow(*frame, depth.depth[i]);
      if (!e) continue;
      out.eflow.frames[i] = *frame;
      out.eflow.eflow[i] = *e;
      out.eflow.valid[i] = 1;
    }
  }
  const CostSlice slice = build_cost_slice(ref.features, out.eflow, src.pyramid, params.levels, params.samples);
  out.update = updater.apply(slice, out.eflow, pair);
  out.centered = slice.centered;
  for (std::size_t i = 0; i < out.eflow.size(); ++i) {
    if (out.eflow.valid[i] && out.update.valid[i] && std::isfinite(out.update.delta_eflow[i])) {
      out.eflow.eflow[i] += out.update.delta_eflow[i];
    } else {
      out.eflow.valid[i] = 0;
    }
  }
  return out;
}

// Softmax over the finite logits of the sources that produced a depth, then
// the weighted sum of their depths. Pixels with no such source are masked.
inline DepthField fuse_views(const std::vector<DepthField>& per_pair, FusionWeights weights) {
  require(!per_pair.empty(), ErrorCode::kInvalidInput, "no per-pair depths to fuse");
  const int w = per_pair.front().width, h = per_pair.front().height;
  for (const auto& d : per_pair)
    require(d.width == w && d.height == h, ErrorCode::kInvalidInput, "per-pair depth sizes differ");
  require(weights.width == w && weights.height == h && weights.sources == static_cast<int>(per_pair.size()),
          ErrorCode::kInvalidInput, "fusion weights do not match the per-pair depths");

  DepthField fused(w, h, per_pair.front().stage);
  fused.iteration = per_pair.front().iteration;
  const int n = weights.sources;
  for (std::size_t i = 0; i < fused.size(); ++i) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < n; ++s)
      if (per_pair[s].valid[i] && std::isfinite(weights.at(s, i))) max_logit = std::max(max_logit, weights.at(s, i));
    if (!std::isfinite(max_logit)) {
      for (int s = 0; s < n; ++s) weights.at(s, i) = 0.0;
      continue;
    }
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
      const bool usable = per_pair[s].valid[i] && std::isfinite(weights.at(s, i));
      weights.at(s, i) = usable ? std::exp(weights.at(s, i) - max_logit) : 0.0;
      total += weights.at(s, i);
    }
    double depth = 0.0;
    for (int s = 0; s < n; ++s) {
      weights.at(s, i) /= total;
      depth += weights.at(s, i) * per_pair[s].depth[i];
    }
    fused.depth[i] = depth;
    fused.valid[i] = 1;
  }
  weights.normalized = true;
  return fused;
}

struct StageResult {
  DepthField depth;
  std::vector<DepthField> snapshots;
};

// t rounds of {per-pair update, triangulation, fusion}. The fused depth is
// the only state carried between rounds and masks never grow back.
inline StageResult run_stage(const DepthField& depth_in, const StageView& ref, const std::vector<StageView>& sources,
                             const StageParams& params, Updater& updater) {
  require(params.iterations >= 1, ErrorCode::kInvalidConfig, "a stage needs at least one iteration");
  require(params.temperature > 0.0, ErrorCode::kInvalidConfig, "fusion temperature must be positive");
  require(!sources.empty(), ErrorCode::kInvalidConfig, "a stage needs at least one source view");
  updater.reset();
  StageResult result;
  result.depth = depth_in;
  result.depth.stage = ref.features.scale == stage_scale(Stage::kCoarse) ? Stage::kCoarse : Stage::kFine;
  const int n = static_cast<int>(sources.size());
  for (int t = 0; t < params.iterations; ++t) {
    std::vector<DepthField> per_pair;
    FusionWeights weights(depth_in.width, depth_in.height, n);
    std::vector<std::uint8_t> any_centered(depth_in.size(), 0);
    std::vector<std::vector<std::uint8_t>> centered;
    for (int s = 0; s < n; ++s) {
      PairIteration it = iterate_pair(result.depth, ref, sources[s], params, updater, s);
      const StereoPair geometry(ref.camera, sources[s].camera);
      DepthField pair_depth(depth_in.width, depth_in.height, result.depth.stage);
      pair_depth.iteration = t + 1;
      for (std::size_t i = 0; i < pair_depth.size(); ++i) {
        if (!it.eflow.valid[i]) continue;
        const auto d = geometry.eflow_to_depth(it.eflow.frames[i], it.eflow.eflow[i]);
        if (!d) continue;
        pair_depth.depth[i] = *d;
        pair_depth.valid[i] = 1;
        weights.at(s, i) = it.update.weight[i] / params.temperature;
        if (it.centered[i]) any_centered[i] = 1;
      }
      per_pair.push_back(std::move(pair_depth));
      centered.push_back(std::move(it.centered));
    }
    // A pair whose match sat outside the source frame only counts when no
    // pair kept its match inside.
    for (int s = 0; s < n; ++s)
      for (std::size_t i = 0; i < any_centered.size(); ++i)
        if (any_centered[i] && !centered[s][i]) weights.at(s, i) = -std::numeric_limits<double>::infinity();
    DepthField fused = fuse_views(per_pair, std::move(weights));
    for (std::size_t i = 0; i < fused.size(); ++i) {
      if (!result.depth.valid[i]) {
        fused.valid[i] = 0;
        fused.depth[i] = 0.0;
      }
    }
    fused.iteration = t + 1;
    if (fused.valid_count() == 0)
      throw Error(ErrorCode::kReconstructionFailed, "every pixel of view " + std::to_string(ref.id) + " was masked");
    result.depth = fused;
    result.snapshots.push_back(std::move(fused));
  }
  return result;
}

// Per-output-pixel 3x3 convex weights, index (dy + 1) * 3 + (dx + 1) around
// the coarse pixel that contains the output pixel.
struct ConvexWeights {
  int width = 0;
  int height = 0;
  std::vector<double> weights;
};

inline void validate_convex_weights(const ConvexWeights& w, int fine_width, int fine_height) {
  require(w.width == fine_width && w.height == fine_height &&
              w.weights.size() == static_cast<std::size_t>(fine_width) * fine_height * 9,
          ErrorCode::kInvalidInput, "upsampling weights must hold nine entries per output pixel");
  for (std::size_t i = 0; i < w.weights.size(); i += 9) {
    double sum = 0.0;
    for (int k = 0; k < 9; ++k) {
      const double v = w.weights[i + k];
      require(v >= 0.0 && std::isfinite(v), ErrorCode::kInvalidInput, "upsampling weights must be non-negative");
      sum += v;
    }
    require(std::abs(sum - 1.0) <= 1e-5, ErrorCode::kInvalidInput, "upsampling weights must sum to 1");
  }
}

// Bilinear interpolation written as 3x3 convex weights.
inline ConvexWeights bilinear_convex_weights(int coarse_width, int coarse_height, int factor) {
  ConvexWeights out{coarse_width * factor, coarse_height * factor, {}};
  out.weights.assign(static_cast<std::size_t>(out.width) * out.height * 9, 0.0);
  const auto axis = [factor](int fine, std::array<double, 3>& w) {
    const double u = (fine + 0.5) / factor - 0.5;
    const double d = u - fine / factor;
    w = {0.0, 0.0, 0.0};
    if (d >= 0.0) {
      w[1] = 1.0 - d;
      w[2] = d;
    } else {
      w[0] = -d;
      w[1] = 1.0 + d;
    }
  };
  for (int y = 0; y < out.height; ++y) {
    std::array<double, 3> wy;
    axis(y, wy);
    for (int x = 0; x < out.width; ++x) {
      std::array<double, 3> wx;
      axis(x, wx);
      double* dst = out.weights.data() + (static_cast<std::size_t>(y) * out.width + x) * 9;
      for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) dst[j * 3 + i] = wy[j] * wx[i];
    }
  }
  return out;
}

// Each output pixel is a convex combination of the 3x3 coarse neighbourhood
// of the coarse pixel containing it. Masked or out-of-range neighbours are
// dropped and the remaining weights renormalized.
inline DepthField upsample_depth(const DepthField& coarse, int factor, const ConvexWeights* weights = nullptr) {
  require(factor >= 1, ErrorCode::kInvalidInput, "upsampling factor must be positive");
  const int fw = coarse.width * factor, fh = coarse.height * factor;
  ConvexWeights defaults;
  if (weights) {
    validate_convex_weights(*weights, fw, fh);
  } else {
    defaults = bilinear_convex_weights(coarse.width, coarse.height, factor);
    weights = &defaults;
  }
  DepthField fine(fw, fh, Stage::kFine);
  for (int y = 0; y < fh; ++y) {
    for (int x = 0; x < fw; ++x) {
      const int cx = x / factor, cy = y / factor;
      const double* w = weights->weights.data() + (static_cast<std::size_t>(y) * fw + x) * 9;
      double sum = 0.0, total = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const double wk = w[(dy + 1) * 3 + (dx + 1)];
          const int sx = cx + dx, sy = cy + dy;
          if (wk <= 0.0 || sx < 0 || sy < 0 || sx >= coarse.width || sy >= coarse.height) continue;
          const std::size_t ci = coarse.index(sx, sy);
          if (!coarse.valid[ci]) continue;
          sum += wk * coarse.depth[ci];
          total += wk;
        }
      }
      if (total > 0.0) {
        fine.depth[fine.index(x, y)] = sum / total;
        fine.valid[fine.index(x, y)] = 1;
      }
    }
  }
  return fine;
}

// Averages the valid full-resolution depths inside each factor x factor block.
inline DepthField downsample_depth(const DepthField& full, int factor, int out_width, int out_height) {
  DepthField out(out_width, out_height, factor == stage_scale(Stage::kCoarse) ? Stage::kCoarse : Stage::kFine);
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      double sum = 0.0;
      int count = 0;
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) {
          const int sx = x * factor + dx, sy = y * factor + dy;
          if (sx >= full.width || sy >= full.height || !full.valid[full.index(sx, sy)]) continue;
          sum += full.depth[full.index(sx, sy)];
          ++count;
        }
      }
      if (count == factor * factor) {
        out.depth[out.index(x, y)] = sum / count;
        out.valid[out.index(x, y)] = 1;
      }
    }
  }
  return out;
}

inline constexpr double kLossGamma = 0.9;

// sum_i gamma^i * mean |norm(gt) - norm(d_i)| over one stage's snapshots,
// with depths normalized in inverse depth over the declared range.
inline double compute_loss(const std::vector<DepthField>& snapshots, const DepthField& gt, double depth_min,
                           double depth_max, double gamma = kLossGamma) {
  require(!snapshots.empty(), ErrorCode::kUndefinedMetric, "no depth snapshots");
  double loss = 0.0;
  double weight = 1.0;
  for (const DepthField& d : snapshots) {
    require(d.width == gt.width && d.height == gt.height, ErrorCode::kInvalidInput,
            "snapshot and ground truth sizes differ");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!d.valid[i] || !gt.valid[i]) continue;
      sum += std::abs(normalize_depth(gt.depth[i], depth_min, depth_max) -
                      normalize_depth(d.depth[i], depth_min, depth_max));
      ++count;
    }
    require(count > 0, ErrorCode::kUndefinedMetric, "snapshot has no valid pixel overlapping the ground truth");
    loss += weight * sum / static_cast<double>(count);
    weight *= gamma;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Whole-view reconstruction.

struct ReconstructionOptions {
  StageParams coarse = default_stage_params(Stage::kCoarse);
  StageParams fine = default_stage_params(Stage::kFine);
  std::uint64_t seed = 0;
  DescriptorConfig descriptor;
  std::optional<GruWeights> coarse_gru;
  std::optional<GruWeights> fine_gru;
  std::optional<ConvexWeights> upsample_weights;
};

struct SceneFeatures {
  std::vector<FeatureMap> coarse;
  std::vector<FeatureMap> fine;
};

inline SceneFeatures extract_scene_features(const std::vector<RgbImage>& images, const DescriptorConfig& config = {}) {
  SceneFeatures out;
  for (const auto& image : images) {
    const GrayImage gray = to_gray(image);
    out.coarse.push_back(extract_features(gray, Stage::kCoarse, config));
    out.fine.push_back(extract_features(gray, Stage::kFine, config));
  }
  return out;
}

struct ViewReconstruction {
  int view = 0;
  DepthField initial;
  StageResult coarse;
  StageResult fine;
  const DepthField& depth() const { return fine.depth; }
};

// Coarse-stage camera of a view (declared range kept).
inline CameraView coarse_camera(const CameraView& cam, const SceneFeatures& features, int view) {
  CameraView c = cam.scaled(stage_scale(Stage::kCoarse));
  c.width = features.coarse[view].width;
  c.height = features.coarse[view].height;
  return c;
}

inline DepthField initial_depth(const std::vector<CameraView>& cameras, const SceneFeatures& features, int ref,
                                std::uint64_t seed) {
  return init_depth(coarse_camera(cameras[ref], features, ref), mix_seed(seed, static_cast<std::uint64_t>(ref)));
}

// The declared depth range is read only by initial_depth; a caller-supplied
// initial field makes the result independent of the range.
inline ViewReconstruction reconstruct_view(const std::vector<CameraView>& cameras, const SceneFeatures& features,
                                           int ref, const std::vector<int>& sources,
                                           const ReconstructionOptions& options,
                                           const DepthField* initial = nullptr) {
  require(ref >= 0 && ref < static_cast<int>(cameras.size()), ErrorCode::kInvalidInput, "reference view out of range");
  require(!sources.empty(), ErrorCode::kInvalidConfig, "reference view has no source views");
  ViewReconstruction out;
  out.view = ref;

  const auto stage_views = [&](const std::vector<FeatureMap>& maps, int levels, StageView& ref_view,
                               std::vector<StageView>& src_views) {
    ref_view = make_stage_view(ref, cameras[ref], maps[ref], 1);
    for (int s : sources) {
      require(s >= 0 && s < static_cast<int>(cameras.size()) && s != ref, ErrorCode::kInvalidConfig,
              "bad source index " + std::to_string(s));
      src_views.push_back(make_stage_view(s, cameras[s], maps[s], levels));
    }
  };

  StageView coarse_ref;
  std::vector<StageView> coarse_src;
  stage_views(features.coarse, options.coarse.levels, coarse_ref, coarse_src);
  out.initial = initial ? *initial : initial_depth(cameras, features, ref, options.seed);
  out.initial.stage = Stage::kCoarse;
  require(out.initial.width == coarse_ref.features.width && out.initial.height == coarse_ref.features.height,
          ErrorCode::kInvalidInput, "initial depth does not match the coarse resolution");
  Updater coarse_updater(options.coarse_gru);
  out.coarse = run_stage(out.initial, coarse_ref, coarse_src, options.coarse, coarse_updater);

  StageView fine_ref;
  std::vector<StageView> fine_src;
  stage_views(features.fine, options.fine.levels, fine_ref, fine_src);
  const int factor = stage_scale(Stage::kCoarse) / stage_scale(Stage::kFine);
  DepthField upsampled =
      upsample_depth(out.coarse.depth, factor, options.upsample_weights ? &*options.upsample_weights : nullptr);
  Updater fine_updater(options.fine_gru);
  out.fine = run_stage(upsampled, fine_ref, fine_src, options.fine, fine_updater);
  return out;
}

}  // namespace epiflow
