#pragma once

// Synthetic scenes with analytic ground truth, scene-level reconstruction
// and point-cloud evaluation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "epiflow/error.hpp"
#include "epiflow/fuse3d.hpp"
#include "epiflow/geom.hpp"
#include "epiflow/io.hpp"
#include "epiflow/pipeline.hpp"
#include "epiflow/raster.hpp"

namespace epiflow {

// ---------------------------------------------------------------------------
// Scene description

enum class ScenePreset { kPlane, kSphere, kBoxes };

inline const char* preset_name(ScenePreset p) {
  switch (p) {
    case ScenePreset::kPlane: return "plane";
    case ScenePreset::kSphere: return "sphere";
    case ScenePreset::kBoxes: return "boxes";
  }
  return "?";
}

inline ScenePreset parse_preset(const std::string& name) {
  if (name == "plane") return ScenePreset::kPlane;
  if (name == "sphere") return ScenePreset::kSphere;
  if (name == "boxes") return ScenePreset::kBoxes;
  throw Error(ErrorCode::kInvalidConfig, "unknown scene preset '" + name + "' (plane, sphere, boxes)");
}

struct SceneSpec {
  ScenePreset preset = ScenePreset::kPlane;
  int width = 160;
  int height = 128;
  int views = 3;
  double focal = 140.0;
  double distance = 2.0;  // depth of the surface on the reference optical axis
  double baseline = 1.0;  // radius of the source camera ring
  bool toe_in = false;    // rotate sources to look at the axis point at `distance`
  // Declared depth range as multiples of `distance`.
  double range_near = 0.7;
  double range_far = 1.6;
  int supersample = 3;
  double texture_scale = 1.0;  // noise cycles per world unit, lowest octave
  int texture_octaves = 5;

  void validate() const {
    require(width >= 16 && height >= 16, ErrorCode::kInvalidConfig, "scene images must be at least 16x16");
    require(views >= 2, ErrorCode::kInvalidConfig, "a scene needs at least two views");
    require(focal > 0.0 && distance > 0.0, ErrorCode::kInvalidConfig, "focal length and distance must be positive");
    require(baseline > kEpsilonBaseline, ErrorCode::kInvalidConfig, "camera ring baseline must be non-zero");
    require(range_near > 0.0 && range_near < range_far, ErrorCode::kInvalidConfig, "bad declared depth range");
    require(supersample >= 1 && texture_octaves >= 1 && texture_scale > 0.0, ErrorCode::kInvalidConfig,
            "bad texture parameters");
  }

  // Full-resolution pixel footprint at the scene distance.
  double footprint() const { return distance / focal; }
};

struct Primitive {
  enum class Kind { kPlane, kSphere, kBox };
  Kind kind = Kind::kPlane;
  Vec3 a = Vec3::Zero();  // plane point / sphere centre / box min
  Vec3 b = Vec3::Zero();  // plane normal / box max
  double radius = 0.0;
  Vec3 tint = Vec3::Ones();

  // Smallest ray parameter t > 0 with origin + t * dir on the surface.
  std::optional<double> intersect(const Vec3& origin, const Vec3& dir) const {
    constexpr double kMinT = 1e-9;
    switch (kind) {
      case Kind::kPlane: {
        const double denom = b.dot(dir);
        if (std::abs(denom) < 1e-15) return std::nullopt;
        const double t = b.dot(a - origin) / denom;
        return t > kMinT ? std::optional(t) : std::nullopt;
      }
      case Kind::kSphere: {
        const Vec3 oc = origin - a;
        const double qa = dir.squaredNorm();
        const double qb = oc.dot(dir);
        const double qc = oc.squaredNorm() - radius * radius;
        const double disc = qb * qb - qa * qc;
        if (disc < 0.0) return std::nullopt;
        const double root = std::sqrt(disc);
        const double t0 = (-qb - root) / qa, t1 = (-qb + root) / qa;
        if (t0 > kMinT) return t0;
        if (t1 > kMinT) return t1;
        return std::nullopt;
      }
      case Kind::kBox: {
        double tmin = -std::numeric_limits<double>::infinity();
        double tmax = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 3; ++k) {
          if (std::abs(dir[k]) < 1e-15) {
            if (origin[k] < a[k] || origin[k] > b[k]) return std::nullopt;
            continue;
          }
          double t0 = (a[k] - origin[k]) / dir[k], t1 = (b[k] - origin[k]) / dir[k];
          if (t0 > t1) std::swap(t0, t1);
          tmin = std::max(tmin, t0);
          tmax = std::min(tmax, t1);
        }
        if (tmin > tmax) return std::nullopt;
        if (tmin > kMinT) return tmin;
        if (tmax > kMinT) return tmax;
        return std::nullopt;
      }
    }
    return std::nullopt;
  }
};

struct Hit {
  double t = 0.0;
  int primitive = -1;
};

struct SceneGeometry {
  std::vector<Primitive> primitives;

  std::optional<Hit> cast(const Vec3& origin, const Vec3& dir) const {
    std::optional<Hit> best;
    for (std::size_t i = 0; i < primitives.size(); ++i) {
      if (auto t = primitives[i].intersect(origin, dir); t && (!best || *t < best->t))
        best = Hit{*t, static_cast<int>(i)};
    }
    return best;
  }
};

inline SceneGeometry preset_geometry(const SceneSpec& spec) {
  const double D = spec.distance;
  SceneGeometry g;
  using K = Primitive::Kind;
  switch (spec.preset) {
    case ScenePreset::kPlane:
      g.primitives.push_back({K::kPlane, {0, 0, D}, {0, 0, -1}, 0.0, {1.0, 0.9, 0.8}});
      break;
    case ScenePreset::kSphere:
      g.primitives.push_back({K::kSphere, {0, 0, 3 * D}, {}, 2 * D, {0.8, 0.9, 1.0}});
      g.primitives.push_back({K::kPlane, {0, 0, 6 * D}, {0, 0, -1}, 0.0, {1.0, 1.0, 0.9}});
      break;
    case ScenePreset::kBoxes:
      g.primitives.push_back({K::kPlane, {0, 0, 1.35 * D}, {0, 0, -1}, 0.0, {0.9, 0.9, 0.9}});
      g.primitives.push_back({K::kBox, {-0.55 * D, -0.35 * D, 0.9 * D}, {-0.1 * D, 0.25 * D, 1.3 * D}, 0.0,
                              {1.0, 0.8, 0.7}});
      g.primitives.push_back({K::kBox, {0.05 * D, -0.2 * D, 1.05 * D}, {0.5 * D, 0.3 * D, 1.3 * D}, 0.0,
                              {0.7, 0.9, 1.0}});
      break;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Procedural texture: multi-octave 3D value noise.

struct ValueNoise {
  std::uint64_t seed = 0;

  double lattice(std::int64_t x, std::int64_t y, std::int64_t z, int octave) const {
    std::uint64_t h = seed ^ (static_cast<std::uint64_t>(octave) * 0x9e3779b97f4a7c15ull);
    for (std::int64_t v : {x, y, z}) {
      h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
      h = mix_seed(h, 0);
    }
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  }

  double octave(const Vec3& p, int o) const {
    const Vec3 f(std::floor(p.x()), std::floor(p.y()), std::floor(p.z()));
    const Vec3 u = p - f;
    const auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
    const double sx = smooth(u.x()), sy = smooth(u.y()), sz = smooth(u.z());
    const auto ix = static_cast<std::int64_t>(f.x()), iy = static_cast<std::int64_t>(f.y()),
               iz = static_cast<std::int64_t>(f.z());
    double value = 0.0;
    for (int dz = 0; dz <= 1; ++dz)
      for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
          const double w = (dx ? sx : 1 - sx) * (dy ? sy : 1 - sy) * (dz ? sz : 1 - sz);
          value += w * lattice(ix + dx, iy + dy, iz + dz, o);
        }
    return value;
  }

  // In [0, 1].
  double operator()(const Vec3& p, double scale, int octaves) const {
    double sum = 0.0, norm = 0.0, amp = 1.0, freq = scale;
    for (int o = 0; o < octaves; ++o) {
      sum += amp * octave(p * freq, o);
      norm += amp;
      amp *= 0.6;
      freq *= 2.0;
    }
    return sum / norm;
  }
};

// ---------------------------------------------------------------------------
// Rendering

struct SyntheticScene {
  SceneSpec spec;
  std::uint64_t seed = 0;
  SceneGeometry geometry;
  std::vector<CameraView> cameras;
  std::vector<RgbImage> images;
  std::vector<DepthField> depths;          // full-resolution ground truth
  std::vector<std::vector<int>> sources;   // per view, the other views

  int size() const { return static_cast<int>(cameras.size()); }
};

inline Mat3 toe_in_rotation(const SceneSpec& spec, const Vec3& eye, const Vec3& target) {
  return spec.toe_in ? look_at_rotation(eye, target) : Mat3::Identity();
}

// Reference camera at the origin looking down +z; sources on a ring of
// radius `baseline` around it, optionally toed in towards the axis point.
inline std::vector<CameraView> ring_cameras(const SceneSpec& spec) {
  spec.validate();
  Mat3 K = Mat3::Identity();
  K(0, 0) = K(1, 1) = spec.focal;
  K(0, 2) = (spec.width - 1) / 2.0;
  K(1, 2) = (spec.height - 1) / 2.0;
  const Vec3 target(0, 0, spec.distance);
  std::vector<CameraView> cams;
  for (int v = 0; v < spec.views; ++v) {
    Vec3 eye = Vec3::Zero();
    if (v > 0) {
      const double angle = 2.0 * std::numbers::pi * (v - 1) / (spec.views - 1);
      eye = spec.baseline * Vec3(std::cos(angle), std::sin(angle), 0.0);
    }
    CameraView c;
    c.K = K;
    c.R = toe_in_rotation(spec, eye, target);
    c.T = -c.R * eye;
    c.depth_min = spec.range_near * spec.distance;
    c.depth_max = spec.range_far * spec.distance;
    c.width = spec.width;
    c.height = spec.height;
    cams.push_back(c);
  }
  return cams;
}

// Ray through pixel p of `cam`, parameterised so that t equals camera depth.
inline std::pair<Vec3, Vec3> pixel_ray(const CameraView& cam, const Pixel& p) {
  return {cam.center(), cam.R.transpose() * (cam.K.inverse() * p.homogeneous())};
}

// Analytic depth at every pixel centre of `cam` (any resolution).
inline DepthField analytic_depth(const SceneGeometry& geometry, const CameraView& cam) {
  DepthField out(cam.width, cam.height);
  const Vec3 origin = cam.center();
  const Mat3 back = cam.R.transpose() * cam.K.inverse();
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      if (auto hit = geometry.cast(origin, back * Vec3(x, y, 1.0))) {
        out.depth[out.index(x, y)] = hit->t;
        out.valid[out.index(x, y)] = 1;
      }
    }
  return out;
}

inline Vec3 surface_color(const SyntheticScene& scene, const Vec3& point, int primitive) {
  const ValueNoise noise{scene.seed};
  const double g = 0.1 + 0.8 * noise(point, scene.spec.texture_scale, scene.spec.texture_octaves);
  return g * scene.geometry.primitives[primitive].tint;
}

inline RgbImage render_view(const SyntheticScene& scene, const CameraView& cam) {
  const int ss = scene.spec.supersample;
  RgbImage image(cam.width, cam.height, 3);
  const Vec3 origin = cam.center();
  const Mat3 back = cam.R.transpose() * cam.K.inverse();
  parallel_for(cam.height, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < cam.width; ++x) {
        Vec3 color = Vec3::Zero();
        for (int j = 0; j < ss; ++j)
          for (int i = 0; i < ss; ++i) {
            const Vec3 dir = back * Vec3(x + (i + 0.5) / ss - 0.5, y + (j + 0.5) / ss - 0.5, 1.0);
            if (auto hit = scene.geometry.cast(origin, dir))
              color += surface_color(scene, origin + hit->t * dir, hit->primitive);
          }
        color /= ss * ss;
        for (int c = 0; c < 3; ++c)
          image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(255.0 * color[c]), 0L, 255L));
      }
  });
  return image;
}

inline SyntheticScene render_scene(const SceneSpec& spec, std::uint64_t seed = 0) {
  spec.validate();
  SyntheticScene scene;
  scene.spec = spec;
  scene.seed = seed;
  scene.geometry = preset_geometry(spec);
  scene.cameras = ring_cameras(spec);
  for (int v = 0; v < spec.views; ++v) {
    scene.images.push_back(render_view(scene, scene.cameras[v]));
    scene.depths.push_back(analytic_depth(scene.geometry, scene.cameras[v]));
    std::vector<int> others;
    for (int s = 0; s < spec.views; ++s)
      if (s != v) others.push_back(s);
    scene.sources.push_back(others);
  }
  return scene;
}

// Ground truth at the resolution of an estimated depth map.
inline DepthField ground_truth_like(const SyntheticScene& scene, int view, const DepthField& like) {
  return analytic_depth(scene.geometry, camera_for_depth(scene.cameras[view], like));
}

// Whether a world point is the first surface seen by `cam` and inside its image.
inline bool observed_by(const SyntheticScene& scene, const Vec3& point, const CameraView& cam) {
  const auto proj = try_project(point, cam);
  if (!proj) return false;
  const Pixel p = proj->pixel;
  if (p.x < -0.5 || p.y < -0.5 || p.x > cam.width - 0.5 || p.y > cam.height - 0.5) return false;
  const auto [origin, dir] = pixel_ray(cam, p);
  const auto hit = scene.geometry.cast(origin, dir);
  return hit && std::abs(hit->t - proj->depth) <= 1e-6 * proj->depth;
}

// Surface points behind pixel centres of every view (downsampled by
// `factor`) that at least one other view also observes.
inline PointCloud ground_truth_cloud(const SyntheticScene& scene, int factor = 1) {
  PointCloud cloud;
  for (int v = 0; v < scene.size(); ++v) {
    const CameraView cam = scene.cameras[v].scaled(factor);
    const Vec3 origin = cam.center();
    const Mat3 back = cam.R.transpose() * cam.K.inverse();
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        const Vec3 dir = back * Vec3(x, y, 1.0);
        const auto hit = scene.geometry.cast(origin, dir);
        if (!hit) continue;
        const Vec3 P = origin + hit->t * dir;
        bool seen = false;
        for (int s = 0; s < scene.size() && !seen; ++s)
          if (s != v) seen = observed_by(scene, P, scene.cameras[s]);
        if (!seen) continue;
        const Vec3 c = surface_color(scene, P, hit->primitive);
        cloud.push_back(P,
                        {static_cast<std::uint8_t>(std::lround(255 * std::clamp(c[0], 0.0, 1.0))),
                         static_cast<std::uint8_t>(std::lround(255 * std::clamp(c[1], 0.0, 1.0))),
                         static_cast<std::uint8_t>(std::lround(255 * std::clamp(c[2], 0.0, 1.0)))},
                        {v, x, y});
      }
  }
  return cloud;
}

inline constexpr double kTextureMinStd = 2.0 / 255.0;

// Per-pixel flag: 5x5 luminance standard deviation above `min_std`
// (intensity units in [0, 1]).
inline std::vector<std::uint8_t> textured_mask(const RgbImage& image, double min_std = kTextureMinStd) {
  const GrayImage g = to_gray(image);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(g.width) * g.height, 0);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      double s = 0.0, s2 = 0.0;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
          const double v = g.at(reflect_index(x + dx, g.width), reflect_index(y + dy, g.height));
          s += v;
          s2 += v * v;
        }
      const double var = s2 / 25.0 - (s / 25.0) * (s / 25.0);
      mask[static_cast<std::size_t>(y) * g.width + x] = var > min_std * min_std ? 1 : 0;
    }
  return mask;
}

inline double textured_fraction(const RgbImage& image, double min_std = kTextureMinStd) {
  const auto mask = textured_mask(image, min_std);
  return static_cast<double>(std::count(mask.begin(), mask.end(), 1)) / static_cast<double>(mask.size());
}

// Ground truth restricted to the pixels an estimate can be scored on: the
// surface point is seen by one of the view's sources and the full-resolution
// pixel at the sample centre is textured.
inline DepthField scored_ground_truth(const SyntheticScene& scene, int view, const DepthField& like) {
  DepthField gt = ground_truth_like(scene, view, like);
  const int factor = depth_map_factor(scene.cameras[view], like);
  const CameraView cam = camera_for_depth(scene.cameras[view], like);
  const auto textured = textured_mask(scene.images[view]);
  const RgbImage& image = scene.images[view];
  for (int y = 0; y < gt.height; ++y)
    for (int x = 0; x < gt.width; ++x) {
      const std::size_t i = gt.index(x, y);
      if (!gt.valid[i]) continue;
      const Vec3 P = reproject({static_cast<double>(x), static_cast<double>(y)}, gt.depth[i], cam);
      bool seen = false;
      for (int s : scene.sources[view])
        if ((seen = observed_by(scene, P, scene.cameras[s]))) break;
      const int fx = std::min(image.width - 1, factor * x + factor / 2);
      const int fy = std::min(image.height - 1, factor * y + factor / 2);
      if (!seen || !textured[static_cast<std::size_t>(fy) * image.width + fx]) {
        gt.valid[i] = 0;
        gt.depth[i] = 0.0;
      }
    }
  return gt;
}

inline void write_synthetic_scene(const SyntheticScene& scene, const std::string& dir) {
  write_scene(dir, scene.images, scene.cameras, scene.sources);
  const fs::path root(dir);
  fs::create_directories(root / "gt");
  for (int v = 0; v < scene.size(); ++v)
    write_depth_pfm(scene.depths[v], (root / "gt" / (view_stem(v) + ".pfm")).string());
  write_ply(ground_truth_cloud(scene), (root / "gt.ply").string());
  const nlohmann::json meta{{"preset", preset_name(scene.spec.preset)},
                            {"seed", scene.seed},
                            {"views", scene.size()},
                            {"width", scene.spec.width},
                            {"height", scene.spec.height},
                            {"footprint", scene.spec.footprint()}};
  std::ofstream((root / "meta.json").string()) << meta.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Scene-level reconstruction

struct SceneReconstruction {
  std::vector<ViewReconstruction> views;
  std::vector<DepthField> depths;  // final fine-stage depth per view
};

inline SceneReconstruction reconstruct_scene(const std::vector<RgbImage>& images,
                                             const std::vector<CameraView>& cameras,
                                             const std::vector<std::vector<int>>& sources,
                                             const ReconstructionOptions& options,
                                             const std::vector<int>& only_views = {},
                                             const std::vector<DepthField>* initial = nullptr) {
  require(images.size() == cameras.size() && images.size() == sources.size(), ErrorCode::kInvalidInput,
          "one image, camera and source list per view required");
  for (std::size_t v = 0; v < images.size(); ++v)
    require(images[v].width == cameras[v].width && images[v].height == cameras[v].height, ErrorCode::kInvalidInput,
            "image " + std::to_string(v) + " does not match its camera size");
  const SceneFeatures features = extract_scene_features(images, options.descriptor);
  SceneReconstruction out;
  for (int v = 0; v < static_cast<int>(images.size()); ++v) {
    if (!only_views.empty() && std::find(only_views.begin(), only_views.end(), v) == only_views.end()) continue;
    const DepthField* init = initial ? &(*initial)[v] : nullptr;
    out.views.push_back(reconstruct_view(cameras, features, v, sources[v], options, init));
    out.depths.push_back(out.views.back().depth());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

// Nearest-neighbour queries over a fixed point set.
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& points) : points_(points) {
    order_.resize(points_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (!order_.empty()) build(0, order_.size(), 0);
  }

  // Squared distance to the nearest point and its index.
  std::pair<double, std::size_t> nearest(const Vec3& q) const {
    require(!points_.empty(), ErrorCode::kUndefinedMetric, "nearest neighbour in an empty set");
    double best = std::numeric_limits<double>::infinity();
    std::size_t index = 0;
    search(0, order_.size(), 0, q, best, index);
    return {best, index};
  }

 private:
  static constexpr std::size_t kLeaf = 8;

  void build(std::size_t lo, std::size_t hi, int axis) {
    if (hi - lo <= kLeaf) return;
    const std::size_t mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                     [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
    build(lo, mid, (axis + 1) % 3);
    build(mid + 1, hi, (axis + 1) % 3);
  }

  void search(std::size_t lo, std::size_t hi, int axis, const Vec3& q, double& best, std::size_t& index) const {
    if (hi - lo <= kLeaf) {
      for (std::size_t k = lo; k < hi; ++k) {
        const double d = (points_[order_[k]] - q).squaredNorm();
        if (d < best) {
          best = d;
          index = order_[k];
        }
      }
      return;
    }
    const std::size_t mid = (lo + hi) / 2;
    const Vec3& pivot = points_[order_[mid]];
    const double d = (pivot - q).squaredNorm();
    if (d < best) {
      best = d;
      index = order_[mid];
    }
    const double delta = q[axis] - pivot[axis];
    const int next = (axis + 1) % 3;
    if (delta < 0) {
      search(lo, mid, next, q, best, index);
      if (delta * delta < best) search(mid + 1, hi, next, q, best, index);
    } else {
      search(mid + 1, hi, next, q, best, index);
      if (delta * delta < best) search(lo, mid, next, q, best, index);
    }
  }

  const std::vector<Vec3>& points_;
  std::vector<std::size_t> order_;
};

struct EvalReport {
  double threshold = 0.0;
  double accuracy = 0.0;      // mean reconstruction-to-GT distance, inliers only
  double completeness = 0.0;  // mean GT-to-reconstruction distance, inliers only
  double overall = 0.0;
  double accuracy_outliers = 0.0;      // fraction of reconstruction beyond threshold
  double completeness_outliers = 0.0;  // fraction of GT beyond threshold
  std::size_t reconstructed_points = 0;
  std::size_t gt_points = 0;
  std::vector<double> thresholds;
  std::vector<double> precision;  // fraction of reconstruction within each threshold
  std::vector<double> recall;     // fraction of GT within each threshold
};

namespace detail {

inline std::vector<double> nn_distances(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
  const KdTree tree(to);
  std::vector<double> out(from.size());
  parallel_for(static_cast<int>(from.size()), [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) out[i] = std::sqrt(tree.nearest(from[i]).first);
  });
  return out;
}

}  // namespace detail

// Distances beyond `threshold` count as outliers and are excluded from the
// accuracy and completeness means.
inline EvalReport evaluate(const PointCloud& reconstruction, const PointCloud& gt, double threshold,
                           std::vector<double> thresholds = {}) {
  require(!reconstruction.empty(), ErrorCode::kUndefinedMetric, "reconstruction is empty");
  require(!gt.empty(), ErrorCode::kUndefinedMetric, "ground-truth cloud is empty");
  require(threshold > 0.0, ErrorCode::kInvalidConfig, "distance threshold must be positive");
  if (thresholds.empty()) thresholds = {threshold / 8, threshold / 4, threshold / 2, threshold};
  EvalReport r;
  r.threshold = threshold;
  r.thresholds = thresholds;
  r.reconstructed_points = reconstruction.size();
  r.gt_points = gt.size();
  const auto acc = detail::nn_distances(reconstruction.points, gt.points);
  const auto comp = detail::nn_distances(gt.points, reconstruction.points);

  const auto summarize = [&](const std::vector<double>& d, double& mean, double& outliers,
                             std::vector<double>& within, const char* what) {
    double sum = 0.0;
    std::size_t inliers = 0;
    for (double v : d)
      if (v <= threshold) {
        sum += v;
        ++inliers;
      }
    if (inliers == 0) throw Error(ErrorCode::kUndefinedMetric, std::string("no ") + what + " distance within threshold");
    mean = sum / static_cast<double>(inliers);
    outliers = 1.0 - static_cast<double>(inliers) / static_cast<double>(d.size());
    for (double t : thresholds)
      within.push_back(static_cast<double>(std::count_if(d.begin(), d.end(), [t](double v) { return v <= t; })) /
                       static_cast<double>(d.size()));
  };
  summarize(acc, r.accuracy, r.accuracy_outliers, r.precision, "accuracy");
  summarize(comp, r.completeness, r.completeness_outliers, r.recall, "completeness");
  r.overall = 0.5 * (r.accuracy + r.completeness);
  return r;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  return {{"threshold", r.threshold},
          {"accuracy", r.accuracy},
          {"completeness", r.completeness},
          {"overall", r.overall},
          {"accuracy_outliers", r.accuracy_outliers},
          {"completeness_outliers", r.completeness_outliers},
          {"reconstructed_points", r.reconstructed_points},
          {"gt_points", r.gt_points},
          {"thresholds", r.thresholds},
          {"precision", r.precision},
          {"recall", r.recall}};
}

struct DepthErrorStats {
  std::size_t gt_pixels = 0;
  std::size_t estimated = 0;  // gt pixels with a valid estimate
  double within = 0.0;        // fraction of gt pixels with relative error below the bound
  double mean_relative = 0.0;  // over estimated pixels
};

inline DepthErrorStats depth_error(const DepthField& estimate, const DepthField& gt, double relative_bound = 0.01) {
  require(estimate.width == gt.width && estimate.height == gt.height, ErrorCode::kInvalidInput,
          "estimate and ground truth sizes differ");
  DepthErrorStats s;
  std::size_t good = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid[i]) continue;
    ++s.gt_pixels;
    if (!estimate.valid[i]) continue;
    ++s.estimated;
    const double rel = std::abs(estimate.depth[i] - gt.depth[i]) / gt.depth[i];
    sum += rel;
    if (rel < relative_bound) ++good;
  }
  require(s.gt_pixels > 0, ErrorCode::kUndefinedMetric, "ground truth has no valid pixel");
  s.within = static_cast<double>(good) / static_cast<double>(s.gt_pixels);
  s.mean_relative = s.estimated ? sum / static_cast<double>(s.estimated) : 0.0;
  return s;
}

}  // namespace epiflow
