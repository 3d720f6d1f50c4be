#pragma once

// Geometric-consistency filtering of per-view depth maps and their fusion
// into a colored point cloud.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "epiflow/binary.hpp"
#include "epiflow/error.hpp"
#include "epiflow/geom.hpp"
#include "epiflow/pipeline.hpp"
#include "epiflow/raster.hpp"

namespace epiflow {

using Color = std::array<std::uint8_t, 3>;

struct PointSource {
  int view = 0;
  int x = 0;
  int y = 0;
};

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Color> colors;
  std::vector<PointSource> sources;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void push_back(const Vec3& p, const Color& c, const PointSource& s = {}) {
    points.push_back(p);
    colors.push_back(c);
    sources.push_back(s);
  }
};

struct ConsistencyParams {
  double max_reproj_error = 1.0;
  double max_rel_depth_diff = 0.01;
  int min_consistent_views = 2;
  bool enforce_range = false;

  void validate() const {
    require(max_reproj_error > 0.0 && max_rel_depth_diff > 0.0, ErrorCode::kInvalidConfig,
            "consistency thresholds must be positive");
    require(min_consistent_views >= 1, ErrorCode::kInvalidConfig, "min_consistent_views must be at least 1");
  }
};

// Downsampling factor between a full-resolution camera and a depth map,
// allowing for the padding to a multiple of 16 done before extraction.
inline int depth_map_factor(const CameraView& cam, const DepthField& depth) {
  require(depth.width > 0 && depth.height > 0, ErrorCode::kInvalidInput, "empty depth map");
  const int padded_w = (cam.width + kPadMultiple - 1) / kPadMultiple * kPadMultiple;
  const int padded_h = (cam.height + kPadMultiple - 1) / kPadMultiple * kPadMultiple;
  for (int f : {1, 2, 4, 8, 16}) {
    if (padded_w == depth.width * f && padded_h == depth.height * f) return f;
    if ((cam.width + f - 1) / f == depth.width && (cam.height + f - 1) / f == depth.height) return f;
  }
  throw Error(ErrorCode::kInvalidInput, "depth map " + std::to_string(depth.width) + "x" +
                                            std::to_string(depth.height) + " does not match camera " +
                                            std::to_string(cam.width) + "x" + std::to_string(cam.height));
}

inline CameraView camera_for_depth(const CameraView& cam, const DepthField& depth) {
  CameraView c = cam.scaled(depth_map_factor(cam, depth));
  c.width = depth.width;
  c.height = depth.height;
  return c;
}

namespace detail {

// Bilinear depth lookup over valid neighbours; false when none contributes.
inline bool sample_depth(const DepthField& field, const Pixel& p, double& out) {
  if (!(p.x >= -0.5 && p.y >= -0.5 && p.x <= field.width - 0.5 && p.y <= field.height - 0.5)) return false;
  const double x = std::clamp(p.x, 0.0, field.width - 1.0);
  const double y = std::clamp(p.y, 0.0, field.height - 1.0);
  const int x0 = std::min(static_cast<int>(x), std::max(0, field.width - 2));
  const int y0 = std::min(static_cast<int>(y), std::max(0, field.height - 2));
  const double fx = x - x0, fy = y - y0;
  const std::array<double, 4> w{(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  double sum = 0.0, total = 0.0;
  for (int i = 0; i < 4; ++i) {
    const int sx = std::min(x0 + (i & 1), field.width - 1);
    const int sy = std::min(y0 + (i >> 1), field.height - 1);
    const std::size_t idx = field.index(sx, sy);
    if (w[i] <= 0.0 || !field.valid[idx]) continue;
    sum += w[i] * field.depth[idx];
    total += w[i];
  }
  if (total < 0.5) return false;
  out = sum / total;
  return true;
}

}  // namespace detail

// Outcome of checking one reference pixel against one source view.
struct PairCheck {
  bool visible = false;      // projects into the source and finds a depth there
  bool depth_ok = false;     // step 1: source depth brought back agrees in depth
  bool reproj_ok = false;    // step 2: round trip lands near the start pixel
  double rel_depth_diff = 0.0;
  double reproj_error = 0.0;
  bool consistent() const { return visible && depth_ok && reproj_ok; }
};

// Cameras here are at depth-map resolution.
inline PairCheck check_pair(const DepthField& ref_depth, const CameraView& ref_cam, const DepthField& src_depth,
                            const CameraView& src_cam, int x, int y, const ConsistencyParams& params) {
  PairCheck check;
  const double d_ref = ref_depth.depth[ref_depth.index(x, y)];
  const Pixel p{static_cast<double>(x), static_cast<double>(y)};
  const auto in_src = try_project(reproject(p, d_ref, ref_cam), src_cam);
  if (!in_src) return check;
  double d_src;
  if (!detail::sample_depth(src_depth, in_src->pixel, d_src)) return check;
  const auto back = try_project(reproject(in_src->pixel, d_src, src_cam), ref_cam);
  if (!back) return check;
  check.visible = true;
  check.rel_depth_diff = std::abs(back->depth - d_ref) / d_ref;
  check.reproj_error = (back->pixel.vec() - p.vec()).norm();
  check.depth_ok = check.rel_depth_diff <= params.max_rel_depth_diff;
  check.reproj_ok = check.reproj_error <= params.max_reproj_error;
  return check;
}

// Keeps a pixel when at least min_consistent_views sources pass both the
// depth check and the reprojection check (and, optionally, when its depth is
// inside the declared range). Cameras are full resolution.
inline std::vector<std::vector<std::uint8_t>> geometric_consistency_mask(const std::vector<DepthField>& depths,
                                                                         const std::vector<CameraView>& cameras,
                                                                         const ConsistencyParams& params) {
  params.validate();
  require(depths.size() == cameras.size(), ErrorCode::kInvalidInput, "one camera per depth map required");
  require(static_cast<int>(depths.size()) >= params.min_consistent_views + 1, ErrorCode::kInvalidConfig,
          "need at least min_consistent_views + 1 views");
  std::vector<CameraView> cams;
  for (std::size_t v = 0; v < depths.size(); ++v) cams.push_back(camera_for_depth(cameras[v], depths[v]));

  std::vector<std::vector<std::uint8_t>> masks(depths.size());
  for (std::size_t r = 0; r < depths.size(); ++r) {
    const DepthField& ref = depths[r];
    masks[r].assign(ref.size(), 0);
    parallel_for(ref.height, [&](int y0, int y1) {
      for (int y = y0; y < y1; ++y) {
        for (int x = 0; x < ref.width; ++x) {
          const std::size_t i = ref.index(x, y);
          if (!ref.valid[i] || !(ref.depth[i] > 0.0)) continue;
          if (params.enforce_range && (ref.depth[i] < cameras[r].depth_min || ref.depth[i] > cameras[r].depth_max))
            continue;
          int consistent = 0;
          for (std::size_t s = 0; s < depths.size(); ++s) {
            if (s == r) continue;
            if (check_pair(ref, cams[r], depths[s], cams[s], x, y, params).consistent()) ++consistent;
          }
          masks[r][i] = consistent >= params.min_consistent_views ? 1 : 0;
        }
      }
    });
  }
  return masks;
}

namespace detail {

inline Color sample_color(const RgbImage& image, double x, double y) {
  if (image.empty()) return {255, 255, 255};
  const int ix = std::clamp(static_cast<int>(std::lround(x)), 0, image.width - 1);
  const int iy = std::clamp(static_cast<int>(std::lround(y)), 0, image.height - 1);
  if (image.channels >= 3) return {image.at(ix, iy, 0), image.at(ix, iy, 1), image.at(ix, iy, 2)};
  const auto g = image.at(ix, iy, 0);
  return {g, g, g};
}

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

}  // namespace detail

struct FusionOptions {
  // Merge radius as a fraction of the median pixel footprint; <= 0 disables
  // merging.
  double merge_radius_factor = 0.5;
};

// Surviving pixels are lifted to world points. Points from different views
// closer than the merge radius are averaged (spatial hash, deterministic
// visiting order: view, then raster order).
inline PointCloud fuse_to_point_cloud(const std::vector<DepthField>& depths,
                                      const std::vector<std::vector<std::uint8_t>>& masks,
                                      const std::vector<RgbImage>& images, const std::vector<CameraView>& cameras,
                                      const FusionOptions& options = {}) {
  require(depths.size() == masks.size() && depths.size() == cameras.size(), ErrorCode::kInvalidInput,
          "depths, masks and cameras must have one entry per view");
  require(images.empty() || images.size() == depths.size(), ErrorCode::kInvalidInput, "one image per view required");

  struct Candidate {
    Vec3 point;
    Color color;
    PointSource source;
    double footprint;
  };
  std::vector<Candidate> candidates;
  for (std::size_t v = 0; v < depths.size(); ++v) {
    const DepthField& d = depths[v];
    require(masks[v].size() == d.size(), ErrorCode::kInvalidInput, "mask size differs from its depth map");
    const int factor = depth_map_factor(cameras[v], d);
    const CameraView cam = camera_for_depth(cameras[v], d);
    for (int y = 0; y < d.height; ++y) {
      for (int x = 0; x < d.width; ++x) {
        const std::size_t i = d.index(x, y);
        if (!masks[v][i] || !d.valid[i]) continue;
        const Vec3 P = reproject({static_cast<double>(x), static_cast<double>(y)}, d.depth[i], cam);
        const double fx = factor * x + (factor - 1) / 2.0;
        const double fy = factor * y + (factor - 1) / 2.0;
        const Color c = images.empty() ? Color{255, 255, 255} : detail::sample_color(images[v], fx, fy);
        candidates.push_back({P, c, {static_cast<int>(v), x, y}, cam.footprint(d.depth[i])});
      }
    }
  }

  PointCloud cloud;
  if (candidates.empty()) return cloud;

  double radius = 0.0;
  if (options.merge_radius_factor > 0.0) {
    std::vector<double> fp;
    fp.reserve(candidates.size());
    for (const auto& c : candidates) fp.push_back(c.footprint);
    std::nth_element(fp.begin(), fp.begin() + fp.size() / 2, fp.end());
    radius = options.merge_radius_factor * fp[fp.size() / 2];
  }
  if (!(radius > 0.0)) {
    for (const auto& c : candidates) cloud.push_back(c.point, c.color, c.source);
    return cloud;
  }

  struct Cluster {
    Vec3 sum = Vec3::Zero();
    std::array<double, 3> color{0, 0, 0};
    int count = 0;
    PointSource source;
    int first_view = 0;
    Vec3 centroid() const { return sum / count; }
  };
  std::vector<Cluster> clusters;
  std::unordered_map<detail::CellKey, std::vector<int>, detail::CellHash> grid;
  const auto key_of = [radius](const Vec3& p) {
    return detail::CellKey{static_cast<std::int64_t>(std::floor(p.x() / radius)),
                           static_cast<std::int64_t>(std::floor(p.y() / radius)),
                           static_cast<std::int64_t>(std::floor(p.z() / radius))};
  };
  for (const auto& c : candidates) {
    const detail::CellKey key = key_of(c.point);
    int best = -1;
    double best_dist = radius;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto it = grid.find({key.x + dx, key.y + dy, key.z + dz});
          if (it == grid.end()) continue;
          for (int idx : it->second) {
            // Points of the same view never merge with each other.
            if (clusters[idx].first_view == c.source.view) continue;
            const double dist = (clusters[idx].centroid() - c.point).norm();
            if (dist < best_dist) {
              best_dist = dist;
              best = idx;
            }
          }
        }
    if (best < 0) {
      Cluster cl;
      cl.source = c.source;
      cl.first_view = c.source.view;
      best = static_cast<int>(clusters.size());
      clusters.push_back(cl);
      grid[key].push_back(best);
    }
    Cluster& cl = clusters[best];
    cl.sum += c.point;
    for (int k = 0; k < 3; ++k) cl.color[k] += c.color[k];
    ++cl.count;
  }
  for (const auto& cl : clusters) {
    Color color;
    for (int k = 0; k < 3; ++k) color[k] = static_cast<std::uint8_t>(std::lround(cl.color[k] / cl.count));
    cloud.push_back(cl.centroid(), color, cl.source);
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// PLY. Written as binary little-endian with float x,y,z and uchar r,g,b.

inline void write_ply(const PointCloud& cloud, const std::string& path) {
  auto out = binary::open_out(path);
  out << "ply\n"
      << "format binary_little_endian 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property float x\n"
      << "property float y\n"
      << "property float z\n"
      << "property uchar red\n"
      << "property uchar green\n"
      << "property uchar blue\n"
      << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k) binary::write_le<float>(out, static_cast<float>(cloud.points[i][k]));
    for (int k = 0; k < 3; ++k) binary::write_le<std::uint8_t>(out, cloud.colors[i][k]);
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path);
}

namespace detail {

inline int ply_type_size(const std::string& type) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "float" || type == "int32" || type == "uint32" || type == "float32")
    return 4;
  if (type == "double" || type == "float64") return 8;
  return 0;
}

inline double ply_read_binary(std::istream& in, const std::string& type) {
  const std::string what = "PLY vertex data";
  if (type == "char" || type == "int8") return binary::read_le<std::int8_t>(in, what);
  if (type == "uchar" || type == "uint8") return binary::read_le<std::uint8_t>(in, what);
  if (type == "short" || type == "int16") return binary::read_le<std::int16_t>(in, what);
  if (type == "ushort" || type == "uint16") return binary::read_le<std::uint16_t>(in, what);
  if (type == "int" || type == "int32") return binary::read_le<std::int32_t>(in, what);
  if (type == "uint" || type == "uint32") return binary::read_le<std::uint32_t>(in, what);
  if (type == "float" || type == "float32") return binary::read_le<float>(in, what);
  return binary::read_le<double>(in, what);
}

}  // namespace detail

// Reads the vertex element (x, y, z and optional red, green, blue) of an
// ASCII or binary little-endian PLY file. Other elements must follow the
// vertices.
inline PointCloud read_ply(const std::string& path) {
  auto in = binary::open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw Error(ErrorCode::kParse, path + ": missing ply magic");
  std::string format;
  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false;
  std::vector<std::pair<std::string, std::string>> props;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      ls >> format;
    } else if (word == "element") {
      std::string name;
      std::size_t count;
      if (!(ls >> name >> count)) throw Error(ErrorCode::kParse, path + ":" + std::to_string(line_no) + ": bad element");
      in_vertex = name == "vertex";
      if (in_vertex) {
        vertex_count = count;
        seen_vertex = true;
      } else if (!seen_vertex) {
        throw Error(ErrorCode::kParse, path + ": vertex element must come first");
      }
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      if (!(ls >> type >> name) || type == "list" || detail::ply_type_size(type) == 0)
        throw Error(ErrorCode::kParse, path + ":" + std::to_string(line_no) + ": unsupported vertex property");
      props.emplace_back(type, name);
    } else if (word == "end_header") {
      break;
    }
  }
  if (!seen_vertex) throw Error(ErrorCode::kParse, path + ": no vertex element");
  if (format != "ascii" && format != "binary_little_endian")
    throw Error(ErrorCode::kParse, path + ": unsupported PLY format '" + format + "'");
  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
  for (int k = 0; k < static_cast<int>(props.size()); ++k) {
    const auto& n = props[k].second;
    if (n == "x") ix = k;
    if (n == "y") iy = k;
    if (n == "z") iz = k;
    if (n == "red" || n == "r") ir = k;
    if (n == "green" || n == "g") ig = k;
    if (n == "blue" || n == "b") ib = k;
  }
  if (ix < 0 || iy < 0 || iz < 0) throw Error(ErrorCode::kParse, path + ": vertex lacks x/y/z");

  PointCloud cloud;
  cloud.points.reserve(vertex_count);
  std::vector<double> values(props.size());
  for (std::size_t v = 0; v < vertex_count; ++v) {
    if (format == "ascii") {
      for (auto& value : values)
        if (!(in >> value)) throw Error(ErrorCode::kParse, path + ": truncated ASCII vertex " + std::to_string(v));
    } else {
      for (std::size_t k = 0; k < props.size(); ++k) values[k] = detail::ply_read_binary(in, props[k].first);
    }
    const Vec3 p(values[ix], values[iy], values[iz]);
    if (!p.allFinite()) throw Error(ErrorCode::kParse, path + ": non-finite vertex " + std::to_string(v));
    Color c{255, 255, 255};
    if (ir >= 0 && ig >= 0 && ib >= 0)
      c = {static_cast<std::uint8_t>(values[ir]), static_cast<std::uint8_t>(values[ig]),
           static_cast<std::uint8_t>(values[ib])};
    cloud.push_back(p, c);
  }
  return cloud;
}

}  // namespace epiflow
