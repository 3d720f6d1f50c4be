#pragma once

#include <Eigen/Geometry>
#include <filesystem>
#include <random>
#include <string>

#include "epiflow/epiflow.hpp"

namespace epiflow::testing {

inline CameraView make_camera(double f, double cx, double cy, const Mat3& R = Mat3::Identity(),
                              const Vec3& T = Vec3::Zero(), double dmin = 1.0, double dmax = 10.0, int w = 640,
                              int h = 480) {
  CameraView cam;
  cam.K << f, 0, cx, 0, f, cy, 0, 0, 1;
  cam.R = R;
  cam.T = T;
  cam.depth_min = dmin;
  cam.depth_max = dmax;
  cam.width = w;
  cam.height = h;
  return cam;
}

inline Mat3 random_rotation(std::mt19937_64& rng, double max_angle) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> a(-max_angle, max_angle);
  const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized();
  return Eigen::AngleAxisd(a(rng), axis).toRotationMatrix();
}

struct PairSample {
  CameraView ref;
  CameraView src;
  Pixel pixel;
  double depth = 0.0;
};

// Reference with a random pose, source displaced by a random baseline and a
// small relative rotation; the pixel/depth projects in front of both with at
// least one pixel of flow.
inline PairSample random_pair_sample(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    PairSample s;
    const double f = 300.0 + 400.0 * u(rng);
    const Mat3 Rr = random_rotation(rng, M_PI);
    const Vec3 Tr(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5);
    s.ref = make_camera(f, 320.0 + 20.0 * (u(rng) - 0.5), 240.0 + 20.0 * (u(rng) - 0.5), Rr, Tr);
    const Mat3 Rrel = random_rotation(rng, 0.2);
    Vec3 base(u(rng) - 0.5, u(rng) - 0.5, 0.3 * (u(rng) - 0.5));
    base = base.normalized() * (0.2 + 0.8 * u(rng));
    // X_src = Rrel * X_ref + base
    s.src = make_camera(f * (0.9 + 0.2 * u(rng)), 320.0, 240.0, Rrel * Rr, Rrel * Tr + base);
    s.pixel = {640.0 * u(rng), 480.0 * u(rng)};
    s.depth = 2.0 + 8.0 * u(rng);
    const Vec3 P = reproject(s.pixel, s.depth, s.ref);
    const auto proj = try_project(P, s.src);
    if (!proj || proj->depth < 0.5) continue;
    if ((proj->pixel.vec() - s.pixel.vec()).norm() < 1.0) continue;
    return s;
  }
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("epiflow_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline FeatureMap random_feature_map(int w, int h, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  FeatureMap map(w, h, c, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto v = map.at(x, y);
      for (float& e : v) e = n(rng);
      map.valid[static_cast<std::size_t>(y) * w + x] = detail::normalize_descriptor(v) ? 1 : 0;
    }
  return map;
}

}  // namespace epiflow::testing
