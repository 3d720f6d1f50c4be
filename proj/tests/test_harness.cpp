#include <gtest/gtest.h>

#include "support.hpp"

using namespace epiflow;

namespace {

SceneSpec small_spec(ScenePreset preset) {
  SceneSpec spec;
  spec.preset = preset;
  spec.width = 64;
  spec.height = 48;
  spec.focal = 56.0;
  return spec;
}

PointCloud grid_cloud(int n, double z, double step = 0.01) {
  PointCloud c;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) c.push_back(Vec3(x * step, y * step, z), {0, 0, 0});
  return c;
}

double brute_nn(const Vec3& q, const std::vector<Vec3>& points) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& p : points) best = std::min(best, (p - q).norm());
  return best;
}

}  // namespace

TEST(Scenes, PlaneGroundTruthIsConstant) {
  const SyntheticScene scene = render_scene(small_spec(ScenePreset::kPlane), 0);
  ASSERT_EQ(scene.size(), 3);
  for (const DepthField& d : scene.depths)
    for (std::size_t i = 0; i < d.size(); ++i) {
      ASSERT_TRUE(d.valid[i]);
      EXPECT_NEAR(d.depth[i], 2.0, 1e-9);
    }
  EXPECT_DOUBLE_EQ(scene.cameras[0].depth_min, 1.4);
  EXPECT_DOUBLE_EQ(scene.cameras[0].depth_max, 3.2);
  EXPECT_EQ(scene.sources[0], (std::vector<int>{1, 2}));
}

TEST(Scenes, SphereIsNearestAtTheCentre) {
  const SyntheticScene scene = render_scene(small_spec(ScenePreset::kSphere), 0);
  const DepthField& d = scene.depths[0];
  const auto it = std::min_element(d.depth.begin(), d.depth.end());
  const int i = static_cast<int>(it - d.depth.begin());
  EXPECT_NEAR(i % d.width, 31.5, 0.5);
  EXPECT_NEAR(i / d.width, 23.5, 0.5);
  EXPECT_NEAR(*it, 2.0, 1e-3);
  // depth grows away from the centre along the middle row
  for (int x = 33; x < 44; ++x) EXPECT_GT(d.depth[d.index(x, 24)], d.depth[d.index(x - 1, 24)]);
}

TEST(Scenes, SeededRendering) {
  const SceneSpec spec = small_spec(ScenePreset::kBoxes);
  const SyntheticScene a = render_scene(spec, 4);
  const SyntheticScene b = render_scene(spec, 4);
  const SyntheticScene c = render_scene(spec, 5);
  EXPECT_EQ(a.images, b.images);
  EXPECT_NE(a.images[0], c.images[0]);
  EXPECT_EQ(a.depths[0].depth, c.depths[0].depth);
  EXPECT_GT(textured_fraction(a.images[0]), 0.9);
}

TEST(Scenes, ToeInAimsSourcesAtTheAxisPoint) {
  SceneSpec spec = small_spec(ScenePreset::kPlane);
  spec.toe_in = true;
  const SyntheticScene scene = render_scene(spec, 0);
  const Vec3 target(0, 0, spec.distance);
  for (const CameraView& cam : scene.cameras) {
    const auto p = try_project(target, cam);
    ASSERT_TRUE(p);
    EXPECT_NEAR(p->pixel.x, 31.5, 1e-9);
    EXPECT_NEAR(p->pixel.y, 23.5, 1e-9);
  }
}

TEST(Scenes, RejectsBadSpecs) {
  SceneSpec spec = small_spec(ScenePreset::kPlane);
  spec.views = 1;
  EXPECT_THROW(render_scene(spec), Error);
  spec = small_spec(ScenePreset::kPlane);
  spec.baseline = 0.0;
  EXPECT_THROW(render_scene(spec), Error);
  EXPECT_THROW(parse_preset("cube"), Error);
  EXPECT_EQ(parse_preset("sphere"), ScenePreset::kSphere);
}

TEST(Scenes, TexturedMaskFlagsFlatImages) {
  const RgbImage flat(20, 20, 3, 128);
  EXPECT_EQ(textured_fraction(flat), 0.0);
}

TEST(Scenes, GroundTruthCloudPointsLieOnTheSurface) {
  const SyntheticScene scene = render_scene(small_spec(ScenePreset::kSphere), 0);
  const PointCloud cloud = ground_truth_cloud(scene, 4);
  ASSERT_GT(cloud.size(), 100u);
  for (const Vec3& P : cloud.points) {
    const double on_sphere = std::abs((P - Vec3(0, 0, 6)).norm() - 4.0);
    const double on_plane = std::abs(P.z() - 12.0);
    EXPECT_LT(std::min(on_sphere, on_plane), 1e-6);
  }
}

TEST(Scenes, WrittenSceneLoadsBack) {
  const SyntheticScene scene = render_scene(small_spec(ScenePreset::kPlane), 2);
  const auto dir = epiflow::testing::temp_dir("synthetic");
  write_synthetic_scene(scene, dir.string());
  const SceneBundle loaded = load_scene(dir.string());
  ASSERT_EQ(loaded.size(), 3);
  EXPECT_EQ(loaded.images[1], scene.images[1]);
  EXPECT_LT((loaded.cameras[2].T - scene.cameras[2].T).norm(), 1e-12);
  const DepthField gt = read_depth_pfm((dir / "gt" / "00000001.pfm").string());
  EXPECT_NEAR(gt.depth[0], 2.0, 1e-6);
  EXPECT_TRUE(std::filesystem::exists(dir / "meta.json"));
  EXPECT_GT(read_ply((dir / "gt.ply").string()).size(), 0u);
}

TEST(Evaluate, IdenticalCloudsScoreZero) {
  const PointCloud c = grid_cloud(20, 1.0);
  const EvalReport r = evaluate(c, c, 0.05);
  EXPECT_EQ(r.overall, 0.0);
  EXPECT_EQ(r.accuracy_outliers, 0.0);
  EXPECT_EQ(r.precision.back(), 1.0);
}

TEST(Evaluate, TranslationAlongTheNormal) {
  const PointCloud gt = grid_cloud(20, 1.0);
  const PointCloud shifted = grid_cloud(20, 1.003);
  const EvalReport r = evaluate(shifted, gt, 0.05);
  EXPECT_NEAR(r.accuracy, 0.003, 1e-12);
  EXPECT_NEAR(r.completeness, 0.003, 1e-12);
  EXPECT_NEAR(r.overall, 0.003, 1e-12);
  // beyond the threshold every point is an outlier
  EXPECT_THROW(evaluate(grid_cloud(20, 1.2), gt, 0.05), Error);
}

TEST(Evaluate, HalfCoverageMatchesBruteForce) {
  const PointCloud gt = grid_cloud(20, 1.0);
  PointCloud half;
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt.points[i].x() < 0.095) half.push_back(gt.points[i] + Vec3(0, 0, 0.001), {0, 0, 0});
  const double threshold = 0.05;
  const EvalReport r = evaluate(half, gt, threshold);
  double sum = 0.0;
  std::size_t inliers = 0;
  for (const Vec3& p : gt.points) {
    const double d = brute_nn(p, half.points);
    if (d <= threshold) {
      sum += d;
      ++inliers;
    }
  }
  EXPECT_NEAR(r.completeness, sum / inliers, 1e-12);
  EXPECT_NEAR(r.completeness_outliers, 1.0 - static_cast<double>(inliers) / gt.size(), 1e-12);
  EXPECT_NEAR(r.accuracy, 0.001, 1e-12);
  EXPECT_LT(r.recall.front(), 0.6);
}

TEST(Evaluate, SwappingCloudsSwapsTheHalves) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 0.2);
  PointCloud a, b;
  for (int i = 0; i < 300; ++i) a.push_back(Vec3(u(rng), u(rng), u(rng)), {0, 0, 0});
  for (int i = 0; i < 200; ++i) b.push_back(Vec3(u(rng), u(rng), u(rng)), {0, 0, 0});
  const EvalReport ab = evaluate(a, b, 0.1);
  const EvalReport ba = evaluate(b, a, 0.1);
  EXPECT_DOUBLE_EQ(ab.accuracy, ba.completeness);
  EXPECT_DOUBLE_EQ(ab.completeness, ba.accuracy);
  EXPECT_DOUBLE_EQ(ab.overall, ba.overall);
}

TEST(Evaluate, EmptyCloudIsUndefined) {
  const PointCloud c = grid_cloud(3, 1.0);
  try {
    evaluate(PointCloud{}, c, 0.1);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUndefinedMetric);
  }
  EXPECT_THROW(evaluate(c, PointCloud{}, 0.1), Error);
  EXPECT_THROW(evaluate(c, c, 0.0), Error);
}

TEST(KdTreeTest, MatchesBruteForce) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vec3> points;
  for (int i = 0; i < 2000; ++i) points.emplace_back(n(rng), n(rng), n(rng));
  const KdTree tree(points);
  for (int q = 0; q < 200; ++q) {
    const Vec3 p(n(rng), n(rng), n(rng));
    EXPECT_NEAR(std::sqrt(tree.nearest(p).first), brute_nn(p, points), 1e-12);
  }
}

TEST(DepthError, CountsWithinBound) {
  DepthField gt(4, 1), est(4, 1);
  gt.depth = {1.0, 2.0, 4.0, 5.0};
  gt.valid = {1, 1, 1, 0};
  est.depth = {1.005, 2.1, 4.0, 5.0};
  est.valid = {1, 1, 0, 1};
  const DepthErrorStats s = depth_error(est, gt);
  EXPECT_EQ(s.gt_pixels, 3u);
  EXPECT_EQ(s.estimated, 2u);
  EXPECT_NEAR(s.within, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(s.mean_relative, (0.005 + 0.05) / 2.0, 1e-12);
}
