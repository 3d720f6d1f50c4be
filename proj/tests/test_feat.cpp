#include <gtest/gtest.h>

#include "support.hpp"

using namespace epiflow;
using epiflow::testing::random_feature_map;

namespace {

float texture(double x, double y) {
  return static_cast<float>(0.5 + 0.2 * std::sin(0.37 * x + 0.11 * y) + 0.15 * std::cos(0.23 * y - 0.05 * x) +
                            0.1 * std::sin(0.71 * x) * std::cos(0.53 * y));
}

GrayImage render(int w, int h, double shift) {
  GrayImage image(w, h, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) image.at(x, y) = texture(x - shift, y);
  return image;
}

std::vector<float> normalized(std::vector<float> v) {
  double n = 0.0;
  for (float x : v) n += static_cast<double>(x) * x;
  for (float& x : v) x = static_cast<float>(x / std::sqrt(n));
  return v;
}

}  // namespace

TEST(ExtractFeatures, ConstantImageIsFlaggedTextureless) {
  const GrayImage flat(64, 48, 1, 0.4f);
  for (Stage s : {Stage::kCoarse, Stage::kFine}) {
    const FeatureMap map = extract_features(flat, s);
    EXPECT_EQ(map.width, 64 / stage_scale(s));
    EXPECT_EQ(map.height, 48 / stage_scale(s));
    for (auto v : map.valid) EXPECT_EQ(v, 0);
    for (float v : map.data) EXPECT_EQ(v, 0.0f);
  }
}

TEST(ExtractFeatures, DeterministicAndUnitNorm) {
  const GrayImage image = render(96, 64, 0.0);
  const FeatureMap a = extract_features(image, Stage::kFine);
  const FeatureMap b = extract_features(GrayImage(image), Stage::kFine);
  EXPECT_EQ(a, b);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      ASSERT_TRUE(a.is_valid(x, y));
      double n = 0.0, mean = 0.0;
      for (float v : a.at(x, y)) {
        n += static_cast<double>(v) * v;
        mean += v;
      }
      EXPECT_NEAR(n, 1.0, 1e-5);
      EXPECT_NEAR(mean, 0.0, 1e-5);
    }
}

TEST(ExtractFeatures, ShiftEquivariantAwayFromBorders) {
  // a shift of one fine-stage pixel is four image pixels
  const GrayImage a = render(128, 96, 0.0);
  const GrayImage b = render(128, 96, 4.0);
  const FeatureMap fa = extract_features(a, Stage::kFine);
  const FeatureMap fb = extract_features(b, Stage::kFine);
  const int margin = 5;
  for (int y = margin; y < fa.height - margin; ++y)
    for (int x = margin; x < fa.width - margin - 1; ++x) {
      const auto da = fa.at(x, y);
      const auto db = fb.at(x + 1, y);
      for (int c = 0; c < fa.channels; ++c) ASSERT_NEAR(da[c], db[c], 1e-4) << x << "," << y;
    }
}

TEST(ExtractFeatures, PadsToMultipleOfSixteen) {
  const GrayImage image = render(100, 70, 0.0);
  const FeatureMap coarse = extract_features(image, Stage::kCoarse);
  EXPECT_EQ(coarse.width, 7);
  EXPECT_EQ(coarse.height, 5);
  EXPECT_EQ(coarse.scale, 16);
}

TEST(ExtractFeatures, RejectsBadConfig) {
  const GrayImage image = render(32, 32, 0.0);
  DescriptorConfig c;
  c.window = 4;
  EXPECT_THROW(extract_features(image, Stage::kFine, c), Error);
  EXPECT_THROW(extract_features(GrayImage{}, Stage::kFine), Error);
}

TEST(BuildPyramid, SingleLevelIsTheInput) {
  const FeatureMap map = random_feature_map(8, 6, 4, 1);
  const FeaturePyramid p = build_pyramid(map, 1);
  ASSERT_EQ(p.size(), 1);
  EXPECT_EQ(p.levels[0], map);
}

TEST(BuildPyramid, ConstantVectorsStayConstant) {
  FeatureMap map(4, 4, 4, 1);
  const std::vector<float> v = normalized({0.5f, -0.5f, 1.5f, -1.5f});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      std::copy(v.begin(), v.end(), map.at(x, y).begin());
      map.valid[static_cast<std::size_t>(y) * 4 + x] = 1;
    }
  const FeaturePyramid p = build_pyramid(map, 3);
  for (const FeatureMap& level : p.levels)
    for (int y = 0; y < level.height; ++y)
      for (int x = 0; x < level.width; ++x)
        for (int c = 0; c < 4; ++c) EXPECT_NEAR(level.at(x, y)[c], v[c], 1e-6);
  EXPECT_EQ(p.levels[2].width, 1);
}

TEST(BuildPyramid, LevelOneIsNormalizedBlockMean) {
  const FeatureMap map = random_feature_map(8, 8, 6, 7);
  const FeaturePyramid p = build_pyramid(map, 2);
  for (int by = 0; by < 4; ++by)
    for (int bx = 0; bx < 4; ++bx) {
      std::vector<float> mean(6, 0.0f);
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          for (int c = 0; c < 6; ++c) mean[c] += map.at(2 * bx + dx, 2 * by + dy)[c] / 4.0f;
      const auto expect = normalized(mean);
      for (int c = 0; c < 6; ++c) EXPECT_NEAR(p.levels[1].at(bx, by)[c], expect[c], 1e-5);
    }
}

TEST(BuildPyramid, RejectsTooManyLevels) {
  const FeatureMap map = random_feature_map(10, 8, 4, 2);
  EXPECT_NO_THROW(build_pyramid(map, 4));
  EXPECT_THROW(build_pyramid(map, 5), Error);
  EXPECT_THROW(build_pyramid(map, 0), Error);
}

TEST(SampleFeature, IntegerMidpointAndOutOfFrame) {
  const FeatureMap map = random_feature_map(6, 5, 8, 3);
  std::vector<float> out(8);
  ASSERT_TRUE(sample_feature(map, {2, 3}, out));
  for (int c = 0; c < 8; ++c) EXPECT_NEAR(out[c], map.at(2, 3)[c], 1e-6);

  ASSERT_TRUE(sample_feature(map, {2.5, 3}, out));
  std::vector<float> avg(8);
  for (int c = 0; c < 8; ++c) avg[c] = 0.5f * (map.at(2, 3)[c] + map.at(3, 3)[c]);
  const auto expect = normalized(avg);
  for (int c = 0; c < 8; ++c) EXPECT_NEAR(out[c], expect[c], 1e-5);

  EXPECT_FALSE(sample_feature(map, {-5, 2}, out));
  EXPECT_FALSE(sample_feature(map, {2, 4.6}, out));
}

TEST(SampleFeature, SkipsInvalidNeighbours) {
  FeatureMap map = random_feature_map(4, 4, 4, 9);
  map.valid[map.width * 1 + 2] = 0;
  std::vector<float> out(4);
  ASSERT_TRUE(sample_feature(map, {1.5, 1}, out));
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(out[c], map.at(1, 1)[c], 1e-6);
}

TEST(FeatureFile, RoundTrip) {
  const auto dir = epiflow::testing::temp_dir("feat");
  const FeatureMap map = extract_features(render(64, 48, 0.0), Stage::kFine);
  write_feature_map(map, (dir / "f.bin").string());
  const FeatureMap back = read_feature_map((dir / "f.bin").string());
  EXPECT_EQ(back.width, map.width);
  EXPECT_EQ(back.channels, map.channels);
  for (std::size_t i = 0; i < map.data.size(); ++i) EXPECT_NEAR(back.data[i], map.data[i], 1e-6);
  EXPECT_EQ(back.valid, map.valid);
}
