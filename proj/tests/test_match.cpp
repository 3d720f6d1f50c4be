#include <gtest/gtest.h>

#include "support.hpp"

using namespace epiflow;

namespace {

// Hand-built slice of a single pixel.
CostSlice slice_of(int levels, int samples, const std::vector<std::optional<float>>& scores) {
  CostSlice s;
  s.width = s.height = 1;
  s.levels = levels;
  s.samples = samples;
  s.scores.assign(levels * samples, 0.0f);
  s.entry_valid.assign(levels * samples, 0);
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i]) {
      s.scores[i] = *scores[i];
      s.entry_valid[i] = 1;
    }
  s.pixel_valid = {static_cast<std::uint8_t>(std::any_of(s.entry_valid.begin(), s.entry_valid.end(),
                                                         [](auto v) { return v != 0; }))};
  s.centered = {s.entry_valid[s.half_window()]};
  return s;
}

EFlowField one_pixel_eflow() {
  EFlowField f(1, 1, 0);
  f.valid[0] = 1;
  return f;
}

struct SceneStage {
  SyntheticScene scene;
  StageView ref;
  StageView src;
  DepthField gt;
  DepthField scored;
};

SceneStage fine_stage(ScenePreset preset) {
  SceneSpec spec;
  spec.preset = preset;
  SceneStage s{render_scene(spec, 1), {}, {}, {}, {}};
  const SceneFeatures features = extract_scene_features(s.scene.images);
  s.ref = make_stage_view(0, s.scene.cameras[0], features.fine[0], 1);
  s.src = make_stage_view(1, s.scene.cameras[1], features.fine[1], 2);
  s.gt = ground_truth_like(s.scene, 0, DepthField(features.fine[0].width, features.fine[0].height));
  s.scored = scored_ground_truth(s.scene, 0, s.gt);
  return s;
}

EFlowField eflow_from_depth(const DepthField& depth, const StageView& ref, const StageView& src) {
  const StereoPair pair(ref.camera, src.camera);
  EFlowField f(depth.width, depth.height, src.id);
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      const std::size_t i = depth.index(x, y);
      if (!depth.valid[i]) continue;
      const auto frame = pair.epipolar_frame({double(x), double(y)});
      const auto e = pair.depth_to_eflow(*frame, depth.depth[i]);
      if (!e) continue;
      f.frames[i] = *frame;
      f.eflow[i] = *e;
      f.valid[i] = 1;
    }
  return f;
}

}  // namespace

TEST(Similarity, DotProductOfUnitVectors) {
  const std::vector<float> a{0.6f, 0.8f}, b{0.8f, 0.6f}, c{-0.8f, 0.6f};
  EXPECT_NEAR(*similarity(a, a), 1.0, 1e-4);
  EXPECT_NEAR(*similarity(a, c), 0.0, 1e-7);
  EXPECT_NEAR(*similarity(a, b), 0.96, 1e-6);
  EXPECT_FALSE(similarity({}, a).has_value());
  EXPECT_THROW(similarity(a, std::vector<float>{1.0f}), Error);
}

TEST(ParabolicVertex, ClosedForm) {
  EXPECT_NEAR(parabolic_vertex(0.2, 0.9, 0.2), 0.0, 1e-15);
  EXPECT_NEAR(parabolic_vertex(0.2, 0.9, 0.4), (0.2 - 0.4) / (2 * (0.2 - 2 * 0.9 + 0.4)), 1e-15);
  EXPECT_NEAR(parabolic_vertex(0.2, 0.9, 0.4), 1.0 / 12.0, 1e-12);
  EXPECT_EQ(parabolic_vertex(0.5, 0.5, 0.5), 0.0);
}

TEST(UpdateDeterministic, PeakAtCentreGivesZeroDelta) {
  const CostSlice s = slice_of(1, 5, {0.1f, 0.5f, 0.9f, 0.5f, 0.1f});
  const UpdateResult r = update_deterministic(s, one_pixel_eflow());
  ASSERT_TRUE(r.valid[0]);
  EXPECT_NEAR(r.delta_eflow[0], 0.0, 1e-12);
  EXPECT_NEAR(r.weight[0], 0.9, 1e-6);
}

TEST(UpdateDeterministic, ParabolicRefinement) {
  const CostSlice s = slice_of(1, 3, {0.2f, 0.9f, 0.4f});
  const UpdateResult r = update_deterministic(s, one_pixel_eflow());
  const double expect = parabolic_vertex(0.2f, 0.9f, 0.4f);
  EXPECT_NEAR(r.delta_eflow[0], expect, 1e-12);
  EXPECT_NEAR(r.delta_eflow[0], 0.0833333, 1e-6);
}

TEST(UpdateDeterministic, PeakAtWindowEdgeIsNotRefined) {
  const CostSlice s = slice_of(1, 5, {0.1f, 0.2f, 0.3f, 0.4f, 0.8f});
  const UpdateResult r = update_deterministic(s, one_pixel_eflow());
  EXPECT_EQ(r.delta_eflow[0], 2.0);
  const CostSlice t = slice_of(1, 5, {0.9f, 0.2f, 0.3f, 0.4f, 0.1f});
  EXPECT_EQ(update_deterministic(t, one_pixel_eflow()).delta_eflow[0], -2.0);
}

TEST(UpdateDeterministic, MaskedPixelStaysMasked) {
  const CostSlice s = slice_of(2, 3, {});
  const UpdateResult r = update_deterministic(s, one_pixel_eflow());
  EXPECT_EQ(r.valid[0], 0);
}

TEST(CombineLevels, CoarseLevelInterpolatedOntoFineGrid) {
  // level 1 samples offsets -2, 0, 2; the level-0 grid is -1, 0, 1
  const CostSlice s = slice_of(2, 3, {0.2f, 0.6f, 0.4f, 0.0f, 0.8f, 0.4f});
  const auto c = combine_levels(s, 0);
  ASSERT_TRUE(c[0] && c[1] && c[2]);
  EXPECT_NEAR(*c[0], (0.2 + 0.4) / 2, 1e-6);
  EXPECT_NEAR(*c[1], (0.6 + 0.8) / 2, 1e-6);
  EXPECT_NEAR(*c[2], (0.4 + 0.6) / 2, 1e-6);
}

TEST(CombineLevels, MaskedLevelZeroOffsetsAreSkipped) {
  const CostSlice s = slice_of(2, 3, {std::nullopt, 0.6f, 0.4f, 0.3f, 0.8f, 0.4f});
  const auto c = combine_levels(s, 0);
  EXPECT_FALSE(c[0].has_value());
  EXPECT_TRUE(c[1] && c[2]);
  const CostSlice only_coarse = slice_of(2, 3, {std::nullopt, std::nullopt, std::nullopt, 0.3f, 0.8f, 0.4f});
  const auto d = combine_levels(only_coarse, 0);
  EXPECT_TRUE(d[0] && d[1] && d[2]);
}

TEST(CostSlice, EntriesPerPixelAtBothStages) {
  const auto s = fine_stage(ScenePreset::kPlane);
  const DepthField& gt = s.gt;
  const EFlowField e = eflow_from_depth(gt, s.ref, s.src);
  for (Stage stage : {Stage::kCoarse, Stage::kFine}) {
    const StageParams p = default_stage_params(stage);
    const FeaturePyramid pyr = build_pyramid(s.src.features, p.levels);
    const CostSlice slice = build_cost_slice(s.ref.features, e, pyr, p.levels, p.samples);
    EXPECT_EQ(slice.entries_per_pixel(), stage == Stage::kCoarse ? 36 : 10);
    EXPECT_EQ(slice.scores.size(), gt.size() * slice.entries_per_pixel());
    for (float v : slice.scores) EXPECT_FALSE(std::isnan(v));
  }
}

TEST(CostSlice, OutOfFrameSamplesAreMasked) {
  const auto s = fine_stage(ScenePreset::kPlane);
  EFlowField e = eflow_from_depth(s.gt, s.ref, s.src);
  for (std::size_t i = 0; i < e.size(); ++i) e.eflow[i] += 1e4;
  const CostSlice slice = build_cost_slice(s.ref.features, e, s.src.pyramid, 2, 5);
  for (auto v : slice.entry_valid) EXPECT_EQ(v, 0);
  for (auto v : slice.pixel_valid) EXPECT_EQ(v, 0);
  for (float v : slice.scores) EXPECT_FALSE(std::isnan(v));
  const UpdateResult r = update_deterministic(slice, e);
  for (auto v : r.valid) EXPECT_EQ(v, 0);
}

// Pixels whose descriptor window lies inside both frames; near the borders
// the windows see reflected content.
TEST(CostSlice, TrueEFlowPeaksAtCentreWithFullSupport) {
  for (ScenePreset preset : {ScenePreset::kPlane, ScenePreset::kSphere}) {
    const auto s = fine_stage(preset);
    const EFlowField e = eflow_from_depth(s.gt, s.ref, s.src);
    const CostSlice slice = build_cost_slice(s.ref.features, e, s.src.pyramid, 1, 5);
    std::size_t total = 0, peaked = 0;
    for (std::size_t i = 0; i < slice.pixel_valid.size(); ++i) {
      if (!s.scored.valid[i] || !slice.centered[i]) continue;
      const int r = DescriptorConfig{}.window / 2;
      const int x = static_cast<int>(i % slice.width), y = static_cast<int>(i / slice.width);
      const Pixel q = e.frames[i].point_at(e.eflow[i]);
      const auto inside = [&](double px, double py) {
        return px >= r && py >= r && px <= slice.width - 1 - r && py <= slice.height - 1 - r;
      };
      if (!inside(x, y) || !inside(q.x, q.y)) continue;
      ++total;
      const float c = slice.scores[slice.entry(i, 0, 2)];
      bool best = true;
      for (int j = 0; j < 5; ++j)
        if (slice.entry_valid[slice.entry(i, 0, j)] && slice.scores[slice.entry(i, 0, j)] > c) best = false;
      peaked += best;
    }
    ASSERT_GT(total, 100u);
    EXPECT_GT(static_cast<double>(peaked) / total, 0.95) << preset_name(preset);
  }
}

TEST(Gru, ForcedUpdateGateFreezesOrReplacesState) {
  const int w = 5, h = 4, H = 3, X = 4;
  GruWeights weights = GruWeights::random(H, X, 1, 0.3f);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  GruState state = GruState::zeros(w, h, H);
  for (float& v : state.h) v = u(rng);
  Raster<float> input(w, h, X);
  for (float& v : input.data) v = u(rng);

  std::fill(weights.wz.begin(), weights.wz.end(), 0.0f);
  std::fill(weights.bz.begin(), weights.bz.end(), -1e4f);
  const GruStep frozen = gru_step(weights, state, input);
  for (float z : frozen.z) EXPECT_EQ(z, 0.0f);
  EXPECT_EQ(frozen.state.h, state.h);

  std::fill(weights.bz.begin(), weights.bz.end(), 1e4f);
  const GruStep replaced = gru_step(weights, state, input);
  for (float z : replaced.z) EXPECT_EQ(z, 1.0f);
  EXPECT_EQ(replaced.state.h, replaced.candidate);
}

TEST(Gru, GateRangesOverRandomWeights) {
  const int w = 6, h = 5, H = 4, X = 11;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int draw = 0; draw < 100; ++draw) {
    const GruWeights weights = GruWeights::random(H, X, 1000 + draw);
    GruState state = GruState::zeros(w, h, H);
    for (float& v : state.h) v = u(rng);
    Raster<float> input(w, h, X);
    for (float& v : input.data) v = u(rng);
    const GruStep step = gru_step(weights, state, input);
    ASSERT_EQ(step.state.width, w);
    ASSERT_EQ(step.state.height, h);
    ASSERT_EQ(step.state.h.size(), static_cast<std::size_t>(w * h * H));
    for (float z : step.z) ASSERT_TRUE(z > 0.0f && z < 1.0f);
    for (float r : step.r) ASSERT_TRUE(r > 0.0f && r < 1.0f);
    for (float c : step.candidate) ASSERT_TRUE(c > -1.0f && c < 1.0f);
    for (float v : step.state.h) ASSERT_TRUE(v >= -1.0f && v <= 1.0f);
  }
}

TEST(Gru, RejectsMismatchedShapes) {
  const GruWeights weights = GruWeights::random(3, 4, 1);
  const GruState state = GruState::zeros(2, 2, 3);
  EXPECT_THROW(gru_step(weights, state, Raster<float>(2, 2, 5)), Error);
  EXPECT_THROW(gru_step(weights, state, Raster<float>(3, 2, 4)), Error);
  GruWeights broken = weights;
  broken.wz.pop_back();
  EXPECT_THROW(broken.validate(), Error);
  const CostSlice slice = slice_of(1, 5, {0.1f, 0.2f, 0.3f, 0.2f, 0.1f});
  GruState s;
  EXPECT_THROW(update_gru(slice, one_pixel_eflow(), weights, s), Error);
}

TEST(Gru, UpdateProducesFiniteDeltas) {
  const CostSlice slice = slice_of(2, 5, {0.1f, 0.5f, 0.9f, 0.5f, 0.1f, 0.2f, 0.4f, 0.8f, 0.4f, 0.2f});
  const GruWeights weights = GruWeights::random(8, 11, 5);
  GruState state;
  const UpdateResult r = update_gru(slice, one_pixel_eflow(), weights, state);
  ASSERT_TRUE(r.valid[0]);
  EXPECT_TRUE(std::isfinite(r.delta_eflow[0]));
  EXPECT_EQ(state.hidden, 8);
}

TEST(Gru, WeightFileRoundTrip) {
  const auto dir = epiflow::testing::temp_dir("gru");
  const GruWeights weights = GruWeights::random(4, 11, 9);
  write_gru_weights(weights, (dir / "w.bin").string());
  const GruWeights back = read_gru_weights((dir / "w.bin").string());
  EXPECT_EQ(back.hidden, 4);
  EXPECT_EQ(back.input, 11);
  EXPECT_EQ(back.wz, weights.wz);
  EXPECT_EQ(back.head_b, weights.head_b);
  std::ofstream(dir / "bad.bin") << "nope";
  EXPECT_THROW(read_gru_weights((dir / "bad.bin").string()), Error);
}
