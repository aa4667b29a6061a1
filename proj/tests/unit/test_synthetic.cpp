#include <gtest/gtest.h>

#include "scalefuse/synthetic.hpp"

using namespace scalefuse;

namespace {

SceneSpec small_scene(std::uint64_t seed, bool piecewise = false) {
  SceneOptions o;
  o.frames = 4;
  o.seed = seed;
  o.piecewise_scale = piecewise;
  return make_scene(o);
}

}  // namespace

TEST(Scene, DeterministicPerSeed) {
  const auto a = small_scene(5), b = small_scene(5), c = small_scene(6);
  ASSERT_EQ(a.motions.size(), 4u);
  for (std::size_t i = 0; i < a.motions.size(); ++i) {
    EXPECT_EQ(a.motions[i].rotation(), b.motions[i].rotation());
    EXPECT_EQ(a.motions[i].translation(), b.motions[i].translation());
  }
  EXPECT_NE(a.motions[1].translation(), c.motions[1].translation());
  EXPECT_EQ(a.quads.size(), b.quads.size());
  EXPECT_NO_THROW(a.validate());
  EXPECT_GT(a.motions[2].baseline(), 0.39);
}

TEST(Scene, RejectsBadOptions) {
  SceneOptions o;
  o.frames = 0;
  EXPECT_THROW(make_scene(o), Error);
}

TEST(Render, DepthFollowsScaleModel) {
  const auto spec = small_scene(1, true);
  const auto f = render_frame(spec, 2);
  ASSERT_EQ(f.depth.valid_count(), f.depth.size());
  for (std::size_t i = 0; i < f.depth.size(); ++i) {
    ASSERT_TRUE(f.d_rel.valid(i));
    const double expected = spec.alpha * spec.region_scale(f.region[i]);
    EXPECT_NEAR(f.true_scale[i], expected, 1e-5 * expected);
    EXPECT_NEAR(f.depth[i], f.true_scale[i] * f.d_rel[i], 1e-5 * f.depth[i]);
    EXPECT_GE(f.depth[i], spec.depth_min);
  }
}

TEST(Render, DistortedRelativeDepth) {
  SceneOptions o;
  o.frames = 2;
  o.noise.depth_gain = 2.0;
  o.noise.depth_shift = 0.5;
  const auto f = render_frame(make_scene(o), 0);
  for (std::size_t i = 0; i < f.depth.size(); i += 101) {
    EXPECT_NEAR(f.d_rel[i], 2.0 * f.depth[i] / f.true_scale[i] + 0.5, 1e-4 * f.d_rel[i]);
  }
}

TEST(Render, FlowAgreesWithExactCorrespondence) {
  const auto spec = small_scene(2);
  const auto pair = render_frame_pair(spec, 2);
  int checked = 0;
  for (int v = 0; v < 120; v += 3) {
    for (int u = 0; u < 160; u += 3) {
      const auto c = exact_correspondence(spec, 2, u, v);
      ASSERT_EQ(c.has_value(), pair.flow.valid(u, v)) << u << "," << v;
      if (!c) continue;
      EXPECT_NEAR(u + pair.flow(u, v).u, c->pixel_prev.x(), 1e-3);
      EXPECT_NEAR(v + pair.flow(u, v).v, c->pixel_prev.y(), 1e-3);
      EXPECT_NEAR(c->depth_curr, pair.curr.depth(u, v), 1e-5 * c->depth_curr);
      // The correspondence is a rigid reprojection of the previous point.
      const Vec3 p_prev = c->depth_prev * spec.k.inverse_matrix() * Vec3(c->pixel_prev.x(), c->pixel_prev.y(), 1.0);
      const Vec3 p_curr = spec.motions[2].transform(p_prev);
      EXPECT_NEAR(p_curr.z(), c->depth_curr, 1e-9 * c->depth_curr);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(Render, SequenceMatchesPairs) {
  const auto spec = small_scene(3);
  const auto seq = render_sequence(spec);
  ASSERT_EQ(seq.frames.size(), 4u);
  EXPECT_EQ(seq.flows[0].valid_count(), 0u);
  for (int k = 1; k < 4; ++k) {
    const auto pair = render_frame_pair(spec, k);
    EXPECT_EQ(seq.flows[static_cast<std::size_t>(k)], pair.flow);
    EXPECT_EQ(seq.frames[static_cast<std::size_t>(k)].depth, pair.curr.depth);
    EXPECT_EQ(seq.baselines_measured[static_cast<std::size_t>(k)], pair.baseline_measured);
  }
}

TEST(Render, OutliersCoverRequestedFraction) {
  SceneOptions o;
  o.frames = 3;
  o.outliers.fraction = 0.3;
  const auto spec = make_scene(o);
  const auto pair = render_frame_pair(spec, 1);
  std::size_t marked = 0;
  for (std::size_t i = 0; i < pair.outlier_mask.size(); ++i) marked += pair.outlier_mask[i] != 0;
  const double fraction = static_cast<double>(marked) / pair.outlier_mask.size();
  EXPECT_GT(fraction, 0.2);
  EXPECT_LT(fraction, 0.4);
  const auto clean = render_frame_pair(small_scene(0), 1);
  for (std::size_t i = 0; i < clean.outlier_mask.size(); ++i) ASSERT_EQ(clean.outlier_mask[i], 0);
}

TEST(Render, HeightFieldFloor) {
  SceneOptions o;
  o.frames = 2;
  o.height_field = true;
  const auto spec = make_scene(o);
  EXPECT_TRUE(spec.floor.enabled);
  EXPECT_GT(spec.floor.bound(), 0.0);
  EXPECT_LE(std::abs(spec.floor.height(1.0, 7.0) - spec.floor.base_y), spec.floor.bound() + 1e-12);
  const auto f = render_frame(spec, 1);
  EXPECT_EQ(f.depth.valid_count(), f.depth.size());
  const auto hit = cast_pixel(spec, 1, 80.0, 118.0);
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->surface, static_cast<int>(spec.quads.size()));
}

TEST(Perturb, DeterministicPerSeedAndStream) {
  const FlowField flow(16, 8, FlowVector{1.0f, -2.0f}, true);
  EXPECT_EQ(perturb_flow(flow, 0.0, 1), flow);
  const auto a = perturb_flow(flow, 0.5, 1, 3);
  EXPECT_EQ(a, perturb_flow(flow, 0.5, 1, 3));
  EXPECT_NE(a, perturb_flow(flow, 0.5, 1, 4));
  EXPECT_NE(a, perturb_flow(flow, 0.5, 2, 3));
  EXPECT_EQ(perturb_baseline(0.4, 0.0, 9), 0.4);
  EXPECT_EQ(perturb_baseline(0.4, 0.1, 9, 1), perturb_baseline(0.4, 0.1, 9, 1));
  EXPECT_NE(perturb_baseline(0.4, 0.1, 9, 1), 0.4);
  const RelativeDepthMap d(2, 1, 2.0f, true);
  EXPECT_EQ(distort_relative_depth(d, 3.0, 1.0)[0], 7.0f);
}
