#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "scalefuse/synthetic.hpp"
#include "scalefuse/triangulation.hpp"

using namespace scalefuse;

namespace {

const Intrinsics kK{96.0, 96.0, 79.5, 59.5, 160, 120};

// Squared distances of each point to the epipolar line induced by the other.
struct LineDistances {
  double curr2;
  double prev2;
  double algebraic;
  double line_curr2;
  double line_prev2;
};

LineDistances line_distances(const Vec3& xp, const Vec3& xc, const Mat3& f) {
  double l_curr[3] = {0, 0, 0}, l_prev[3] = {0, 0, 0};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      l_curr[r] += f(r, c) * xp(c);
      l_prev[c] += f(r, c) * xc(r);
    }
  }
  const double e = xc(0) * l_curr[0] + xc(1) * l_curr[1] + xc(2) * l_curr[2];
  const double nc = l_curr[0] * l_curr[0] + l_curr[1] * l_curr[1];
  const double np = l_prev[0] * l_prev[0] + l_prev[1] * l_prev[1];
  return {e * e / nc, e * e / np, e, nc, np};
}

}  // namespace

TEST(TriangulationConfig, Validate) {
  TriangulationConfig c;
  EXPECT_NO_THROW(c.validate());
  c.min_ray_sine = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = TriangulationConfig{};
  c.synthetic_penalty = 0.5;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Fundamental, EpipolarConstraintForTrueCorrespondences) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3.0, 3.0), z(3.0, 40.0);
  const auto pose = Pose::from_rotation_translation(rotation_from_vector(Vec3(0.02, -0.05, 0.01)),
                                                    Vec3(0.3, -0.1, 1.0));
  Mat3 f = fundamental_matrix(pose, kK);
  f /= f.norm();
  for (int i = 0; i < 100; ++i) {
    const Vec3 p_prev(u(rng), u(rng), z(rng));
    const Vec3 p_curr = pose.transform(p_prev);
    const Vec3 xp = kK.matrix() * p_prev / p_prev.z();
    const Vec3 xc = kK.matrix() * p_curr / p_curr.z();
    EXPECT_NEAR(xc.dot(f * xp), 0.0, 1e-12);
    EXPECT_NEAR(sampson_residual(xp, xc, f), 0.0, 1e-20);
  }
}

TEST(Fundamental, ZeroTranslationThrows) {
  try {
    fundamental_matrix(Pose::from_rotation_translation(Mat3::Identity(), Vec3::Zero()), kK);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kZeroTranslation);
  }
}

TEST(Sampson, MatchesPointToLineOracle) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> px(0.0, 160.0), off(-3.0, 3.0);
  const auto pose = Pose::from_rotation_translation(rotation_from_vector(Vec3(0.01, 0.02, -0.01)),
                                                    Vec3(0.2, 0.1, 1.0));
  Mat3 f = fundamental_matrix(pose, kK);
  f /= f.norm();
  for (int i = 0; i < 500; ++i) {
    const Vec3 xp(px(rng), px(rng) * 0.75, 1.0);
    const Vec3 xc(xp.x() + off(rng), xp.y() + off(rng), 1.0);
    const double rho = sampson_residual(xp, xc, f);
    const auto d = line_distances(xp, xc, f);
    // e^2 / (|l_curr|^2 + |l_prev|^2), bounded by each one-sided distance.
    const double reference = d.algebraic * d.algebraic / (d.line_curr2 + d.line_prev2);
    EXPECT_NEAR(rho, reference, 1e-12 * std::max(1.0, reference));
    EXPECT_LE(rho, d.curr2 * (1 + 1e-12) + 1e-300);
    EXPECT_LE(rho, d.prev2 * (1 + 1e-12) + 1e-300);
    EXPECT_GE(rho, 0.0);
  }
}

TEST(Sampson, DegenerateGradientIsInfinite) {
  EXPECT_TRUE(std::isinf(sampson_residual(Vec3(1, 2, 1), Vec3(3, 4, 1), Mat3::Zero())));
}

TEST(TriangulateRays, ExactOnSyntheticPoints) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-4.0, 4.0), z(2.0, 60.0);
  const Mat3 r = rotation_from_vector(Vec3(-0.01, 0.03, 0.002));
  const Vec3 t(0.1, 0.02, 0.7);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p_prev(u(rng), u(rng), z(rng));
    const Vec3 p_curr = r * p_prev + t;
    const auto d = triangulate_rays(p_prev / p_prev.z(), p_curr / p_curr.z(), r, t);
    ASSERT_EQ(d.status, RayStatus::kOk);
    EXPECT_NEAR(d.z_prev, p_prev.z(), 1e-9 * p_prev.z());
    EXPECT_NEAR(d.z_curr, p_curr.z(), 1e-9 * p_curr.z());
  }
}

TEST(TriangulateRays, ParallelAndBehind) {
  // Pure rotation: rays coincide after rotation.
  const Mat3 r = rotation_from_vector(Vec3(0.0, 0.02, 0.0));
  const Vec3 ray(0.1, 0.05, 1.0);
  EXPECT_EQ(triangulate_rays(ray, r * ray / (r * ray).z(), r, Vec3(0, 0, 1e-3)).status,
            RayStatus::kNearParallel);
  // Intersection behind both cameras.
  const Vec3 p_prev(0.5, 0.0, 5.0);
  const Vec3 t(0.0, 0.0, 1.0);
  const Vec3 p_curr = p_prev + t;
  const auto d = triangulate_rays(p_prev / p_prev.z(), p_curr / p_curr.z(), Mat3::Identity(), -t);
  EXPECT_EQ(d.status, RayStatus::kBehindCamera);
}

TEST(TriangulatePair, ExactCorrespondencesFromOracleScene) {
  SceneOptions o;
  o.frames = 3;
  const auto spec = make_scene(o);
  int checked = 0;
  for (int v = 2; v < 120; v += 9) {
    for (int u = 3; u < 160; u += 11) {
      const auto c = exact_correspondence(spec, 2, u, v);
      if (!c) continue;
      const auto d = triangulate_pair(c->pixel_prev, c->pixel_curr, spec.motions[2], spec.k);
      if (d.status != RayStatus::kOk) continue;
      EXPECT_NEAR(d.z_curr, c->depth_curr, 1e-9 * c->depth_curr);
      EXPECT_NEAR(d.z_prev, c->depth_prev, 1e-9 * c->depth_prev);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(BuildObservation, NoiselessFlowGivesGroundTruthDepth) {
  SceneOptions o;
  o.frames = 2;
  const auto spec = make_scene(o);
  const auto pair = render_frame_pair(spec, 1);
  FusedFlow fused;
  fused.flow = pair.flow;
  fused.source = PixelGridMap<FlowSource>(160, 120, FlowSource::kObserved, true);
  const auto obs = build_observation(fused, pair.pose, spec.k, pair.curr.d_rel, TriangulationConfig{});
  std::vector<double> errors;
  for (std::size_t i = 0; i < obs.z_tri.size(); ++i) {
    if (!obs.z_tri.valid(i)) continue;
    EXPECT_TRUE(pair.flow.valid(i));
    errors.push_back(std::abs(obs.z_tri[i] - pair.curr.depth[i]) / pair.curr.depth[i]);
  }
  ASSERT_GT(errors.size(), 10000u);
  std::nth_element(errors.begin(), errors.begin() + errors.size() / 2, errors.end());
  EXPECT_LT(errors[errors.size() / 2], 1e-4);
  EXPECT_EQ(obs.triangulated, errors.size());
  EXPECT_LT(obs.sampson.median, 1e-6);
}

TEST(BuildObservation, SyntheticFlowIsPenalized) {
  SceneOptions o;
  o.frames = 2;
  o.noise.flow_sigma_px = 0.5;
  const auto spec = make_scene(o);
  const auto pair = render_frame_pair(spec, 1);
  FusedFlow fused;
  fused.flow = pair.flow;
  fused.source = PixelGridMap<FlowSource>(160, 120, FlowSource::kObserved, true);
  TriangulationConfig cfg;
  const auto a = build_observation(fused, pair.pose, spec.k, pair.curr.d_rel, cfg);
  for (std::size_t i = 0; i < fused.source.size(); ++i) fused.source[i] = FlowSource::kSynthetic;
  const auto b = build_observation(fused, pair.pose, spec.k, pair.curr.d_rel, cfg);
  for (std::size_t i = 0; i < a.sampson.rho.size(); i += 37) {
    if (a.sampson.rho.valid(i)) EXPECT_FLOAT_EQ(b.sampson.rho[i], static_cast<float>(a.sampson.rho[i] * cfg.synthetic_penalty));
  }
}

TEST(BuildObservation, RotationOnlyIsEmpty) {
  FusedFlow fused;
  fused.flow = FlowField(160, 120, FlowVector{0.5f, 0.0f}, true);
  fused.source = PixelGridMap<FlowSource>(160, 120, FlowSource::kObserved, true);
  RelativeDepthMap d(160, 120, 1.0f, true);
  try {
    build_observation(fused, Pose::from_rotation_translation(rotation_from_vector(Vec3(0, 0.01, 0)), Vec3::Zero()),
                      kK, d, TriangulationConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyObservation);
  }
}
