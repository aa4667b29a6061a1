#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "scalefuse/fusion.hpp"

using namespace scalefuse;

namespace {

const Intrinsics kK{100.0, 100.0, 3.5, 1.5, 8, 4};

ScaleObservation uniform_observation(float s, float v) {
  return {ScalarMap(8, 4, s, true), ScalarMap(8, 4, v, true), 0.5};
}

WarpedPrior uniform_prior(float s, float v) {
  return {DepthMap(8, 4, s, true), ScalarMap(8, 4, s, true), ScalarMap(8, 4, v, true)};
}

}  // namespace

TEST(FusionConfig, Validate) {
  FusionConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gain_floor = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = FusionConfig{};
  c.ema = 1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(ChiSquare, QuantileConstant) {
  // P(|N(0,1)| <= sqrt(q)) = 0.99.
  EXPECT_NEAR(std::erf(std::sqrt(kChiSquare99OneDof / 2.0)), 0.99, 1e-12);
}

TEST(Gate, AdmitsNinetyNinePercentOfModeledInnovations) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> var(1e-4, 1.0);
  std::normal_distribution<double> n01;
  const int n = 200000;
  int admitted = 0;
  for (int i = 0; i < n; ++i) {
    const double vp = var(rng), vo = var(rng);
    const double s_prior = 1.0 + n01(rng);
    const double s_obs = s_prior + std::sqrt(vp + vo) * n01(rng);
    admitted += innovation_gate(s_obs, s_prior, vo, vp, kChiSquare99OneDof).outcome == GateOutcome::kInlier;
  }
  EXPECT_NEAR(static_cast<double>(admitted) / n, 0.99, 0.01);
}

TEST(Gate, OutlierKeepsLowerVariance) {
  auto r = innovation_gate(2.0, 1.0, 0.01, 0.04, 6.63);
  EXPECT_EQ(r.outcome, GateOutcome::kKeepObservation);
  EXPECT_DOUBLE_EQ(r.gamma, 1.0 / 0.05);
  r = innovation_gate(2.0, 1.0, 0.04, 0.01, 6.63);
  EXPECT_EQ(r.outcome, GateOutcome::kKeepPrior);
  EXPECT_EQ(innovation_gate(1.1, 1.0, 0.01, 0.01, 6.63).outcome, GateOutcome::kInlier);
}

TEST(Consistency, ScoreShape) {
  EXPECT_DOUBLE_EQ(consistency_score(2.0, 2.0, 0.1), 1.0);
  EXPECT_NEAR(consistency_score(2.0, 1.8, 0.1), std::exp(-0.5), 1e-15);
  EXPECT_DOUBLE_EQ(relative_discrepancy(4.0, 3.0), 0.25);
}

TEST(Tolerance, EmaAndFloor) {
  EXPECT_FALSE(update_tolerance({}, std::nullopt, 0.9, 1e-4));
  EXPECT_EQ(*update_tolerance({}, 0.3, 0.9, 1e-4), 0.3);
  // MAD of {1, 2, 3, 4, 100} around median 3 is 1.
  EXPECT_DOUBLE_EQ(*update_tolerance({1, 2, 3, 4, 100}, std::nullopt, 0.9, 1e-4), 1.0);
  EXPECT_NEAR(*update_tolerance({1, 2, 3, 4, 100}, 2.0, 0.9, 1e-4), 1.9, 1e-15);
  EXPECT_DOUBLE_EQ(*update_tolerance({1, 1, 1}, std::nullopt, 0.9, 1e-4), 1e-4);
}

TEST(Kalman, JosephVarianceNeverExceedsPrior) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> log_var(-8.0, 2.0), unit(0.0, 1.0);
  const double floor = 1e-9;
  for (int i = 0; i < 100000; ++i) {
    const double vp = std::exp(log_var(rng)), vo = std::exp(log_var(rng));
    const double raw = vp / (vp + vo);
    const double kappa = raw * unit(rng);
    const double c = std::max(0.0, (kappa - floor) / (1.0 - floor));
    const auto r = kalman_update(1.0, vp, 1.3, vo, c, floor);
    EXPECT_LE(r.gain, raw);
    ASSERT_LE(r.v, vp * (1.0 + 1e-12)) << "vp " << vp << " vo " << vo << " kappa " << r.gain;
  }
}

TEST(Kalman, FullConsistencyIsTheOptimalUpdate) {
  const auto r = kalman_update(1.0, 0.04, 2.0, 0.01, 1.0, 0.1);
  EXPECT_DOUBLE_EQ(r.gain, 0.8);
  EXPECT_DOUBLE_EQ(r.s, 1.8);
  EXPECT_NEAR(r.v, 0.04 * 0.01 / 0.05, 1e-15);
  // Zero consistency falls back to the gain floor.
  const auto low = kalman_update(1.0, 0.04, 2.0, 0.01, 0.0, 0.1);
  EXPECT_DOUBLE_EQ(low.gain, 0.1);
}

TEST(ObservationVariance, ScaledSampsonWithFloor) {
  EXPECT_DOUBLE_EQ(observation_variance(2.0, kK, 3.0, 1e-9), 3.0 * 2.0 / 1e4);
  EXPECT_DOUBLE_EQ(observation_variance(0.0, kK, 3.0, 1e-6), 1e-6);
  EXPECT_DOUBLE_EQ(prior_inflation(50.0, kK), 1.005);
  const auto inflated = inflate_prior(ScalarMap(8, 4, 2.0f, true), 100.0, kK);
  EXPECT_FLOAT_EQ(inflated[0], 2.02f);
}

TEST(MakeScaleObservation, RatioAndMask) {
  Observation obs;
  obs.z_tri = DepthMap(8, 4);
  obs.sampson.rho = ScalarMap(8, 4, 1.0f, true);
  obs.sampson.median = 1.0;
  obs.z_tri.set(0, 6.0f);
  obs.z_tri.set(1, 4.0f);
  RelativeDepthMap d(8, 4, 2.0f, true);
  d.invalidate(1);
  const auto s = make_scale_observation(obs, d, kK, FusionConfig{});
  EXPECT_EQ(s.s_obs.valid_count(), 1u);
  EXPECT_FLOAT_EQ(s.s_obs[0], 3.0f);
  EXPECT_TRUE(s.v_obs.valid(0));
}

TEST(FuseFrame, BootstrapUsesGlobalMedian) {
  auto obs = uniform_observation(2.0f, 0.01f);
  obs.s_obs[3] = 5.0f;
  obs.s_obs.invalidate(4);
  const RelativeDepthMap d(8, 4, 1.0f, true);
  const auto r = fuse_frame(ScaleState{}, nullptr, &obs, d, kK, FusionConfig{});
  EXPECT_EQ(r.state.frame_index, 0);
  EXPECT_EQ(r.state.s.valid_count(), 32u);
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_EQ(r.state.s[i], 2.0f);
    EXPECT_FLOAT_EQ(r.state.v[i], 25.0f * 0.01f);
  }
}

TEST(FuseFrame, ConsistentObservationsShrinkVariance) {
  ScaleState prev;
  prev.frame_index = 0;
  prev.s = ScalarMap(8, 4, 2.0f, true);
  prev.v = ScalarMap(8, 4, 0.04f, true);
  const auto prior = uniform_prior(2.0f, 0.04f);
  const auto obs = uniform_observation(2.02f, 0.04f);
  const RelativeDepthMap d(8, 4, 1.0f, true);
  const auto r = fuse_frame(prev, &prior, &obs, d, kK, FusionConfig{});
  EXPECT_EQ(r.stats.fused, 32u);
  EXPECT_EQ(r.stats.gated, 0u);
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_GT(r.state.s[i], 2.0f);
    EXPECT_LT(r.state.s[i], 2.02f);
    EXPECT_LT(r.state.v[i], 0.04f * r.stats.inflation);
  }
  EXPECT_TRUE(r.state.has_tolerance);
}

TEST(FuseFrame, GateRejectsWildObservation) {
  ScaleState prev;
  prev.frame_index = 0;
  const auto prior = uniform_prior(2.0f, 1e-4f);
  const auto obs = uniform_observation(3.0f, 1e-3f);
  const RelativeDepthMap d(8, 4, 1.0f, true);
  const auto r = fuse_frame(prev, &prior, &obs, d, kK, FusionConfig{});
  EXPECT_EQ(r.stats.gated, 32u);
  EXPECT_DOUBLE_EQ(r.stats.gate_rejection_rate(), 1.0);
  EXPECT_EQ(r.state.s[0], 2.0f);  // prior has the smaller variance
}

TEST(FuseFrame, PriorOnlyInflatesWithLastRho) {
  ScaleState prev;
  prev.frame_index = 3;
  prev.rho_median = 200.0;
  const auto prior = uniform_prior(2.0f, 0.01f);
  const RelativeDepthMap d(8, 4, 1.0f, true);
  const auto r = fuse_frame(prev, &prior, nullptr, d, kK, FusionConfig{});
  EXPECT_EQ(r.stats.prior_only, 32u);
  EXPECT_FLOAT_EQ(r.state.v[0], static_cast<float>(0.01f * 1.02));
  EXPECT_EQ(r.state.s[0], 2.0f);
  EXPECT_EQ(r.state.frame_index, 4);
}

TEST(FuseFrame, MixedCoverage) {
  ScaleState prev;
  prev.frame_index = 0;
  auto prior = uniform_prior(2.0f, 0.01f);
  auto obs = uniform_observation(2.0f, 0.01f);
  prior.s_prior.invalidate(0);
  prior.v_prior.invalidate(0);
  obs.s_obs.invalidate(1);
  obs.s_obs.invalidate(0 + 8);
  prior.s_prior.invalidate(8);
  const RelativeDepthMap d(8, 4, 1.0f, true);
  const auto r = fuse_frame(prev, &prior, &obs, d, kK, FusionConfig{});
  EXPECT_EQ(r.stats.observation_only, 1u);
  EXPECT_EQ(r.stats.prior_only, 1u);
  EXPECT_EQ(r.stats.fused, 29u);
  EXPECT_FALSE(r.state.s.valid(8));
}
