#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "scalefuse/geometry.hpp"

namespace scalefuse {

struct RansacConfig {
  int max_iterations = 128;
  int min_sample_size = 8;
  /// tau: lower bound on the residual normalizer, pixels.
  double flow_floor_px = 1.0;
  /// Flows shorter than this are treated as static and never sampled.
  double static_flow_px = 0.1;
  /// lambda in eta0 = median(e) + lambda * MAD(e).
  double mad_multiplier = 3.0;
  double target_inlier_ratio = 0.45;
  double relax_factor = 1.2;
  double tighten_factor = 0.9;
  double min_threshold = 0.02;
  double max_threshold = 1.0;
  /// Stop once the leading hypothesis holds this ratio at min_threshold.
  double early_exit_ratio = 0.8;
  /// Below this best inlier ratio the frame has no consensus.
  double min_inlier_ratio = 0.2;
  /// Angular gate: median + k * MAD of the frame's deviations, for |f| >= 2 tau.
  double angle_mad_multiplier = 3.0;
  double min_angle_threshold = 0.05;
  int cells_per_axis = 8;
  int depth_bins = 4;
  int per_group_cap = 32;
  int huber_iterations = 10;
  /// fuse_flow keeps e <= median + k * MAD of e at the refined pose, never
  /// below eta or above max_threshold.
  double validation_mad_multiplier = 5.0;
  /// |V| below this means rotation-only motion.
  double degenerate_translation = 1e-6;
  double min_baseline = 1e-4;

  void validate() const;
};

struct MotionSample {
  std::size_t pixel = 0;
  double x = 0.0;  // normalized coordinates on the current frame
  double y = 0.0;
  Vec2 flow = Vec2::Zero();     // normalized units
  Vec2 flow_px = Vec2::Zero();  // pixels
  double flow_norm_px = 0.0;
  double depth = 0.0;  // relative depth
  int cell = 0;
  int depth_bin = 0;
};

/// Stratified draw: image cells x log-depth bins, at most per_group_cap samples
/// per group. Throws kInsufficientSamples below 2 * min_sample_size.
std::vector<MotionSample> stratified_sample(const FlowField& flow, const RelativeDepthMap& d_rel,
                                            const Intrinsics& k, const RansacConfig& cfg,
                                            std::uint64_t seed);

struct LinearSystem {
  Eigen::MatrixXd design;  // 2N x 6, rows [B | A / d]
  Eigen::VectorXd rhs;     // 2N, observed flow in normalized units
};

/// Unknown vector is [omega; V] with V = T / alpha.
LinearSystem build_linear_system(std::span<const MotionSample> samples);
LinearSystem build_weighted_system(std::span<const MotionSample> samples,
                                   std::span<const double> weights);

struct MotionSolution {
  Vec3 omega = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  double residual_norm = 0.0;
};

/// Column-pivoted Householder least squares. Throws kRankDeficient when the
/// numerical rank is below 6.
MotionSolution solve_motion(const LinearSystem& system);

/// Smallest-to-largest singular value ratio of the design matrix.
double design_conditioning(const LinearSystem& system);

struct ScaleRecovery {
  Vec3 direction = Vec3::UnitZ();
  /// alpha * d_rel is metric depth.
  double alpha = 0.0;
  Vec3 translation = Vec3::Zero();
};

/// direction = V/|V|, alpha = b/|V|, T = b * direction. Throws kZeroBaseline
/// for b < min_baseline and kDegenerateTranslation for |V| < floor.
ScaleRecovery recover_scale(const Vec3& v, double baseline, double min_baseline = 1e-4,
                            double degenerate_translation = 1e-6);

/// e = r / max(|f|, tau) with r = |f - prediction|, both in pixels.
double normalized_residual(const Vec2& observed_px, const Vec2& predicted_px, double tau);

/// arccos of the cosine between observed and predicted flow, in [0, pi].
double angular_deviation(const Vec2& observed, const Vec2& predicted);

/// True when the angular deviation is below `threshold`, or when either vector
/// is shorter than `min_flow_px` (the gate only applies to sufficiently large
/// flows).
bool directional_gate(const Vec2& observed_px, const Vec2& predicted_px, double threshold,
                      double min_flow_px);

/// Robust gate threshold max(min_angle, median + k * MAD) of `deviations`.
double angle_threshold(std::vector<double> deviations, const RansacConfig& cfg);

enum class FlowModel : std::uint8_t {
  kMotionField,  // first-order field, used while hypothesizing
  kRigid,        // exact rigid reprojection, used after refinement
};

struct MotionHypothesis {
  FlowModel model = FlowModel::kMotionField;
  Vec3 omega = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
  Vec3 v = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double alpha = 0.0;
  double baseline = 0.0;
  double threshold = 0.0;        // eta
  double validation_threshold = 0.0;  // e gate for fuse_flow; 0 falls back to eta
  double angle_threshold = 0.0;  // directional gate
  std::vector<std::uint8_t> inliers;
  int inlier_count = 0;
  int covered_cells = 0;
  int total_cells = 0;
  double score = 0.0;

  double inlier_ratio() const {
    return inliers.empty() ? 0.0 : static_cast<double>(inlier_count) / inliers.size();
  }
  bool has_translation() const { return alpha > 0.0; }
  Pose pose() const;
};

/// Predicted flow of `s` under `h`, pixels. nullopt if the point falls behind
/// the previous camera.
std::optional<Vec2> predict_sample_flow(const MotionSample& s, const MotionHypothesis& h,
                                        const Intrinsics& k);

struct ResidualStats {
  std::vector<double> residuals;  // e per sample, +inf if unpredictable
  std::vector<std::uint8_t> direction_ok;
  double angle_threshold = 0.0;
};

ResidualStats evaluate_hypothesis(std::span<const MotionSample> samples,
                                  const MotionHypothesis& h, const Intrinsics& k,
                                  const RansacConfig& cfg);

/// Adaptive RANSAC over the first-order field without refinement. Scores by
/// inlier_count * covered_cells / total_cells; eta starts at median + lambda *
/// MAD and is relaxed or tightened after each hypothesis. Throws kNoConsensus.
MotionHypothesis ransac_consensus(std::span<const MotionSample> samples, double baseline,
                                  const Intrinsics& k, const RansacConfig& cfg,
                                  std::uint64_t seed);

/// Huber-weighted Gauss-Newton on the exact rigid model. Weights come from e,
/// rows are in pixels, and the inlier set is reselected under eta after every
/// step. The Huber cost on the final inlier set never exceeds its value at the
/// starting hypothesis.
MotionHypothesis irls_refine(std::span<const MotionSample> samples,
                             const MotionHypothesis& hypothesis, const Intrinsics& k,
                             const RansacConfig& cfg);

/// Huber cost sum over inliers with the hypothesis' own eta.
double huber_cost(std::span<const MotionSample> samples, const MotionHypothesis& h,
                  const Intrinsics& k, const RansacConfig& cfg);

/// ransac_consensus followed by irls_refine.
MotionHypothesis ransac_motion(std::span<const MotionSample> samples, double baseline,
                               const Intrinsics& k, const RansacConfig& cfg,
                               std::uint64_t seed);

enum class FlowSource : std::uint8_t { kInvalid = 0, kObserved = 1, kSynthetic = 2 };

struct FusedFlow {
  FlowField flow;
  PixelGridMap<FlowSource> source;
  std::size_t observed = 0;
  std::size_t synthetic = 0;
};

/// Pixels that pass both the residual gate (validation_threshold) and the
/// directional gate keep the observed flow; every other pixel with valid
/// relative depth gets the predicted flow.
FusedFlow fuse_flow(const FlowField& flow, const RelativeDepthMap& d_rel, const Intrinsics& k,
                    const MotionHypothesis& h, const RansacConfig& cfg);

}  // namespace scalefuse
