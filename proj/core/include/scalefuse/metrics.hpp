#pragma once

#include <limits>
#include <span>
#include <vector>

#include "scalefuse/geometry.hpp"

namespace scalefuse {

/// Ground-truth depth window in meters: lo <= gt < hi, or gt <= hi when
/// hi_inclusive.
struct DepthRange {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  bool hi_inclusive = false;

  bool contains(double gt) const {
    return gt > 0.0 && gt >= lo && (hi_inclusive ? gt <= hi : gt < hi);
  }
  static DepthRange all() { return {}; }
  static DepthRange near() { return {0.0, 20.0, false}; }
  static DepthRange far() { return {20.0, 80.0, true}; }
};

inline constexpr double kTrimFraction = 0.9;

/// |pred - gt| / gt over pixels valid in both maps with gt in range.
std::vector<double> relative_errors(const DepthMap& pred, const DepthMap& gt,
                                    const DepthRange& range = DepthRange::all());

/// Mean of the lowest ceil(0.9 n) relative errors. Throws kNoValidPixels.
double abs_rel(const DepthMap& pred, const DepthMap& gt,
               const DepthRange& range = DepthRange::all());

/// Untrimmed mean relative error. Throws kNoValidPixels.
double mean_abs_rel(const DepthMap& pred, const DepthMap& gt,
                    const DepthRange& range = DepthRange::all());

/// Fraction of pixels with max(pred/gt, gt/pred) < threshold.
double delta_accuracy(const DepthMap& pred, const DepthMap& gt, double threshold,
                      const DepthRange& range = DepthRange::all());

struct DepthMetrics {
  double abs_rel = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::size_t count = 0;
  DepthRange range;
};

DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt,
                           const DepthRange& range = DepthRange::all());

struct NearFarMetrics {
  DepthMetrics near;
  DepthMetrics far;
};

/// Throws kNoValidPixels if either window is empty.
NearFarMetrics near_far_split(const DepthMap& pred, const DepthMap& gt);

struct TaeResult {
  double tae = 0.0;  // x100
  std::size_t pairs = 0;
  /// 100 * (forward + backward AbsRel) / 2 per adjacent pair; tae is their mean.
  std::vector<double> pair_terms;
};

/// Bidirectional untrimmed AbsRel between pose-warped adjacent depth maps.
/// `poses[k]` maps frame k into frame k+1.
double tae_pair(const DepthMap& d_k, const DepthMap& d_next, const Pose& pose,
                const Intrinsics& k);

/// Mean of tae_pair over k = 0..T-2. Requires at least 3 frames.
TaeResult tae(std::span<const DepthMap> depths, std::span<const Pose> poses, const Intrinsics& k);

}  // namespace scalefuse
