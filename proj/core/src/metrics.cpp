#include "scalefuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scalefuse/propagation.hpp"

namespace scalefuse {

namespace {

void require_pixels(std::size_t n, const char* what) {
  if (n == 0) throw Error(ErrorCode::kNoValidPixels, std::string(what) + ": no valid pixels");
}

}  // namespace

std::vector<double> relative_errors(const DepthMap& pred, const DepthMap& gt, const DepthRange& range) {
  require_same_shape(pred, gt, "prediction vs ground truth");
  std::vector<double> errors;
  errors.reserve(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid(i) || !pred.valid(i)) continue;
    const double g = gt[i];
    if (!range.contains(g)) continue;
    errors.push_back(std::abs(double(pred[i]) - g) / g);
  }
  return errors;
}

double abs_rel(const DepthMap& pred, const DepthMap& gt, const DepthRange& range) {
  auto errors = relative_errors(pred, gt, range);
  require_pixels(errors.size(), "abs_rel");
  const auto keep = static_cast<std::size_t>(std::ceil(kTrimFraction * errors.size()));
  std::sort(errors.begin(), errors.end());
  return std::accumulate(errors.begin(), errors.begin() + static_cast<std::ptrdiff_t>(keep), 0.0) /
         static_cast<double>(keep);
}

double mean_abs_rel(const DepthMap& pred, const DepthMap& gt, const DepthRange& range) {
  const auto errors = relative_errors(pred, gt, range);
  require_pixels(errors.size(), "mean_abs_rel");
  return std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
}

namespace {

std::vector<double> ratios(const DepthMap& pred, const DepthMap& gt, const DepthRange& range) {
  require_same_shape(pred, gt, "prediction vs ground truth");
  std::vector<double> out;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid(i) || !pred.valid(i)) continue;
    const double g = gt[i];
    const double p = pred[i];
    if (!range.contains(g)) continue;
    out.push_back(p > 0.0 ? std::max(p / g, g / p) : std::numeric_limits<double>::infinity());
  }
  return out;
}

double fraction_below(const std::vector<double>& r, double threshold) {
  const auto hits = std::count_if(r.begin(), r.end(), [&](double x) { return x < threshold; });
  return static_cast<double>(hits) / static_cast<double>(r.size());
}

}  // namespace

double delta_accuracy(const DepthMap& pred, const DepthMap& gt, double threshold, const DepthRange& range) {
  const auto r = ratios(pred, gt, range);
  require_pixels(r.size(), "delta_accuracy");
  return fraction_below(r, threshold);
}

DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt, const DepthRange& range) {
  DepthMetrics m;
  m.range = range;
  m.abs_rel = abs_rel(pred, gt, range);
  const auto r = ratios(pred, gt, range);
  m.count = r.size();
  m.delta1 = fraction_below(r, 1.25);
  m.delta2 = fraction_below(r, 1.25 * 1.25);
  m.delta3 = fraction_below(r, 1.25 * 1.25 * 1.25);
  return m;
}

NearFarMetrics near_far_split(const DepthMap& pred, const DepthMap& gt) {
  return {depth_metrics(pred, gt, DepthRange::near()), depth_metrics(pred, gt, DepthRange::far())};
}

double tae_pair(const DepthMap& d_k, const DepthMap& d_next, const Pose& pose, const Intrinsics& k) {
  require_same_shape(d_k, d_next, "adjacent depth maps");
  const double forward = mean_abs_rel(warp_depth(d_k, pose, k), d_next);
  const double backward = mean_abs_rel(warp_depth(d_next, pose.inverse(), k), d_k);
  return 100.0 * (forward + backward) / 2.0;
}

TaeResult tae(std::span<const DepthMap> depths, std::span<const Pose> poses, const Intrinsics& k) {
  if (depths.size() < 3) {
    throw Error(ErrorCode::kInsufficientFrames, "tae: need at least 3 frames");
  }
  if (poses.size() + 1 != depths.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "tae: need one pose per adjacent frame pair");
  }
  TaeResult out;
  out.pairs = poses.size();
  out.pair_terms.resize(out.pairs);
  const auto pairs = static_cast<std::ptrdiff_t>(out.pairs);
  for (std::ptrdiff_t p = 0; p < pairs; ++p) {
    const auto i = static_cast<std::size_t>(p);
    out.pair_terms[i] = tae_pair(depths[i], depths[i + 1], poses[i], k);
  }
  out.tae = std::accumulate(out.pair_terms.begin(), out.pair_terms.end(), 0.0) /
            static_cast<double>(out.pairs);
  return out;
}

}  // namespace scalefuse
