#pragma once

#include "scalefuse/geometry.hpp"

namespace scalefuse {

/// Previous posterior carried into the current frame. Uncovered pixels are
/// masked in all three maps.
struct WarpedPrior {
  DepthMap z_prior;   // meters
  ScalarMap s_prior;  // z_prior / d_rel
  ScalarMap v_prior;  // scale variance

  std::size_t covered() const { return z_prior.valid_count(); }
};

/// Forward splat of the previous posterior depth (and its variance) under
/// p_i = R p_{i-1} + T, nearest-pixel rounding, nearest depth wins, ties go to
/// the lower source index. Where d_rel is valid, s_prior = z/d_rel and z_prior
/// is stored as s_prior * d_rel so the two agree bit for bit.
WarpedPrior warp_posterior(const DepthMap& z_post_prev, const ScalarMap& v_post_prev,
                           const Pose& pose, const Intrinsics& k,
                           const RelativeDepthMap& d_rel_curr);

/// Depth-only warp used for temporal metrics.
DepthMap warp_depth(const DepthMap& depth, const Pose& pose, const Intrinsics& k);

}  // namespace scalefuse
