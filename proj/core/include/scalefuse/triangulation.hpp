#pragma once

#include <cstdint>

#include "scalefuse/geometry.hpp"
#include "scalefuse/motion.hpp"

namespace scalefuse {

struct TriangulationConfig {
  /// Rays whose angle has a sine below this are treated as parallel.
  double min_ray_sine = 1e-4;
  /// Multiplier on rho for pixels whose flow was filled from the motion model.
  double synthetic_penalty = 4.0;
  /// Fewer triangulated pixels than this fraction make the frame prior-only.
  double min_valid_fraction = 1e-3;

  void validate() const;
};

/// F = K^-T [T]x R K^-1, so x_i^T F x_{i-1} = 0 for true correspondences.
/// Throws kZeroTranslation for a zero baseline.
Mat3 fundamental_matrix(const Pose& pose, const Intrinsics& k);

enum class RayStatus : std::uint8_t { kOk, kNearParallel, kBehindCamera };

struct RayDepths {
  double z_prev = 0.0;
  double z_curr = 0.0;
  RayStatus status = RayStatus::kOk;
};

/// Least-squares intersection of z_prev * R * ray_prev + T and z_curr * ray_curr
/// from the 2x2 normal equations. Rays are normalized coordinates (x, y, 1).
RayDepths triangulate_rays(const Vec3& ray_prev, const Vec3& ray_curr, const Mat3& rotation,
                           const Vec3& translation, double min_ray_sine = 1e-4);

/// Pixel-coordinate wrapper around triangulate_rays.
RayDepths triangulate_pair(const Vec2& pixel_prev, const Vec2& pixel_curr, const Pose& pose,
                           const Intrinsics& k, double min_ray_sine = 1e-4);

/// Sampson residual in squared pixels for homogeneous pixels x_prev, x_curr.
/// Returns +inf when the gradient norm vanishes.
double sampson_residual(const Vec3& x_prev, const Vec3& x_curr, const Mat3& f);

struct SampsonMap {
  ScalarMap rho;          // squared pixels
  double median = 0.0;    // lower median over valid pixels
};

struct Observation {
  DepthMap z_tri;  // meters, frame-i grid
  SampsonMap sampson;
  std::size_t triangulated = 0;
};

/// Triangulated depth and Sampson map for every pixel with fused flow. Throws
/// kEmptyObservation when too few pixels triangulate (including rotation-only
/// motion).
Observation build_observation(const FusedFlow& fused, const Pose& pose, const Intrinsics& k,
                              const RelativeDepthMap& d_rel, const TriangulationConfig& cfg);

}  // namespace scalefuse
