#include "scalefuse/triangulation.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "scalefuse/stats.hpp"

namespace scalefuse {

void TriangulationConfig::validate() const {
  if (!(min_ray_sine > 0.0 && min_ray_sine < 1.0)) {
    throw Error(ErrorCode::kConfig, "triangulation: min_ray_sine must be in (0, 1)");
  }
  if (!(synthetic_penalty >= 1.0)) {
    throw Error(ErrorCode::kConfig, "triangulation: synthetic_penalty must be >= 1");
  }
  if (!(min_valid_fraction >= 0.0 && min_valid_fraction <= 1.0)) {
    throw Error(ErrorCode::kConfig, "triangulation: min_valid_fraction must be in [0, 1]");
  }
}

Mat3 fundamental_matrix(const Pose& pose, const Intrinsics& k) {
  if (!(pose.baseline() > 0.0)) {
    throw Error(ErrorCode::kZeroTranslation, "fundamental_matrix: zero translation");
  }
  const Mat3 kinv = k.inverse_matrix();
  return kinv.transpose() * skew(pose.translation()) * pose.rotation() * kinv;
}

RayDepths triangulate_rays(const Vec3& ray_prev, const Vec3& ray_curr, const Mat3& rotation,
                           const Vec3& translation, double min_ray_sine) {
  // z_curr c = z_prev a + t; crossing with c and a isolates each depth.
  const Vec3 a = rotation * ray_prev;
  const Vec3& c = ray_curr;
  const Vec3 n = a.cross(c);
  const double nn = n.squaredNorm();
  RayDepths out;
  if (!(nn > min_ray_sine * min_ray_sine * a.squaredNorm() * c.squaredNorm())) {
    out.status = RayStatus::kNearParallel;
    return out;
  }
  out.z_prev = c.cross(translation).dot(n) / nn;
  out.z_curr = a.cross(translation).dot(n) / nn;
  if (!(out.z_prev > 0.0 && out.z_curr > 0.0)) out.status = RayStatus::kBehindCamera;
  return out;
}

RayDepths triangulate_pair(const Vec2& pixel_prev, const Vec2& pixel_curr, const Pose& pose,
                           const Intrinsics& k, double min_ray_sine) {
  const Vec2 p = normalize_pixel(pixel_prev, k);
  const Vec2 c = normalize_pixel(pixel_curr, k);
  return triangulate_rays(Vec3(p.x(), p.y(), 1.0), Vec3(c.x(), c.y(), 1.0), pose.rotation(),
                          pose.translation(), min_ray_sine);
}

double sampson_residual(const Vec3& x_prev, const Vec3& x_curr, const Mat3& f) {
  const Vec3 fx = f * x_prev;
  const Vec3 ftx = f.transpose() * x_curr;
  const double num = x_curr.dot(fx);
  const double den = fx(0) * fx(0) + fx(1) * fx(1) + ftx(0) * ftx(0) + ftx(1) * ftx(1);
  if (!(den > std::numeric_limits<double>::min())) {
    return std::numeric_limits<double>::infinity();
  }
  return num * num / den;
}

Observation build_observation(const FusedFlow& fused, const Pose& pose, const Intrinsics& k,
                              const RelativeDepthMap& d_rel, const TriangulationConfig& cfg) {
  require_same_shape(fused.flow, d_rel, "fused flow vs relative depth");
  const int w = d_rel.width();
  const int h = d_rel.height();
  Mat3 f;
  try {
    f = fundamental_matrix(pose, k);
  } catch (const Error& e) {
    throw Error(ErrorCode::kEmptyObservation, std::string("build_observation: ") + e.what());
  }
  f /= f.norm();
  const Mat3 rotation = pose.rotation();
  const Vec3 translation = pose.translation();

  Observation out;
  out.z_tri = DepthMap(w, h);
  out.sampson.rho = ScalarMap(w, h);
  std::size_t triangulated = 0;

#pragma omp parallel for schedule(static) reduction(+ : triangulated)
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const std::size_t i = d_rel.index(u, v);
      if (!d_rel.valid(i) || !fused.flow.valid(i)) continue;
      const auto flow = fused.flow[i];
      const double up = u + double(flow.u);
      const double vp = v + double(flow.v);
      const Vec3 x_prev(up, vp, 1.0);
      const Vec3 x_curr(u, v, 1.0);
      double rho = sampson_residual(x_prev, x_curr, f);
      if (std::isfinite(rho)) {
        if (fused.source[i] == FlowSource::kSynthetic) rho *= cfg.synthetic_penalty;
        out.sampson.rho.set(i, static_cast<float>(rho));
      }
      const Vec3 ray_prev((up - k.cx) / k.fx, (vp - k.cy) / k.fy, 1.0);
      const Vec3 ray_curr((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      const auto depths = triangulate_rays(ray_prev, ray_curr, rotation, translation, cfg.min_ray_sine);
      if (depths.status == RayStatus::kOk && std::isfinite(depths.z_curr)) {
        out.z_tri.set(i, static_cast<float>(depths.z_curr));
        ++triangulated;
      }
    }
  }
  out.triangulated = triangulated;

  const double needed = cfg.min_valid_fraction * static_cast<double>(w) * h;
  if (triangulated == 0 || static_cast<double>(triangulated) < needed) {
    throw Error(ErrorCode::kEmptyObservation,
                "build_observation: only " + std::to_string(triangulated) +
                    " pixels triangulated");
  }
  std::vector<float> rho_values;
  rho_values.reserve(out.z_tri.size());
  for (std::size_t i = 0; i < out.sampson.rho.size(); ++i) {
    if (out.sampson.rho.valid(i)) rho_values.push_back(out.sampson.rho[i]);
  }
  out.sampson.median = lower_median(std::move(rho_values));
  return out;
}

}  // namespace scalefuse
