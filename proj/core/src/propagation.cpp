#include "scalefuse/propagation.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace scalefuse {

namespace {

constexpr std::uint64_t kEmpty = std::numeric_limits<std::uint64_t>::max();

// Positive floats order like their bit patterns, so (depth bits, source index)
// packed into one word gives nearest-depth-then-lowest-index under plain min.
std::uint64_t pack(float depth, std::size_t source) {
  return (static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(depth)) << 32) |
         static_cast<std::uint64_t>(source);
}

void atomic_min(std::uint64_t& slot, std::uint64_t value) {
  std::atomic_ref<std::uint64_t> ref(slot);
  std::uint64_t current = ref.load(std::memory_order_relaxed);
  while (value < current &&
         !ref.compare_exchange_weak(current, value, std::memory_order_relaxed)) {
  }
}

std::vector<std::uint64_t> splat(const DepthMap& depth, const Pose& pose, const Intrinsics& k) {
  const int w = depth.width();
  const int h = depth.height();
  std::vector<std::uint64_t> zbuffer(depth.size(), kEmpty);
  const Mat3 r = pose.rotation();
  const Vec3 t = pose.translation();

#pragma omp parallel for schedule(static)
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const std::size_t i = depth.index(u, v);
      if (!depth.valid(i)) continue;
      const double z = depth[i];
      const Vec3 p(z * (u - k.cx) / k.fx, z * (v - k.cy) / k.fy, z);
      const Vec3 q = r * p + t;
      if (!(q.z() > 0.0)) continue;
      const double ut = k.fx * q.x() / q.z() + k.cx;
      const double vt = k.fy * q.y() / q.z() + k.cy;
      const long ui = std::lround(ut);
      const long vi = std::lround(vt);
      if (ui < 0 || vi < 0 || ui >= w || vi >= h) continue;
      const float zt = static_cast<float>(q.z());
      if (!(zt > 0.0f) || !std::isfinite(zt)) continue;
      atomic_min(zbuffer[depth.index(static_cast<int>(ui), static_cast<int>(vi))], pack(zt, i));
    }
  }
  return zbuffer;
}

}  // namespace

WarpedPrior warp_posterior(const DepthMap& z_post_prev, const ScalarMap& v_post_prev,
                           const Pose& pose, const Intrinsics& k,
                           const RelativeDepthMap& d_rel_curr) {
  require_same_shape(z_post_prev, v_post_prev, "posterior depth vs variance");
  require_same_shape(z_post_prev, d_rel_curr, "posterior depth vs relative depth");
  const auto zbuffer = splat(z_post_prev, pose, k);
  const int w = z_post_prev.width();
  const int h = z_post_prev.height();
  WarpedPrior out{DepthMap(w, h), ScalarMap(w, h), ScalarMap(w, h)};
  for (std::size_t i = 0; i < zbuffer.size(); ++i) {
    if (zbuffer[i] == kEmpty) continue;
    const float z = std::bit_cast<float>(static_cast<std::uint32_t>(zbuffer[i] >> 32));
    const auto source = static_cast<std::size_t>(zbuffer[i] & 0xFFFFFFFFull);
    if (d_rel_curr.valid(i)) {
      const float s = z / d_rel_curr[i];
      out.s_prior.set(i, s);
      out.z_prior.set(i, s * d_rel_curr[i]);
      if (v_post_prev.valid(source)) out.v_prior.set(i, v_post_prev[source]);
    } else {
      out.z_prior.set(i, z);
    }
  }
  return out;
}

DepthMap warp_depth(const DepthMap& depth, const Pose& pose, const Intrinsics& k) {
  const auto zbuffer = splat(depth, pose, k);
  DepthMap out(depth.width(), depth.height());
  for (std::size_t i = 0; i < zbuffer.size(); ++i) {
    if (zbuffer[i] == kEmpty) continue;
    out.set(i, std::bit_cast<float>(static_cast<std::uint32_t>(zbuffer[i] >> 32)));
  }
  return out;
}

}  // namespace scalefuse
