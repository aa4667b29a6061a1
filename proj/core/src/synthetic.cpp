#include "scalefuse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "scalefuse/random.hpp"

namespace scalefuse {

namespace {

constexpr std::uint64_t kStreamGeometry = 0;
constexpr std::uint64_t kStreamTrajectory = 1;
constexpr std::uint64_t kStreamFlowNoise = 1000;
constexpr std::uint64_t kStreamBaselineNoise = 2000;
constexpr std::uint64_t kStreamOutliers = 3000;

constexpr double kVisibilityTolerance = 1e-6;

struct Camera {
  Mat3 r;  // world -> camera
  Vec3 t;
  Vec3 center() const { return -r.transpose() * t; }
};

std::vector<Camera> cameras_up_to(const SceneSpec& spec, int k) {
  std::vector<Camera> out;
  out.reserve(static_cast<std::size_t>(k + 1));
  Camera c{Mat3::Identity(), Vec3::Zero()};
  out.push_back(c);
  for (int i = 1; i <= k; ++i) {
    const auto& m = spec.motions[static_cast<std::size_t>(i)];
    c = Camera{m.rotation() * c.r, m.rotation() * c.t + m.translation()};
    out.push_back(c);
  }
  return out;
}

std::uint32_t hash3(std::int64_t a, std::int64_t b, std::int64_t c) {
  std::uint64_t h = mix_seed(static_cast<std::uint64_t>(a) * 0x9E3779B1u,
                             static_cast<std::uint64_t>(b) * 0x85EBCA77u + static_cast<std::uint64_t>(c));
  return static_cast<std::uint32_t>(h >> 32);
}

std::uint8_t shade(std::uint8_t base, int delta) {
  return static_cast<std::uint8_t>(std::clamp(static_cast<int>(base) + delta, 0, 255));
}

Rgb8 textured(Rgb8 base, std::int64_t surface, double s, double t) {
  constexpr double cell = 0.35;
  const auto h = hash3(surface, static_cast<std::int64_t>(std::floor(s / cell)),
                       static_cast<std::int64_t>(std::floor(t / cell)));
  const int delta = static_cast<int>(h % 41) - 20;
  return {shade(base.r, delta), shade(base.g, delta), shade(base.b, delta)};
}

struct RayHit {
  double t = std::numeric_limits<double>::infinity();
  int surface = -1;
  double s = 0.0;  // surface texture coordinates, meters
  double u = 0.0;
};

void intersect_quads(const SceneSpec& spec, const Vec3& c, const Vec3& d, RayHit& best) {
  for (std::size_t q = 0; q < spec.quads.size(); ++q) {
    const auto& quad = spec.quads[q];
    const Vec3 n = quad.edge_u.cross(quad.edge_v);
    const double denom = n.dot(d);
    if (std::abs(denom) < 1e-15) continue;
    const double t = n.dot(quad.origin - c) / denom;
    if (!(t > spec.depth_min) || t >= best.t) continue;
    const Vec3 rel = c + t * d - quad.origin;
    const double lu = quad.edge_u.squaredNorm();
    const double lv = quad.edge_v.squaredNorm();
    const double a = rel.dot(quad.edge_u) / lu;
    const double b = rel.dot(quad.edge_v) / lv;
    if (a < 0.0 || a > 1.0 || b < 0.0 || b > 1.0) continue;
    best = RayHit{t, static_cast<int>(q), a * std::sqrt(lu), b * std::sqrt(lv)};
  }
}

// Lipschitz-bounded march followed by bisection; never skips the first
// crossing for steps above the minimum.
void intersect_floor(const SceneSpec& spec, const Vec3& c, const Vec3& d, RayHit& best) {
  const auto& f = spec.floor;
  if (!f.enabled) return;
  auto g = [&](double t) {
    const Vec3 p = c + t * d;
    return f.height(p.x(), p.z()) - p.y();
  };
  const double slope = std::abs(d.y()) + f.lipschitz() * std::hypot(d.x(), d.z());
  const double t_max = std::min(best.t, spec.depth_max);
  double t = spec.depth_min;
  double gt = g(t);
  if (!(gt > 0.0)) return;
  // The ray can only cross while it is inside the surface's vertical band.
  if (d.y() <= 0.0 && c.y() + t * d.y() < f.base_y - f.bound()) return;
  constexpr double kMinStep = 1e-3;
  for (int it = 0; it < 200000 && t < t_max; ++it) {
    const double step = std::max(gt / slope, kMinStep);
    const double next = std::min(t + step, t_max);
    const double gn = g(next);
    if (gn <= 0.0) {
      double lo = t;
      double hi = next;
      for (int b = 0; b < 80; ++b) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) > 0.0 ? lo : hi) = mid;
      }
      const double hit = hi;
      if (hit < best.t) {
        const Vec3 p = c + hit * d;
        best = RayHit{hit, static_cast<int>(spec.quads.size()), p.x(), p.z()};
      }
      return;
    }
    if (next >= t_max) return;
    t = next;
    gt = gn;
  }
}

RayHit cast(const SceneSpec& spec, const Camera& cam, double x, double y) {
  const Vec3 c = cam.center();
  const Vec3 d = cam.r.transpose() * Vec3(x, y, 1.0);
  RayHit best;
  intersect_quads(spec, c, d, best);
  intersect_floor(spec, c, d, best);
  if (best.surface >= 0 && best.t > spec.depth_max) best = RayHit{};
  return best;
}

Rgb8 surface_color(const SceneSpec& spec, const RayHit& hit) {
  if (hit.surface < static_cast<int>(spec.quads.size())) {
    return textured(spec.quads[static_cast<std::size_t>(hit.surface)].color, hit.surface, hit.s, hit.u);
  }
  return textured(spec.floor.color, hit.surface, hit.s, hit.u);
}

int surface_region(const SceneSpec& spec, int surface) {
  if (surface < static_cast<int>(spec.quads.size())) return spec.quads[static_cast<std::size_t>(surface)].region;
  return spec.floor.region;
}

Vec2 project(const Vec3& p, const Intrinsics& k) {
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

bool inside(const Vec2& px, const Intrinsics& k) {
  return px.x() >= -0.5 && px.y() >= -0.5 && px.x() < k.width - 0.5 && px.y() < k.height - 0.5;
}

struct BackgroundMatch {
  Vec2 pixel_prev;
  Vec3 point_curr;
  double depth_prev = 0.0;
  int region = 0;
};

std::optional<BackgroundMatch> background_match(const SceneSpec& spec, const Camera& prev,
                                                const Camera& curr, double u, double v) {
  const auto& k = spec.k;
  const double x = (u - k.cx) / k.fx;
  const double y = (v - k.cy) / k.fy;
  const RayHit hit = cast(spec, curr, x, y);
  if (hit.surface < 0) return std::nullopt;
  const Vec3 world = curr.center() + hit.t * (curr.r.transpose() * Vec3(x, y, 1.0));
  const Vec3 p_prev = prev.r * world + prev.t;
  if (!(p_prev.z() > spec.depth_min)) return std::nullopt;
  const Vec2 px = project(p_prev, k);
  if (!inside(px, k)) return std::nullopt;
  const RayHit seen = cast(spec, prev, p_prev.x() / p_prev.z(), p_prev.y() / p_prev.z());
  if (seen.surface < 0 || seen.t < p_prev.z() * (1.0 - kVisibilityTolerance)) return std::nullopt;
  return BackgroundMatch{px, Vec3(x * hit.t, y * hit.t, hit.t), p_prev.z(),
                         surface_region(spec, hit.surface)};
}

RenderedFrame render_with(const SceneSpec& spec, const Camera& cam) {
  const auto& k = spec.k;
  const int w = k.width;
  const int h = k.height;
  RenderedFrame f{DepthMap(w, h), RelativeDepthMap(w, h), RgbImage(w, h, Rgb8{}, true),
                  PixelGridMap<std::int32_t>(w, h, -1, true), ScalarMap(w, h)};
  RelativeDepthMap clean(w, h);
#pragma omp parallel for schedule(dynamic, 4)
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const std::size_t i = f.depth.index(u, v);
      const RayHit hit = cast(spec, cam, (u - k.cx) / k.fx, (v - k.cy) / k.fy);
      if (hit.surface < 0) continue;
      const int region = surface_region(spec, hit.surface);
      const double scale = spec.alpha * spec.region_scale(region);
      f.depth.set(i, static_cast<float>(hit.t));
      clean.set(i, static_cast<float>(hit.t / scale));
      f.true_scale.set(i, static_cast<float>(scale));
      f.image[i] = surface_color(spec, hit);
      f.region[i] = region;
    }
  }
  f.d_rel = distort_relative_depth(clean, spec.noise.depth_gain, spec.noise.depth_shift);
  return f;
}

void plant_outliers(const SceneSpec& spec, int k, const Camera& prev, const Camera& curr,
                    const DepthMap& depth, FlowField& flow, PixelGridMap<std::uint8_t>& mask) {
  const auto& o = spec.outliers;
  if (!(o.fraction > 0.0)) return;
  const auto& K = spec.k;
  const int w = K.width;
  const int h = K.height;
  const int block = std::clamp(o.block_size > 0 ? o.block_size : w / 8, 1, std::min(w, h));
  auto rng = make_rng(spec.seed, kStreamOutliers + static_cast<std::uint64_t>(k));
  std::uniform_int_distribution<int> pick_u(0, w - block);
  std::uniform_int_distribution<int> pick_v(0, h - block);
  std::uniform_real_distribution<double> unit(0.5, 1.0);
  std::normal_distribution<double> normal;
  const Mat3 r_rel = curr.r * prev.r.transpose();
  const Vec3 t_rel = curr.t - r_rel * prev.t;

  const auto target = static_cast<std::size_t>(std::ceil(o.fraction * static_cast<double>(w) * h));
  std::size_t covered = 0;
  for (int attempt = 0; covered < target && attempt < 100000; ++attempt) {
    const int u0 = pick_u(rng);
    const int v0 = pick_v(rng);
    Vec3 axis(normal(rng), normal(rng), normal(rng));
    axis.normalize();
    Vec3 shift(normal(rng), normal(rng), normal(rng));
    shift.normalize();
    const double angle = o.rotation_deg * std::numbers::pi / 180.0 * unit(rng);
    const Mat3 r_obj = rotation_from_vector(angle * axis);
    const Vec3 t_obj = o.translation * unit(rng) * shift;
    const int uc = u0 + block / 2;
    const int vc = v0 + block / 2;
    const double zc = depth.valid(uc, vc) ? depth(uc, vc) : 10.0;
    const Vec3 centroid(zc * (uc - K.cx) / K.fx, zc * (vc - K.cy) / K.fy, zc);
    for (int v = v0; v < v0 + block; ++v) {
      for (int u = u0; u < u0 + block; ++u) {
        const std::size_t i = depth.index(u, v);
        if (!mask[i]) {
          mask[i] = 1;
          ++covered;
        }
        flow.invalidate(i);
        if (!depth.valid(i)) continue;
        const double z = depth[i];
        const Vec3 p(z * (u - K.cx) / K.fx, z * (v - K.cy) / K.fy, z);
        const Vec3 moved = r_obj * (p - centroid) + centroid + t_obj;
        const Vec3 p_prev = r_rel.transpose() * (moved - t_rel);
        if (!(p_prev.z() > spec.depth_min)) continue;
        const Vec2 px = project(p_prev, K);
        flow.set(i, FlowVector{static_cast<float>(px.x() - u), static_cast<float>(px.y() - v)});
      }
    }
  }
}

FlowField exact_flow(const SceneSpec& spec, const Camera& prev, const Camera& curr) {
  const int w = spec.k.width;
  const int h = spec.k.height;
  FlowField flow(w, h);
#pragma omp parallel for schedule(dynamic, 4)
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const auto m = background_match(spec, prev, curr, u, v);
      if (!m) continue;
      flow.set(flow.index(u, v), FlowVector{static_cast<float>(m->pixel_prev.x() - u),
                                            static_cast<float>(m->pixel_prev.y() - v)});
    }
  }
  return flow;
}

}  // namespace

double HeightField::height(double x, double z) const {
  double y = base_y;
  for (std::size_t i = 0; i < amplitude.size(); ++i) {
    y += amplitude[i] * std::sin(kx[i] * x + kz[i] * z + phase[i]);
  }
  return y;
}

double HeightField::bound() const {
  double b = 0.0;
  for (double a : amplitude) b += std::abs(a);
  return b;
}

double HeightField::lipschitz() const {
  double l = 0.0;
  for (std::size_t i = 0; i < amplitude.size(); ++i) {
    l += std::abs(amplitude[i]) * std::hypot(kx[i], kz[i]);
  }
  return l;
}

double SceneSpec::region_scale(int region) const {
  if (region >= 0 && static_cast<std::size_t>(region) < region_scales.size()) {
    return region_scales[static_cast<std::size_t>(region)];
  }
  return 1.0;
}

void SceneSpec::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfig, "scene: " + what); };
  k.validate();
  if (motions.empty()) fail("needs at least one frame");
  for (const auto& m : motions) m.validate();
  if (!(alpha > 0.0)) fail("alpha must be positive");
  for (double s : region_scales) {
    if (!(s > 0.0)) fail("region scales must be positive");
  }
  if (!(depth_min > 0.0 && depth_max > depth_min)) fail("bad depth range");
  if (!(outliers.fraction >= 0.0 && outliers.fraction < 1.0)) fail("outlier fraction must be in [0, 1)");
  if (!(noise.flow_sigma_px >= 0.0) || !(noise.baseline_rel_sigma >= 0.0)) fail("noise must be >= 0");
  if (!(noise.depth_gain > 0.0) || !std::isfinite(noise.depth_shift)) fail("bad depth distortion");
  const auto n = floor.amplitude.size();
  if (floor.kx.size() != n || floor.kz.size() != n || floor.phase.size() != n) fail("height field arrays differ in length");
  for (const auto& q : quads) {
    if (std::abs(q.edge_u.dot(q.edge_v)) > 1e-9 * q.edge_u.norm() * q.edge_v.norm()) fail("quad edges must be orthogonal");
  }
}

Intrinsics default_intrinsics(int width, int height) {
  Intrinsics k;
  k.fx = k.fy = 0.6 * width;
  k.cx = (width - 1) / 2.0;
  k.cy = (height - 1) / 2.0;
  k.width = width;
  k.height = height;
  return k;
}

SceneSpec make_scene(const SceneOptions& opt) {
  if (opt.frames < 1 || opt.width < 2 || opt.height < 2) {
    throw Error(ErrorCode::kConfig, "scene: bad frame count or size");
  }
  SceneSpec spec;
  spec.k = default_intrinsics(opt.width, opt.height);
  spec.alpha = opt.alpha;
  spec.outliers = opt.outliers;
  spec.noise = opt.noise;
  spec.seed = opt.seed;

  auto traj = make_rng(opt.seed, kStreamTrajectory);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double p[6] = {phase(traj), phase(traj), phase(traj), phase(traj), phase(traj), phase(traj)};
  const double rot = opt.rotation_amplitude_deg * std::numbers::pi / 180.0;
  spec.motions.push_back(Pose::identity());
  for (int i = 1; i < opt.frames; ++i) {
    const Vec3 omega(0.4 * rot * std::sin(1.3 * i + p[0]), rot * std::sin(0.9 * i + p[1]),
                     0.3 * rot * std::sin(0.7 * i + p[2]));
    const Vec3 displacement(opt.lateral_amplitude * std::sin(0.6 * i + p[3]),
                            0.2 * opt.lateral_amplitude * std::sin(1.1 * i + p[4]), opt.forward_step);
    const Mat3 r = rotation_from_vector(omega);
    spec.motions.push_back(Pose::from_rotation_translation(r, -r * displacement));
  }

  auto geo = make_rng(opt.seed, kStreamGeometry);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * uni(geo); };
  auto color = [&] {
    return Rgb8{static_cast<std::uint8_t>(range(30, 230)), static_cast<std::uint8_t>(range(30, 230)),
                static_cast<std::uint8_t>(range(30, 230))};
  };

  const double travel = opt.forward_step * opt.frames;
  const double x0 = -7.0, x1 = 7.0, y0 = -3.5, y1 = 1.6, z0 = -5.0, z1 = travel + 45.0;
  auto quad = [](Vec3 o, Vec3 eu, Vec3 ev, Rgb8 c) { return Quad{o, eu, ev, c, 0}; };
  if (!opt.height_field) {
    spec.quads.push_back(quad({x0, y1, z0}, {x1 - x0, 0, 0}, {0, 0, z1 - z0}, {110, 100, 90}));
  }
  spec.quads.push_back(quad({x0, y0, z0}, {x1 - x0, 0, 0}, {0, 0, z1 - z0}, {200, 200, 210}));
  spec.quads.push_back(quad({x0, y0, z0}, {0, y1 - y0, 0}, {0, 0, z1 - z0}, {160, 90, 80}));
  spec.quads.push_back(quad({x1, y0, z0}, {0, y1 - y0, 0}, {0, 0, z1 - z0}, {80, 110, 170}));
  spec.quads.push_back(quad({x0, y0, z1}, {x1 - x0, 0, 0}, {0, y1 - y0, 0}, {150, 160, 110}));

  spec.region_scales.push_back(1.0);
  for (int i = 0; i < opt.panels; ++i) {
    const double width = range(1.2, 3.0);
    const double height = range(1.2, 2.5);
    const double yaw = range(-0.6, 0.6);
    const Vec3 eu = width * Vec3(std::cos(yaw), 0.0, std::sin(yaw));
    const Vec3 ev(0.0, height, 0.0);
    const double half_x = 0.5 * width * std::abs(std::cos(yaw));
    const double side = uni(geo) < 0.5 ? -1.0 : 1.0;
    const double xc = side * range(1.2 + half_x, std::max(1.3 + half_x, 5.5));
    const double yc = std::min(range(-1.5, 0.6), y1 - 0.5 * height - 0.05);
    const double zc = range(4.0, travel + 30.0);
    const Vec3 center(xc, yc, zc);
    const int region = static_cast<int>(spec.region_scales.size());
    spec.quads.push_back(Quad{center - 0.5 * eu - 0.5 * ev, eu, ev, color(), region});
    double m = 1.0;
    if (opt.piecewise_scale) {
      do {
        m = range(0.7, 1.4);
      } while (std::abs(m - 1.0) < 0.1);
    }
    spec.region_scales.push_back(m);
  }

  if (opt.height_field) {
    auto& f = spec.floor;
    f.enabled = true;
    f.base_y = y1;
    for (int i = 0; i < 3; ++i) {
      f.amplitude.push_back(range(0.03, 0.12));
      f.kx.push_back(range(-1.5, 1.5));
      f.kz.push_back(range(0.3, 1.5));
      f.phase.push_back(phase(geo));
    }
    f.base_y = y1 - f.bound();
  }
  spec.validate();
  return spec;
}

Pose camera_pose(const SceneSpec& spec, int k) {
  const auto cams = cameras_up_to(spec, k);
  return Pose::from_rotation_translation(cams.back().r, cams.back().t);
}

std::optional<SurfaceHit> cast_pixel(const SceneSpec& spec, int k, double u, double v) {
  const auto cams = cameras_up_to(spec, k);
  const auto& cam = cams.back();
  const double x = (u - spec.k.cx) / spec.k.fx;
  const double y = (v - spec.k.cy) / spec.k.fy;
  const RayHit hit = cast(spec, cam, x, y);
  if (hit.surface < 0) return std::nullopt;
  return SurfaceHit{hit.t, hit.surface, cam.center() + hit.t * (cam.r.transpose() * Vec3(x, y, 1.0))};
}

RenderedFrame render_frame(const SceneSpec& spec, int k) {
  if (k < 0 || k >= spec.frame_count()) throw Error(ErrorCode::kConfig, "render_frame: index out of range");
  return render_with(spec, cameras_up_to(spec, k).back());
}

namespace {

FramePair render_pair(const SceneSpec& spec, int k, const Camera& prev, const Camera& curr,
                      RenderedFrame prev_frame) {
  FramePair out;
  out.prev = std::move(prev_frame);
  out.curr = render_with(spec, curr);
  out.pose = spec.motions[static_cast<std::size_t>(k)];
  out.baseline_true = out.pose.baseline();
  out.baseline_measured = perturb_baseline(out.baseline_true, spec.noise.baseline_rel_sigma, spec.seed,
                                           kStreamBaselineNoise + static_cast<std::uint64_t>(k));
  out.flow = exact_flow(spec, prev, curr);
  out.outlier_mask = PixelGridMap<std::uint8_t>(spec.k.width, spec.k.height, 0, true);
  plant_outliers(spec, k, prev, curr, out.curr.depth, out.flow, out.outlier_mask);
  out.flow = perturb_flow(out.flow, spec.noise.flow_sigma_px, spec.seed,
                          kStreamFlowNoise + static_cast<std::uint64_t>(k));
  return out;
}

}  // namespace

FramePair render_frame_pair(const SceneSpec& spec, int k) {
  if (k < 1 || k >= spec.frame_count()) throw Error(ErrorCode::kConfig, "render_frame_pair: index out of range");
  const auto cams = cameras_up_to(spec, k);
  const auto& prev = cams[static_cast<std::size_t>(k - 1)];
  return render_pair(spec, k, prev, cams.back(), render_with(spec, prev));
}

OracleSequence render_sequence(const SceneSpec& spec) {
  spec.validate();
  const int n = spec.frame_count();
  const auto cams = cameras_up_to(spec, n - 1);
  OracleSequence seq;
  seq.spec = spec;
  seq.frames.push_back(render_with(spec, cams[0]));
  seq.flows.emplace_back(spec.k.width, spec.k.height);
  seq.outlier_masks.emplace_back(spec.k.width, spec.k.height, 0, true);
  seq.poses.push_back(Pose::identity());
  seq.baselines_true.push_back(0.0);
  seq.baselines_measured.push_back(0.0);
  for (int k = 1; k < n; ++k) {
    auto pair = render_pair(spec, k, cams[static_cast<std::size_t>(k - 1)],
                            cams[static_cast<std::size_t>(k)], RenderedFrame{});
    seq.frames.push_back(std::move(pair.curr));
    seq.flows.push_back(std::move(pair.flow));
    seq.outlier_masks.push_back(std::move(pair.outlier_mask));
    seq.poses.push_back(pair.pose);
    seq.baselines_true.push_back(pair.baseline_true);
    seq.baselines_measured.push_back(pair.baseline_measured);
  }
  return seq;
}

std::optional<Correspondence> exact_correspondence(const SceneSpec& spec, int k, double u, double v) {
  if (k < 1 || k >= spec.frame_count()) return std::nullopt;
  const auto cams = cameras_up_to(spec, k);
  const auto m = background_match(spec, cams[static_cast<std::size_t>(k - 1)], cams.back(), u, v);
  if (!m) return std::nullopt;
  return Correspondence{m->pixel_prev, Vec2(u, v), m->depth_prev, m->point_curr.z(), m->region};
}

FlowField perturb_flow(const FlowField& flow, double sigma_px, std::uint64_t seed, std::uint64_t stream) {
  if (!(sigma_px > 0.0)) return flow;
  auto rng = make_rng(seed, stream);
  std::normal_distribution<double> normal(0.0, sigma_px);
  FlowField out = flow;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!out.valid(i)) continue;
    out[i].u = static_cast<float>(out[i].u + normal(rng));
    out[i].v = static_cast<float>(out[i].v + normal(rng));
  }
  return out;
}

double perturb_baseline(double baseline, double rel_sigma, std::uint64_t seed, std::uint64_t stream) {
  if (!(rel_sigma > 0.0)) return baseline;
  auto rng = make_rng(seed, stream);
  std::normal_distribution<double> normal(0.0, rel_sigma);
  return std::max(0.0, baseline * (1.0 + normal(rng)));
}

RelativeDepthMap distort_relative_depth(const RelativeDepthMap& d_rel, double gain, double shift) {
  if (gain == 1.0 && shift == 0.0) return d_rel;
  RelativeDepthMap out(d_rel.width(), d_rel.height());
  for (std::size_t i = 0; i < d_rel.size(); ++i) {
    if (!d_rel.valid(i)) continue;
    const float d = static_cast<float>(gain * d_rel[i] + shift);
    if (d > 0.0f) out.set(i, d);
  }
  return out;
}

}  // namespace scalefuse
