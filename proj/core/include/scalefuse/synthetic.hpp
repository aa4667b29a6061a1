#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "scalefuse/geometry.hpp"

namespace scalefuse {

/// Rectangle in world coordinates: origin + a * edge_u + b * edge_v, a, b in
/// [0, 1]; edges must be orthogonal.
struct Quad {
  Vec3 origin = Vec3::Zero();
  Vec3 edge_u = Vec3::UnitX();
  Vec3 edge_v = Vec3::UnitY();
  Rgb8 color{128, 128, 128};
  int region = 0;
};

/// Floor y = base_y + sum_i amplitude_i * sin(kx_i x + kz_i z + phase_i)
/// (image y points down, so larger y is lower).
struct HeightField {
  bool enabled = false;
  double base_y = 1.6;
  std::vector<double> amplitude;
  std::vector<double> kx;
  std::vector<double> kz;
  std::vector<double> phase;
  Rgb8 color{90, 110, 70};
  int region = 0;

  double height(double x, double z) const;
  double bound() const;  // sum |amplitude|
  double lipschitz() const;
};

struct OutlierSpec {
  double fraction = 0.0;  // of image pixels covered by moving blocks
  int block_size = 0;     // 0: width / 8
  double rotation_deg = 4.0;
  double translation = 0.4;  // meters
};

struct NoiseSpec {
  double flow_sigma_px = 0.0;
  double baseline_rel_sigma = 0.0;
  double depth_gain = 1.0;   // d_rel -> gain * d_rel + shift
  double depth_shift = 0.0;
};

struct SceneSpec {
  Intrinsics k;
  std::vector<Quad> quads;
  HeightField floor;
  double depth_min = 0.1;
  double depth_max = 200.0;
  /// motions[i] maps camera i-1 into camera i; motions[0] is the identity.
  std::vector<Pose> motions;
  double alpha = 1.0;                // true scale: depth = alpha * m_region * d_rel
  std::vector<double> region_scales;  // m_region, default 1
  OutlierSpec outliers;
  NoiseSpec noise;
  double frame_interval = 0.1;  // seconds
  std::uint64_t seed = 0;

  int frame_count() const { return static_cast<int>(motions.size()); }
  double region_scale(int region) const;
  void validate() const;
};

struct SceneOptions {
  int width = 160;
  int height = 120;
  int frames = 10;
  std::uint64_t seed = 0;
  int panels = 6;
  bool piecewise_scale = false;
  bool height_field = false;
  double alpha = 3.0;
  double forward_step = 0.4;      // meters per frame
  double lateral_amplitude = 0.08;
  double rotation_amplitude_deg = 1.0;
  OutlierSpec outliers;
  NoiseSpec noise;
};

/// Room box with textured side panels along a gently weaving forward path.
SceneSpec make_scene(const SceneOptions& options);

Intrinsics default_intrinsics(int width, int height);

struct RenderedFrame {
  DepthMap depth;  // ground truth, meters
  RelativeDepthMap d_rel;
  RgbImage image;
  PixelGridMap<std::int32_t> region;
  ScalarMap true_scale;  // depth / d_rel before the affine distortion
};

struct FramePair {
  RenderedFrame prev;
  RenderedFrame curr;
  FlowField flow;  // backward, frame k -> k-1, with outliers and noise
  PixelGridMap<std::uint8_t> outlier_mask;
  Pose pose;  // k-1 -> k
  double baseline_true = 0.0;
  double baseline_measured = 0.0;
};

RenderedFrame render_frame(const SceneSpec& spec, int k);

/// Exact flow by 3D projection; occluded, out-of-view and behind-camera pixels
/// are invalid.
FramePair render_frame_pair(const SceneSpec& spec, int k);

struct OracleSequence {
  SceneSpec spec;
  std::vector<RenderedFrame> frames;
  std::vector<FlowField> flows;  // flows[0] all invalid
  std::vector<PixelGridMap<std::uint8_t>> outlier_masks;
  std::vector<Pose> poses;  // poses[0] identity
  std::vector<double> baselines_true;
  std::vector<double> baselines_measured;
};

OracleSequence render_sequence(const SceneSpec& spec);

struct Correspondence {
  Vec2 pixel_prev;
  Vec2 pixel_curr;
  double depth_prev = 0.0;
  double depth_curr = 0.0;
  int region = 0;
};

/// Double-precision background correspondence of pixel (u, v) in frame k.
std::optional<Correspondence> exact_correspondence(const SceneSpec& spec, int k, double u,
                                                   double v);

/// Nearest surface along the ray through pixel (u, v) of frame k.
struct SurfaceHit {
  double depth = 0.0;
  int surface = -1;  // quad index, or quads.size() for the floor
  Vec3 world = Vec3::Zero();
};
std::optional<SurfaceHit> cast_pixel(const SceneSpec& spec, int k, double u, double v);

/// Pose of world in camera k: x_cam = R x_world + t.
Pose camera_pose(const SceneSpec& spec, int k);

FlowField perturb_flow(const FlowField& flow, double sigma_px, std::uint64_t seed,
                       std::uint64_t stream = 0);
double perturb_baseline(double baseline, double rel_sigma, std::uint64_t seed,
                        std::uint64_t stream = 0);
RelativeDepthMap distort_relative_depth(const RelativeDepthMap& d_rel, double gain, double shift);

}  // namespace scalefuse
