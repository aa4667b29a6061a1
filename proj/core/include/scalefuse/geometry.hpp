#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "scalefuse/grid.hpp"

namespace scalefuse {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

/// Pinhole camera calibration in pixels.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws ErrorCode::kConfig unless fx, fy > 0 and the principal point lies
  /// inside the image.
  void validate() const;

  Mat3 matrix() const;
  Mat3 inverse_matrix() const;

  /// Same normalized rays on an image resized by `factor`.
  Intrinsics scaled(double factor) const;

  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

struct FlowVector {
  float u = 0.0f;
  float v = 0.0f;
  friend bool operator==(const FlowVector&, const FlowVector&) = default;
};

struct Rgb8 {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend bool operator==(const Rgb8&, const Rgb8&) = default;
};

using ScalarMap = PixelGridMap<float>;
/// Unitless, affine-invariant depth; valid entries are strictly positive.
using RelativeDepthMap = PixelGridMap<float>;
/// Metric depth in meters.
using DepthMap = PixelGridMap<float>;
/// Backward flow on the frame-i grid: x_{i-1} = x_i + f(x_i), in pixels.
using FlowField = PixelGridMap<FlowVector>;
using RgbImage = PixelGridMap<Rgb8>;

inline constexpr double kInverseDepthFloor = 1e-6;

/// d_rel = 1 / max(inv_depth, floor). Pixels at the floor, non-finite, or
/// invalid in the input are masked.
RelativeDepthMap relative_depth_from_inverse(const ScalarMap& inverse_depth,
                                             double floor = kInverseDepthFloor);

/// Relative rigid motion between consecutive frames: p_i = R p_{i-1} + T with
/// T = baseline * direction.
class Pose {
 public:
  Pose() = default;

  /// Splits `translation` into baseline and unit direction. A zero translation
  /// keeps direction (0, 0, 1) with zero baseline.
  static Pose from_rotation_translation(const Mat3& rotation, const Vec3& translation);
  static Pose from_direction(const Mat3& rotation, const Vec3& direction, double baseline);
  static Pose identity() { return Pose(); }

  const Mat3& rotation() const noexcept { return rotation_; }
  const Vec3& direction() const noexcept { return direction_; }
  double baseline() const noexcept { return baseline_; }
  Vec3 translation() const { return baseline_ * direction_; }

  /// Rotation vector (axis * angle) of rotation().
  Vec3 rotation_vector() const;

  Pose inverse() const;
  /// Motion from frame i-1 to i+1 given `next` from i to i+1.
  Pose then(const Pose& next) const;

  Vec3 transform(const Vec3& p) const { return rotation_ * p + translation(); }

  /// Throws ErrorCode::kConfig when rotation is not orthonormal with det 1
  /// (1e-9) or direction is not unit length (1e-12).
  void validate() const;

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 direction_ = Vec3::UnitZ();
  double baseline_ = 0.0;
};

Mat3 skew(const Vec3& v);
Mat3 rotation_from_vector(const Vec3& w);
Vec3 vector_from_rotation(const Mat3& r);
double rotation_angle_between(const Mat3& a, const Mat3& b);
double angle_between(const Vec3& a, const Vec3& b);

Vec2 normalize_pixel(const Vec2& pixel, const Intrinsics& k);
Vec2 denormalize(const Vec2& normalized, const Intrinsics& k);

struct MotionFieldMatrices {
  Mat23 a;  // translational part
  Mat23 b;  // rotational part
};

/// A = [[-1,0,x],[0,-1,y]], B = [[xy, -(1+x^2), y], [1+y^2, -xy, -x]].
MotionFieldMatrices motion_field_matrices(double x, double y);

inline constexpr double kDepthFloor = 1e-9;

/// First-order motion field B*omega + A*T / (alpha*d) at normalized (x, y).
/// Throws ErrorCode::kDegenerateDepth when alpha*d < kDepthFloor.
Vec2 predict_motion_field(double x, double y, double d, double alpha,
                          const Vec3& omega, const Vec3& translation);

/// Exact backward displacement (normalized units) of the scene point seen at
/// (x, y) with relative depth d, under rotation R and V = T / alpha. Agrees with
/// predict_motion_field to first order when R = exp([omega]x). Returns nullopt
/// when the point lands behind the previous camera.
std::optional<Vec2> predict_rigid_flow(double x, double y, double d, const Mat3& rotation,
                                       const Vec3& v);

}  // namespace scalefuse
