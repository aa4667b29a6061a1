#include "scalefuse/geometry.hpp"

#include <cmath>
#include <string>

namespace scalefuse {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegenerateDepth: return "degenerate-depth";
    case ErrorCode::kInsufficientSamples: return "insufficient-samples";
    case ErrorCode::kRankDeficient: return "rank-deficient";
    case ErrorCode::kZeroBaseline: return "zero-baseline";
    case ErrorCode::kDegenerateTranslation: return "degenerate-translation";
    case ErrorCode::kNoConsensus: return "no-consensus";
    case ErrorCode::kZeroTranslation: return "zero-translation";
    case ErrorCode::kEmptyObservation: return "empty-observation";
    case ErrorCode::kNoValidPixels: return "no-valid-pixels";
    case ErrorCode::kInsufficientFrames: return "insufficient-frames";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kTruncatedFile: return "truncated-file";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kMalformedHeader: return "malformed-header";
    case ErrorCode::kOverflowDepth: return "overflow-depth";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kConfig: return "config";
  }
  return "unknown";
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::kConfig, "intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::kConfig, "intrinsics: image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw Error(ErrorCode::kConfig, "intrinsics: principal point outside the image");
  }
}

Mat3 Intrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

Mat3 Intrinsics::inverse_matrix() const {
  Mat3 k;
  k << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
  return k;
}

Intrinsics Intrinsics::scaled(double factor) const {
  // Pixel centers at integer coordinates: u' + 0.5 = factor * (u + 0.5).
  Intrinsics out = *this;
  out.fx = fx * factor;
  out.fy = fy * factor;
  out.cx = (cx + 0.5) * factor - 0.5;
  out.cy = (cy + 0.5) * factor - 0.5;
  out.width = static_cast<int>(std::lround(width * factor));
  out.height = static_cast<int>(std::lround(height * factor));
  return out;
}

RelativeDepthMap relative_depth_from_inverse(const ScalarMap& inverse_depth, double floor) {
  RelativeDepthMap out(inverse_depth.width(), inverse_depth.height());
  const std::size_t n = inverse_depth.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!inverse_depth.valid(i)) continue;
    const double inv = inverse_depth[i];
    if (!std::isfinite(inv) || inv <= floor) continue;
    out.set(i, static_cast<float>(1.0 / inv));
  }
  return out;
}

Pose Pose::from_rotation_translation(const Mat3& rotation, const Vec3& translation) {
  Pose p;
  p.rotation_ = rotation;
  const double norm = translation.norm();
  if (norm > 0.0) {
    p.direction_ = translation / norm;
    p.baseline_ = norm;
  }
  return p;
}

Pose Pose::from_direction(const Mat3& rotation, const Vec3& direction, double baseline) {
  Pose p;
  p.rotation_ = rotation;
  p.direction_ = direction.normalized();
  p.baseline_ = baseline;
  return p;
}

Vec3 Pose::rotation_vector() const { return vector_from_rotation(rotation_); }

Pose Pose::inverse() const {
  const Mat3 rt = rotation_.transpose();
  return from_rotation_translation(rt, -(rt * translation()));
}

Pose Pose::then(const Pose& next) const {
  return from_rotation_translation(next.rotation_ * rotation_,
                                   next.rotation_ * translation() + next.translation());
}

void Pose::validate() const {
  const double ortho = (rotation_.transpose() * rotation_ - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-9 || std::abs(rotation_.determinant() - 1.0) > 1e-9) {
    throw Error(ErrorCode::kConfig, "pose: rotation is not a proper orthonormal matrix");
  }
  if (std::abs(direction_.norm() - 1.0) > 1e-12) {
    throw Error(ErrorCode::kConfig, "pose: translation direction is not unit length");
  }
  if (baseline_ < 0.0) throw Error(ErrorCode::kConfig, "pose: negative baseline");
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Mat3 rotation_from_vector(const Vec3& w) {
  const double angle = w.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

Vec3 vector_from_rotation(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  return Eigen::AngleAxisd(a.transpose() * b).angle();
}

double angle_between(const Vec3& a, const Vec3& b) {
  // atan2 form stays accurate for nearly parallel vectors.
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

Vec2 normalize_pixel(const Vec2& pixel, const Intrinsics& k) {
  return {(pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy};
}

Vec2 denormalize(const Vec2& normalized, const Intrinsics& k) {
  return {normalized.x() * k.fx + k.cx, normalized.y() * k.fy + k.cy};
}

MotionFieldMatrices motion_field_matrices(double x, double y) {
  MotionFieldMatrices m;
  m.a << -1.0, 0.0, x, 0.0, -1.0, y;
  m.b << x * y, -(1.0 + x * x), y, 1.0 + y * y, -x * y, -x;
  return m;
}

Vec2 predict_motion_field(double x, double y, double d, double alpha, const Vec3& omega,
                          const Vec3& translation) {
  const double depth = alpha * d;
  if (!(depth >= kDepthFloor)) {
    throw Error(ErrorCode::kDegenerateDepth,
                "motion field: alpha * d_rel below floor (" + std::to_string(depth) + ")");
  }
  const auto m = motion_field_matrices(x, y);
  return m.b * omega + (m.a * translation) / depth;
}

std::optional<Vec2> predict_rigid_flow(double x, double y, double d, const Mat3& rotation,
                                       const Vec3& v) {
  const Vec3 q = rotation.transpose() * (Vec3(x, y, 1.0) - v / d);
  if (!(q.z() > 1e-12)) return std::nullopt;
  return Vec2(q.x() / q.z() - x, q.y() / q.z() - y);
}

}  // namespace scalefuse
