#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scalefuse/geometry.hpp"

namespace scalefuse {

/// Middlebury .flo: "PIEH" tag, int32 width/height, interleaved float32 (u, v),
/// all little-endian. Invalid vectors are written as 1e10; anything above 1e9
/// in magnitude reads back invalid.
void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& path);
/// Throws kDimensionMismatch if the stored size differs from width x height.
FlowField read_flo(const std::filesystem::path& path, int width, int height);

/// Grayscale "Pf" PFM, little-endian (scale -1.0), rows bottom-to-top, NaN for
/// invalid pixels. Reading accepts either byte order.
void write_pfm(const std::filesystem::path& path, const ScalarMap& map);
ScalarMap read_pfm(const std::filesystem::path& path);

/// 16-bit PNG with value round(depth * 256); 0 is invalid. Throws kOverflowDepth
/// when a depth does not fit.
void write_depth_png16(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_depth_png16(const std::filesystem::path& path);

struct LoadedImage {
  RgbImage rgb;
  PixelGridMap<std::uint8_t> gray;  // populated for single-channel input
  bool single_channel = false;
};

/// 8- or 16-bit, one or three channels; 16-bit data is scaled down to 8 bits.
LoadedImage read_image(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const RgbImage& image);

struct PlyPoint {
  Vec3 position;
  Rgb8 color;
};

/// z * K^-1 [u v 1] mapped to the world frame with `world_from_camera`.
void append_points(std::vector<PlyPoint>& cloud, const DepthMap& depth, const RgbImage& image,
                   const Intrinsics& k, const Pose& world_from_camera);
void write_ply(const std::filesystem::path& path, const std::vector<PlyPoint>& cloud);
void export_pointcloud(const std::filesystem::path& path, const DepthMap& depth,
                       const RgbImage& image, const Intrinsics& k, const Pose& world_from_camera);

/// KITTI odometry poses: one row-major 3x4 camera-to-world matrix per line.
std::vector<Pose> read_kitti_poses(const std::filesystem::path& path);
void write_kitti_poses(const std::filesystem::path& path, const std::vector<Pose>& world_from_camera);

/// Relative motions (frame i-1 -> i, first entry identity) from camera-to-world
/// poses, and back.
std::vector<Pose> relative_from_absolute(const std::vector<Pose>& world_from_camera);
std::vector<Pose> absolute_from_relative(const std::vector<Pose>& relative);

struct FrameEntry {
  double timestamp = 0.0;
  std::string image;
  std::string inverse_depth;
  std::optional<std::string> flow;  // backward flow to the previous frame
};

struct OdometryEntry {
  double timestamp = 0.0;
  double baseline = 0.0;  // meters travelled since the previous frame
};

struct GroundTruth {
  std::vector<std::string> depth;  // one PFM per frame
  std::optional<std::string> poses;
  std::optional<double> scale;
};

/// Dataset description; file names are relative to `root`.
struct Manifest {
  std::filesystem::path root;
  Intrinsics intrinsics;
  std::vector<FrameEntry> frames;
  std::vector<OdometryEntry> odometry;
  std::optional<GroundTruth> gt;

  std::filesystem::path resolve(const std::string& name) const { return root / name; }
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct OdometryMatch {
  double baseline = 0.0;
  double residual = 0.0;  // |record timestamp - frame timestamp|, seconds
  bool found = false;
};

/// Nearest odometry record to `timestamp`; ties pick the earlier record.
OdometryMatch associate_odometry(const std::vector<OdometryEntry>& odometry, double timestamp);

}  // namespace scalefuse
