#include "scalefuse/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "json_util.hpp"

namespace scalefuse {

namespace {

constexpr float kFloMagic = 202021.25f;
constexpr float kFloUnknown = 1e10f;
constexpr float kFloInvalidAbove = 1e9f;

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

std::uint32_t byteswap32(std::uint32_t x) {
  return (x >> 24) | ((x >> 8) & 0xFF00u) | ((x << 8) & 0xFF0000u) | (x << 24);
}

void put_u32_le(std::string& out, std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::big) x = byteswap32(x);
  char bytes[4];
  std::memcpy(bytes, &x, 4);
  out.append(bytes, 4);
}

std::uint32_t get_u32(const char* p, bool little) {
  std::uint32_t x;
  std::memcpy(&x, p, 4);
  if (little != (std::endian::native == std::endian::little)) x = byteswap32(x);
  return x;
}

FlowField decode_flo(const std::string& bytes, const std::filesystem::path& path) {
  if (bytes.size() < 4) throw Error(ErrorCode::kTruncatedFile, path.string() + ": missing .flo tag");
  if (std::bit_cast<float>(get_u32(bytes.data(), true)) != kFloMagic) {
    throw Error(ErrorCode::kBadMagic, path.string() + ": not a .flo file");
  }
  if (bytes.size() < 12) throw Error(ErrorCode::kTruncatedFile, path.string() + ": truncated .flo header");
  const auto w = static_cast<std::int32_t>(get_u32(bytes.data() + 4, true));
  const auto h = static_cast<std::int32_t>(get_u32(bytes.data() + 8, true));
  if (w <= 0 || h <= 0 || w > (1 << 16) || h > (1 << 16)) {
    throw Error(ErrorCode::kDimensionMismatch, path.string() + ": implausible .flo size");
  }
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() < 12 + 8 * n) throw Error(ErrorCode::kTruncatedFile, path.string() + ": truncated .flo payload");
  FlowField flow(w, h);
  const char* p = bytes.data() + 12;
  for (std::size_t i = 0; i < n; ++i, p += 8) {
    const float u = std::bit_cast<float>(get_u32(p, true));
    const float v = std::bit_cast<float>(get_u32(p + 4, true));
    if (std::isnan(u) || std::isnan(v) || std::abs(u) > kFloInvalidAbove || std::abs(v) > kFloInvalidAbove) continue;
    flow.set(i, FlowVector{u, v});
  }
  return flow;
}

}  // namespace

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  std::string bytes;
  bytes.reserve(12 + 8 * flow.size());
  put_u32_le(bytes, std::bit_cast<std::uint32_t>(kFloMagic));
  put_u32_le(bytes, static_cast<std::uint32_t>(flow.width()));
  put_u32_le(bytes, static_cast<std::uint32_t>(flow.height()));
  for (std::size_t i = 0; i < flow.size(); ++i) {
    const FlowVector f = flow.valid(i) ? flow[i] : FlowVector{kFloUnknown, kFloUnknown};
    put_u32_le(bytes, std::bit_cast<std::uint32_t>(f.u));
    put_u32_le(bytes, std::bit_cast<std::uint32_t>(f.v));
  }
  dump(path, bytes);
}

FlowField read_flo(const std::filesystem::path& path) { return decode_flo(slurp(path), path); }

FlowField read_flo(const std::filesystem::path& path, int width, int height) {
  auto flow = read_flo(path);
  if (flow.width() != width || flow.height() != height) {
    throw Error(ErrorCode::kDimensionMismatch,
                path.string() + ": flow is " + std::to_string(flow.width()) + "x" +
                    std::to_string(flow.height()) + ", expected " + std::to_string(width) + "x" +
                    std::to_string(height));
  }
  return flow;
}

void write_pfm(const std::filesystem::path& path, const ScalarMap& map) {
  std::string bytes = "Pf\n" + std::to_string(map.width()) + " " + std::to_string(map.height()) + "\n-1.0\n";
  bytes.reserve(bytes.size() + 4 * map.size());
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (int v = map.height() - 1; v >= 0; --v) {
    for (int u = 0; u < map.width(); ++u) {
      const float x = map.valid(u, v) ? map(u, v) : nan;
      put_u32_le(bytes, std::bit_cast<std::uint32_t>(x));
    }
  }
  dump(path, bytes);
}

ScalarMap read_pfm(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  std::size_t pos = 0;
  auto malformed = [&](const char* what) {
    return Error(ErrorCode::kMalformedHeader, path.string() + ": " + what);
  };
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw malformed("truncated PFM header");
    return bytes.substr(start, pos - start);
  };
  if (token() != "Pf") throw malformed("expected grayscale 'Pf' PFM");
  int w = 0, h = 0;
  double scale = 0.0;
  try {
    std::size_t used = 0;
    const auto sw = token();
    w = std::stoi(sw, &used);
    if (used != sw.size()) throw malformed("bad width");
    const auto sh = token();
    h = std::stoi(sh, &used);
    if (used != sh.size()) throw malformed("bad height");
    const auto ss = token();
    scale = std::stod(ss, &used);
    if (used != ss.size()) throw malformed("bad scale");
  } catch (const std::logic_error&) {
    throw malformed("unparsable PFM header");
  }
  if (w <= 0 || h <= 0 || scale == 0.0) throw malformed("bad PFM dimensions or scale");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw malformed("missing separator after PFM header");
  }
  ++pos;
  const bool little = scale < 0.0;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() - pos < 4 * n) throw Error(ErrorCode::kTruncatedFile, path.string() + ": truncated PFM payload");
  ScalarMap map(w, h);
  const char* p = bytes.data() + pos;
  for (int v = h - 1; v >= 0; --v) {
    for (int u = 0; u < w; ++u, p += 4) {
      const float x = std::bit_cast<float>(get_u32(p, little));
      if (!std::isnan(x)) map.set(map.index(u, v), x);
    }
  }
  return map;
}

void write_depth_png16(const std::filesystem::path& path, const DepthMap& depth) {
  cv::Mat image(depth.height(), depth.width(), CV_16UC1, cv::Scalar(0));
  for (int v = 0; v < depth.height(); ++v) {
    auto* row = image.ptr<std::uint16_t>(v);
    for (int u = 0; u < depth.width(); ++u) {
      if (!depth.valid(u, v)) continue;
      const double d = depth(u, v);
      const double q = std::round(d * 256.0);
      if (!(q <= 65535.0) || !std::isfinite(d)) {
        throw Error(ErrorCode::kOverflowDepth, path.string() + ": depth " + std::to_string(d) + " m does not fit PNG16");
      }
      row[u] = static_cast<std::uint16_t>(std::max(q, 0.0));
    }
  }
  if (!cv::imwrite(path.string(), image)) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

DepthMap read_depth_png16(const std::filesystem::path& path) {
  const cv::Mat image = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (image.empty()) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  if (image.type() != CV_16UC1) throw Error(ErrorCode::kMalformedHeader, path.string() + ": expected 16-bit grayscale");
  DepthMap depth(image.cols, image.rows);
  for (int v = 0; v < image.rows; ++v) {
    const auto* row = image.ptr<std::uint16_t>(v);
    for (int u = 0; u < image.cols; ++u) {
      if (row[u] != 0) depth.set(depth.index(u, v), static_cast<float>(row[u] / 256.0));
    }
  }
  return depth;
}

LoadedImage read_image(const std::filesystem::path& path) {
  cv::Mat image = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (image.empty()) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  if (image.depth() == CV_16U) image.convertTo(image, CV_8U, 1.0 / 257.0);
  if (image.depth() != CV_8U) throw Error(ErrorCode::kMalformedHeader, path.string() + ": unsupported pixel type");
  LoadedImage out;
  out.rgb = RgbImage(image.cols, image.rows, Rgb8{}, true);
  const int channels = image.channels();
  if (channels == 1) {
    out.single_channel = true;
    out.gray = PixelGridMap<std::uint8_t>(image.cols, image.rows, 0, true);
  } else if (channels != 3 && channels != 4) {
    throw Error(ErrorCode::kMalformedHeader, path.string() + ": unsupported channel count");
  }
  for (int v = 0; v < image.rows; ++v) {
    const auto* row = image.ptr<std::uint8_t>(v);
    for (int u = 0; u < image.cols; ++u) {
      const std::size_t i = out.rgb.index(u, v);
      if (channels == 1) {
        out.gray[i] = row[u];
        out.rgb[i] = Rgb8{row[u], row[u], row[u]};
      } else {
        const auto* px = row + channels * u;
        out.rgb[i] = Rgb8{px[2], px[1], px[0]};
      }
    }
  }
  return out;
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& image) {
  cv::Mat mat(image.height(), image.width(), CV_8UC3);
  for (int v = 0; v < image.height(); ++v) {
    auto* row = mat.ptr<std::uint8_t>(v);
    for (int u = 0; u < image.width(); ++u) {
      const auto& px = image(u, v);
      row[3 * u] = px.b;
      row[3 * u + 1] = px.g;
      row[3 * u + 2] = px.r;
    }
  }
  if (!cv::imwrite(path.string(), mat)) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

void append_points(std::vector<PlyPoint>& cloud, const DepthMap& depth, const RgbImage& image,
                   const Intrinsics& k, const Pose& world_from_camera) {
  require_same_shape(depth, image, "depth vs image");
  for (int v = 0; v < depth.height(); ++v) {
    for (int u = 0; u < depth.width(); ++u) {
      if (!depth.valid(u, v)) continue;
      const double z = depth(u, v);
      const Vec3 p(z * (u - k.cx) / k.fx, z * (v - k.cy) / k.fy, z);
      cloud.push_back({world_from_camera.transform(p), image(u, v)});
    }
  }
}

void write_ply(const std::filesystem::path& path, const std::vector<PlyPoint>& cloud) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  char line[160];
  for (const auto& p : cloud) {
    std::snprintf(line, sizeof(line), "%.9g %.9g %.9g %u %u %u\n", p.position.x(), p.position.y(),
                  p.position.z(), unsigned{p.color.r}, unsigned{p.color.g}, unsigned{p.color.b});
    out << line;
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

void export_pointcloud(const std::filesystem::path& path, const DepthMap& depth, const RgbImage& image,
                       const Intrinsics& k, const Pose& world_from_camera) {
  std::vector<PlyPoint> cloud;
  append_points(cloud, depth, image, k, world_from_camera);
  write_ply(path, cloud);
}

std::vector<Pose> read_kitti_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<Pose> poses;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    double m[12];
    for (double& x : m) {
      if (!(fields >> x)) {
        throw Error(ErrorCode::kMalformedHeader, path.string() + ":" + std::to_string(number) + ": expected 12 numbers");
      }
    }
    Mat3 r;
    r << m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10];
    poses.push_back(Pose::from_rotation_translation(r, Vec3(m[3], m[7], m[11])));
  }
  return poses;
}

void write_kitti_poses(const std::filesystem::path& path, const std::vector<Pose>& world_from_camera) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  char buf[64];
  for (const auto& pose : world_from_camera) {
    const Mat3& r = pose.rotation();
    const Vec3 t = pose.translation();
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 4; ++col) {
        std::snprintf(buf, sizeof(buf), "%.17g", col < 3 ? r(row, col) : t(row));
        out << buf << (row == 2 && col == 3 ? '\n' : ' ');
      }
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

std::vector<Pose> relative_from_absolute(const std::vector<Pose>& world_from_camera) {
  std::vector<Pose> out;
  if (world_from_camera.empty()) return out;
  out.push_back(Pose::identity());
  for (std::size_t i = 1; i < world_from_camera.size(); ++i) {
    out.push_back(world_from_camera[i - 1].then(world_from_camera[i].inverse()));
  }
  return out;
}

std::vector<Pose> absolute_from_relative(const std::vector<Pose>& relative) {
  std::vector<Pose> out;
  if (relative.empty()) return out;
  out.push_back(Pose::identity());
  for (std::size_t i = 1; i < relative.size(); ++i) {
    out.push_back(relative[i].inverse().then(out.back()));
  }
  return out;
}

Manifest read_manifest(const std::filesystem::path& path) {
  using detail::StrictObject;
  const auto json = detail::parse_json_file(path);
  Manifest m;
  m.root = path.parent_path();
  StrictObject top(json, "manifest");
  const auto* intr = top.child("intrinsics");
  if (!intr) top.fail("missing 'intrinsics'");
  StrictObject k(*intr, "manifest.intrinsics");
  k.read("fx", m.intrinsics.fx);
  k.read("fy", m.intrinsics.fy);
  k.read("cx", m.intrinsics.cx);
  k.read("cy", m.intrinsics.cy);
  k.read("width", m.intrinsics.width);
  k.read("height", m.intrinsics.height);
  k.finish();
  m.intrinsics.validate();

  const auto* frames = top.child("frames");
  if (!frames || !frames->is_array()) top.fail("'frames' must be an array");
  for (const auto& f : *frames) {
    StrictObject o(f, "manifest.frames[]");
    FrameEntry e;
    o.read("timestamp", e.timestamp);
    o.read("image", e.image);
    o.read("inverse_depth", e.inverse_depth);
    if (o.has("flow")) {
      std::string flow;
      o.read("flow", flow);
      e.flow = flow;
    } else {
      o.child("flow");
    }
    o.finish();
    if (e.image.empty() || e.inverse_depth.empty()) o.fail("frames need 'image' and 'inverse_depth'");
    m.frames.push_back(std::move(e));
  }
  if (const auto* odo = top.child("odometry")) {
    if (!odo->is_array()) top.fail("'odometry' must be an array");
    for (const auto& r : *odo) {
      StrictObject o(r, "manifest.odometry[]");
      OdometryEntry e;
      o.read("timestamp", e.timestamp);
      o.read("baseline", e.baseline);
      o.finish();
      m.odometry.push_back(e);
    }
  }
  if (const auto* gt = top.child("gt")) {
    StrictObject o(*gt, "manifest.gt");
    GroundTruth g;
    o.read("depth", g.depth);
    if (o.has("poses")) {
      std::string poses;
      o.read("poses", poses);
      g.poses = poses;
    } else {
      o.child("poses");
    }
    if (o.has("scale")) {
      double s = 0.0;
      o.read("scale", s);
      g.scale = s;
    } else {
      o.child("scale");
    }
    o.finish();
    m.gt = std::move(g);
  }
  top.finish();
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  detail::Json j;
  const auto& k = m.intrinsics;
  j["intrinsics"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
  j["frames"] = detail::Json::array();
  for (const auto& f : m.frames) {
    detail::Json e = {{"timestamp", f.timestamp}, {"image", f.image}, {"inverse_depth", f.inverse_depth}};
    if (f.flow) e["flow"] = *f.flow;
    j["frames"].push_back(e);
  }
  j["odometry"] = detail::Json::array();
  for (const auto& o : m.odometry) j["odometry"].push_back({{"timestamp", o.timestamp}, {"baseline", o.baseline}});
  if (m.gt) {
    detail::Json g;
    g["depth"] = m.gt->depth;
    if (m.gt->poses) g["poses"] = *m.gt->poses;
    if (m.gt->scale) g["scale"] = *m.gt->scale;
    j["gt"] = g;
  }
  detail::write_json_file(path, j);
}

OdometryMatch associate_odometry(const std::vector<OdometryEntry>& odometry, double timestamp) {
  OdometryMatch best;
  for (const auto& o : odometry) {
    const double r = std::abs(o.timestamp - timestamp);
    if (!best.found || r < best.residual) best = OdometryMatch{o.baseline, r, true};
  }
  return best;
}

}  // namespace scalefuse
