#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "scalefuse/fusion.hpp"
#include "scalefuse/motion.hpp"
#include "scalefuse/segmentation.hpp"
#include "scalefuse/synthetic.hpp"
#include "scalefuse/triangulation.hpp"

namespace scalefuse {

enum class DepthFormat { kPfm, kPng16 };

DepthFormat parse_depth_format(const std::string& name);
std::string to_string(DepthFormat format);

struct OutputConfig {
  DepthFormat depth_format = DepthFormat::kPfm;
  bool depth = true;
  bool pointcloud = false;
  bool metrics = true;
};

struct PipelineConfig {
  RansacConfig ransac;
  TriangulationConfig triangulation;
  FusionConfig fusion;
  SegmentationParams segmentation;
  ConsolidationConfig consolidation;
  OutputConfig output;
  double near_max = 20.0;
  double far_max = 80.0;
  bool enable_fusion = true;
  bool enable_segmentation = true;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: runtime default

  void validate() const;
};

/// Strict JSON: every key optional, unknown keys rejected.
PipelineConfig parse_pipeline_config(const std::string& text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
std::string dump_pipeline_config(const PipelineConfig& config);

SceneOptions parse_scene_options(const std::string& text);
SceneOptions load_scene_options(const std::filesystem::path& path);
std::string dump_scene_options(const SceneOptions& options);

}  // namespace scalefuse
