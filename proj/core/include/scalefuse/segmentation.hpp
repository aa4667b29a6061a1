#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "scalefuse/geometry.hpp"

namespace scalefuse {

struct LabColor {
  float l = 0.0f;
  float a = 0.0f;
  float b = 0.0f;
};

using LabImage = PixelGridMap<LabColor>;
using Feature4 = std::array<float, 4>;
using FeatureImage = PixelGridMap<Feature4>;

/// sRGB (D65) to CIE L*a*b*. L in [0, 100].
LabColor rgb_to_lab(double r, double g, double b);  // components in [0, 1]
LabImage lab_convert(const RgbImage& rgb);
/// Single-channel input: L from the gray level, a = b = 0.
LabImage lab_from_gray(const PixelGridMap<std::uint8_t>& gray);

struct SegmentationParams {
  double k = 300.0;
  int min_size = 64;
  double sigma = 0.8;
  double depth_weight = 1.0;

  void validate() const;
};

/// (L, a, b, w_d * depth) with relative depth rescaled to [0, 100]; invalid
/// depth maps to 100 (far).
FeatureImage build_features(const LabImage& lab, const RelativeDepthMap& d_rel,
                            double depth_weight);

/// Separable Gaussian, clamped borders; sigma <= 0 returns the input.
FeatureImage smooth_features(const FeatureImage& features, double sigma);

struct SegmentLabels {
  PixelGridMap<std::int32_t> labels;  // 0 .. count-1, first appearance order
  int count = 0;
  std::vector<int> sizes;
};

/// Graph-based segmentation on the 4-connected grid. Edges carry Euclidean
/// feature distance and are processed in ascending order (ties by edge index);
/// components merge when the edge weight is within Int(C) + k/|C| of both
/// sides, then components smaller than min_size are absorbed along the same
/// edge order. Smoothing with params.sigma happens first.
SegmentLabels felzenszwalb_segment(const FeatureImage& features, const SegmentationParams& params);

SegmentLabels segment_frame(const LabImage& lab, const RelativeDepthMap& d_rel,
                            const SegmentationParams& params);

struct ConsolidationConfig {
  int min_evidence = 50;
  double evidence_fraction = 0.01;
  /// MAD / median of the segment's posterior scales.
  double max_fit_error = 0.2;

  void validate() const;
};

struct SegmentScale {
  float median = 0.0f;
  int evidence = 0;
  double fit_error = 0.0;
  bool accepted = false;
};

struct Consolidation {
  ScalarMap s_seg;
  std::vector<SegmentScale> segments;
  std::optional<float> global_scale;
  bool global_from_previous = false;
  int accepted = 0;
};

/// Accepted segments take their median posterior scale; every other pixel takes
/// the global median. Without any valid posterior the previous global scale is
/// used; without that, the output stays invalid. Evidence counts pixels valid
/// in both S_post and V_post.
Consolidation consolidate_scales(const SegmentLabels& labels, const ScalarMap& s_post,
                                 const ScalarMap& v_post, const ConsolidationConfig& cfg,
                                 std::optional<float> previous_global = std::nullopt);

/// Per-pixel posterior where valid, global median elsewhere (segmentation off).
Consolidation global_fill(const ScalarMap& s_post, std::optional<float> previous_global);

/// Z = S_seg * d_rel; invalid wherever either input is.
DepthMap final_depth(const ScalarMap& s_seg, const RelativeDepthMap& d_rel);

}  // namespace scalefuse
