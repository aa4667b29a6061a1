#include "scalefuse/segmentation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "scalefuse/stats.hpp"

namespace scalefuse {

namespace {

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

// Cube root for t in (0, ~1.1]: bit-level seed, then two Halley steps.
double fast_cbrt(double t) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(t);
  bits = bits / 3 + 0x2A9F7893782DA1CEull;
  double y = std::bit_cast<double>(bits);
  for (int i = 0; i < 2; ++i) {
    const double y3 = y * y * y;
    y *= (y3 + 2.0 * t) / (2.0 * y3 + t);
  }
  return y;
}

double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? fast_cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

constexpr double kWhiteX = 0.95047;
constexpr double kWhiteY = 1.0;
constexpr double kWhiteZ = 1.08883;

LabColor linear_to_lab(double r, double g, double b) {
  const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  const double fx = lab_f(x / kWhiteX);
  const double fy = lab_f(y / kWhiteY);
  const double fz = lab_f(z / kWhiteZ);
  return {static_cast<float>(116.0 * fy - 16.0), static_cast<float>(500.0 * (fx - fy)),
          static_cast<float>(200.0 * (fy - fz))};
}

const std::array<double, 256>& linear_table() {
  static const auto table = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) t[static_cast<std::size_t>(i)] = srgb_to_linear(i / 255.0);
    return t;
  }();
  return table;
}

struct Node {
  std::int32_t parent;
  std::int32_t size;
  float threshold;
};

struct DisjointSets {
  std::vector<Node> nodes;

  DisjointSets(std::size_t n, float threshold) : nodes(n) {
    for (std::size_t i = 0; i < n; ++i) nodes[i] = {static_cast<std::int32_t>(i), 1, threshold};
  }
  std::int32_t find(std::int32_t x) {
    while (nodes[static_cast<std::size_t>(x)].parent != x) {
      auto& node = nodes[static_cast<std::size_t>(x)];
      node.parent = nodes[static_cast<std::size_t>(node.parent)].parent;
      x = node.parent;
    }
    return x;
  }
  Node& operator[](std::int32_t x) { return nodes[static_cast<std::size_t>(x)]; }
  // Union by size; ties keep `a` as the root.
  std::int32_t join(std::int32_t a, std::int32_t b) {
    if (nodes[static_cast<std::size_t>(a)].size < nodes[static_cast<std::size_t>(b)].size) std::swap(a, b);
    nodes[static_cast<std::size_t>(b)].parent = a;
    nodes[static_cast<std::size_t>(a)].size += nodes[static_cast<std::size_t>(b)].size;
    return a;
  }
};

// Key = (weight bits << 32) | edge id, edge id = 2 * pixel + (0 right, 1 down).
// Non-negative floats order like their bit patterns; the ids are generated in
// increasing order, so a stable LSD radix sort over the weight bits alone
// breaks ties by edge id.
void sort_edge_keys(std::vector<std::uint64_t>& keys) {
  constexpr int kDigits = 3;
  constexpr int kShifts[kDigits] = {32, 43, 54};
  constexpr std::uint32_t kBuckets = 1u << 11;
  std::vector<std::uint32_t> count(kDigits * kBuckets, 0);
  for (const auto key : keys) {
    for (int d = 0; d < kDigits; ++d) ++count[d * kBuckets + ((key >> kShifts[d]) & (kBuckets - 1))];
  }
  std::vector<std::uint64_t> buffer(keys.size());
  for (int d = 0; d < kDigits; ++d) {
    std::uint32_t* c = count.data() + d * kBuckets;
    if (keys.empty() || c[(keys.front() >> kShifts[d]) & (kBuckets - 1)] == keys.size()) continue;
    std::uint32_t sum = 0;
    for (std::uint32_t j = 0; j < kBuckets; ++j) {
      const auto c0 = c[j];
      c[j] = sum;
      sum += c0;
    }
    for (const auto key : keys) buffer[c[(key >> kShifts[d]) & (kBuckets - 1)]++] = key;
    keys.swap(buffer);
  }
}

float feature_distance(const Feature4& p, const Feature4& q) {
  const float d0 = p[0] - q[0];
  const float d1 = p[1] - q[1];
  const float d2 = p[2] - q[2];
  const float d3 = p[3] - q[3];
  return std::sqrt(d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3);
}

}  // namespace

LabColor rgb_to_lab(double r, double g, double b) {
  return linear_to_lab(srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b));
}

LabImage lab_convert(const RgbImage& rgb) {
  const auto& lin = linear_table();
  LabImage out(rgb.width(), rgb.height(), LabColor{}, true);
  const auto n = static_cast<std::ptrdiff_t>(rgb.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto px = rgb[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = linear_to_lab(lin[px.r], lin[px.g], lin[px.b]);
  }
  return out;
}

LabImage lab_from_gray(const PixelGridMap<std::uint8_t>& gray) {
  const auto& lin = linear_table();
  std::array<float, 256> lightness{};
  for (int i = 0; i < 256; ++i) {
    const double y = lin[static_cast<std::size_t>(i)];
    lightness[static_cast<std::size_t>(i)] = static_cast<float>(116.0 * lab_f(y) - 16.0);
  }
  LabImage out(gray.width(), gray.height(), LabColor{}, true);
  for (std::size_t i = 0; i < gray.size(); ++i) out[i] = LabColor{lightness[gray[i]], 0.0f, 0.0f};
  return out;
}

void SegmentationParams::validate() const {
  if (!(k > 0.0)) throw Error(ErrorCode::kConfig, "segmentation: k must be positive");
  if (min_size < 1) throw Error(ErrorCode::kConfig, "segmentation: min_size must be >= 1");
  if (!(sigma >= 0.0)) throw Error(ErrorCode::kConfig, "segmentation: sigma must be >= 0");
  if (!(depth_weight >= 0.0)) throw Error(ErrorCode::kConfig, "segmentation: depth_weight must be >= 0");
}

void ConsolidationConfig::validate() const {
  if (min_evidence < 1) throw Error(ErrorCode::kConfig, "consolidation: min_evidence must be >= 1");
  if (!(evidence_fraction >= 0.0 && evidence_fraction <= 1.0)) {
    throw Error(ErrorCode::kConfig, "consolidation: evidence_fraction must be in [0, 1]");
  }
  if (!(max_fit_error > 0.0)) throw Error(ErrorCode::kConfig, "consolidation: max_fit_error must be positive");
}

FeatureImage build_features(const LabImage& lab, const RelativeDepthMap& d_rel, double depth_weight) {
  require_same_shape(lab, d_rel, "lab image vs relative depth");
  float lo = std::numeric_limits<float>::max();
  float hi = std::numeric_limits<float>::lowest();
  for (std::size_t i = 0; i < d_rel.size(); ++i) {
    if (!d_rel.valid(i)) continue;
    lo = std::min(lo, d_rel[i]);
    hi = std::max(hi, d_rel[i]);
  }
  const double span = hi > lo ? double(hi) - lo : 1.0;
  FeatureImage out(lab.width(), lab.height(), Feature4{}, true);
  for (std::size_t i = 0; i < lab.size(); ++i) {
    const double depth = d_rel.valid(i) ? 100.0 * (d_rel[i] - lo) / span : 100.0;
    out[i] = Feature4{lab[i].l, lab[i].a, lab[i].b, static_cast<float>(depth_weight * depth)};
  }
  return out;
}

FeatureImage smooth_features(const FeatureImage& features, double sigma) {
  if (!(sigma > 0.0)) return features;
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<float> kernel(static_cast<std::size_t>(radius + 1));
  float total = 0.0f;
  for (int i = 0; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i)] = static_cast<float>(std::exp(-0.5 * (i / sigma) * (i / sigma)));
    total += (i == 0 ? 1.0f : 2.0f) * kernel[static_cast<std::size_t>(i)];
  }
  for (auto& v : kernel) v /= total;

  const int w = features.width();
  const int h = features.height();
  const auto row = static_cast<std::size_t>(4 * w);
  const float* kw = kernel.data();
  FeatureImage tmp(w, h, Feature4{}, true);
  FeatureImage out(w, h, Feature4{}, true);
  const float* src = features.values().data()->data();
  float* mid = tmp.values().data()->data();
  float* dst = out.values().data()->data();

#pragma omp parallel
  {
    std::vector<float> padded(static_cast<std::size_t>(4 * (w + 2 * radius)));
#pragma omp for schedule(static)
    for (int v = 0; v < h; ++v) {
      const float* in = src + static_cast<std::size_t>(v) * row;
      for (int u = -radius; u < w + radius; ++u) {
        const int uu = std::clamp(u, 0, w - 1);
        for (int c = 0; c < 4; ++c) padded[static_cast<std::size_t>(4 * (u + radius) + c)] = in[4 * uu + c];
      }
      float* o = mid + static_cast<std::size_t>(v) * row;
      for (std::size_t j = 0; j < row; ++j) o[j] = 0.0f;
      for (int t = -radius; t <= radius; ++t) {
        const float k = kw[std::abs(t)];
        const float* p = padded.data() + 4 * (t + radius);
        for (std::size_t j = 0; j < row; ++j) o[j] += k * p[j];
      }
    }
  }
#pragma omp parallel for schedule(static)
  for (int v = 0; v < h; ++v) {
    float* o = dst + static_cast<std::size_t>(v) * row;
    for (std::size_t j = 0; j < row; ++j) o[j] = 0.0f;
    for (int t = -radius; t <= radius; ++t) {
      const float k = kw[std::abs(t)];
      const float* p = mid + static_cast<std::size_t>(std::clamp(v + t, 0, h - 1)) * row;
      for (std::size_t j = 0; j < row; ++j) o[j] += k * p[j];
    }
  }
  return out;
}

SegmentLabels felzenszwalb_segment(const FeatureImage& input, const SegmentationParams& params) {
  params.validate();
  const FeatureImage features = smooth_features(input, params.sigma);
  const int w = features.width();
  const int h = features.height();
  const std::size_t n = features.size();

  std::vector<std::uint64_t> keys;
  keys.reserve(2 * n);
  auto key = [](float weight, std::size_t id) {
    return (static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(weight)) << 32) | id;
  };
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const std::size_t i = features.index(u, v);
      if (u + 1 < w) keys.push_back(key(feature_distance(features[i], features[i + 1]), 2 * i));
      if (v + 1 < h) {
        keys.push_back(key(feature_distance(features[i], features[i + static_cast<std::size_t>(w)]), 2 * i + 1));
      }
    }
  }
  sort_edge_keys(keys);

  auto endpoints = [w](std::uint64_t k) {
    const auto id = static_cast<std::uint32_t>(k);
    const auto a = static_cast<std::int32_t>(id >> 1);
    return std::pair{a, (id & 1u) ? a + w : a + 1};
  };
  const auto c = static_cast<float>(params.k);
  DisjointSets sets(n, c);
  constexpr std::size_t kAhead = 16;
  for (std::size_t e = 0; e < keys.size(); ++e) {
    if (e + kAhead < keys.size()) {
      const auto [pa, pb] = endpoints(keys[e + kAhead]);
      __builtin_prefetch(&sets[pa]);
      __builtin_prefetch(&sets[pb]);
    }
    const auto k = keys[e];
    const float weight = std::bit_cast<float>(static_cast<std::uint32_t>(k >> 32));
    const auto [ea, eb] = endpoints(k);
    auto a = sets.find(ea);
    auto b = sets.find(eb);
    if (a == b) continue;
    if (weight <= sets[a].threshold && weight <= sets[b].threshold) {
      a = sets.join(a, b);
      sets[a].threshold = weight + c / static_cast<float>(sets[a].size);
    }
  }
  // Sizes only grow, so edges between two pixels already in large
  // components can never pass the size test.
  std::vector<std::uint8_t> small(n);
  for (std::size_t i = 0; i < n; ++i) small[i] = sets[sets.find(static_cast<std::int32_t>(i))].size < params.min_size;
  for (const auto k : keys) {
    const auto [ea, eb] = endpoints(k);
    if (!small[static_cast<std::size_t>(ea)] && !small[static_cast<std::size_t>(eb)]) continue;
    const auto a = sets.find(ea);
    const auto b = sets.find(eb);
    if (a != b && (sets[a].size < params.min_size || sets[b].size < params.min_size)) {
      sets.join(a, b);
    }
  }

  SegmentLabels out;
  out.labels = PixelGridMap<std::int32_t>(w, h, 0, true);
  std::vector<std::int32_t> relabel(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto root = static_cast<std::size_t>(sets.find(static_cast<std::int32_t>(i)));
    if (relabel[root] < 0) {
      relabel[root] = out.count++;
      out.sizes.push_back(0);
    }
    out.labels[i] = relabel[root];
    ++out.sizes[static_cast<std::size_t>(relabel[root])];
  }
  return out;
}

SegmentLabels segment_frame(const LabImage& lab, const RelativeDepthMap& d_rel,
                            const SegmentationParams& params) {
  return felzenszwalb_segment(build_features(lab, d_rel, params.depth_weight), params);
}

Consolidation consolidate_scales(const SegmentLabels& labels, const ScalarMap& s_post,
                                 const ScalarMap& v_post, const ConsolidationConfig& cfg,
                                 std::optional<float> previous_global) {
  require_same_shape(labels.labels, s_post, "labels vs posterior scale");
  require_same_shape(s_post, v_post, "posterior scale vs variance");
  auto usable = [&](std::size_t i) { return s_post.valid(i) && v_post.valid(i); };
  const std::size_t n = s_post.size();
  const auto count = static_cast<std::size_t>(labels.count);

  // Bucket valid scales by segment (counting sort).
  std::vector<std::size_t> offset(count + 1, 0);
  std::vector<float> all;
  all.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!usable(i)) continue;
    ++offset[static_cast<std::size_t>(labels.labels[i]) + 1];
    all.push_back(s_post[i]);
  }
  for (std::size_t l = 0; l < count; ++l) offset[l + 1] += offset[l];
  std::vector<float> bucketed(all.size());
  {
    auto cursor = offset;
    for (std::size_t i = 0; i < n; ++i) {
      if (!usable(i)) continue;
      bucketed[cursor[static_cast<std::size_t>(labels.labels[i])]++] = s_post[i];
    }
  }

  Consolidation out;
  out.segments.resize(count);
  if (!all.empty()) {
    out.global_scale = lower_median(std::move(all));
  } else if (previous_global) {
    out.global_scale = previous_global;
    out.global_from_previous = true;
  }

  for (std::size_t l = 0; l < count; ++l) {
    auto& seg = out.segments[l];
    const auto begin = bucketed.begin() + static_cast<std::ptrdiff_t>(offset[l]);
    const auto end = bucketed.begin() + static_cast<std::ptrdiff_t>(offset[l + 1]);
    seg.evidence = static_cast<int>(end - begin);
    if (seg.evidence == 0) continue;
    std::vector<float> values(begin, end);
    seg.median = lower_median(values);
    std::vector<double> dev(values.begin(), values.end());
    const double mad = median_absolute_deviation(std::move(dev), seg.median);
    seg.fit_error = seg.median > 0.0f ? mad / seg.median : std::numeric_limits<double>::infinity();
    const double needed = std::max<double>(cfg.min_evidence,
                                           cfg.evidence_fraction * labels.sizes[l]);
    seg.accepted = seg.evidence >= needed && seg.fit_error <= cfg.max_fit_error;
    out.accepted += seg.accepted ? 1 : 0;
  }

  out.s_seg = ScalarMap(s_post.width(), s_post.height());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& seg = out.segments[static_cast<std::size_t>(labels.labels[i])];
    if (seg.accepted) {
      out.s_seg.set(i, seg.median);
    } else if (out.global_scale) {
      out.s_seg.set(i, *out.global_scale);
    }
  }
  return out;
}

Consolidation global_fill(const ScalarMap& s_post, std::optional<float> previous_global) {
  Consolidation out;
  std::vector<float> all;
  for (std::size_t i = 0; i < s_post.size(); ++i) {
    if (s_post.valid(i)) all.push_back(s_post[i]);
  }
  if (!all.empty()) {
    out.global_scale = lower_median(std::move(all));
  } else if (previous_global) {
    out.global_scale = previous_global;
    out.global_from_previous = true;
  }
  out.s_seg = ScalarMap(s_post.width(), s_post.height());
  for (std::size_t i = 0; i < s_post.size(); ++i) {
    if (s_post.valid(i)) {
      out.s_seg.set(i, s_post[i]);
    } else if (out.global_scale) {
      out.s_seg.set(i, *out.global_scale);
    }
  }
  return out;
}

DepthMap final_depth(const ScalarMap& s_seg, const RelativeDepthMap& d_rel) {
  require_same_shape(s_seg, d_rel, "segment scale vs relative depth");
  DepthMap out(d_rel.width(), d_rel.height());
  for (std::size_t i = 0; i < d_rel.size(); ++i) {
    if (s_seg.valid(i) && d_rel.valid(i)) out.set(i, s_seg[i] * d_rel[i]);
  }
  return out;
}

}  // namespace scalefuse
