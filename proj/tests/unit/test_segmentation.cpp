#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "scalefuse/segmentation.hpp"

using namespace scalefuse;

namespace {

FeatureImage random_features(int w, int h, std::uint64_t seed, int levels) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> q(0, levels - 1);
  FeatureImage f(w, h, Feature4{}, true);
  // Blocky structure plus per-pixel jitter from a few quantized levels.
  const int bu = 1 + static_cast<int>(seed % 5), bv = 1 + static_cast<int>((seed / 5) % 5);
  std::vector<Feature4> base(static_cast<std::size_t>(w * h));
  for (auto& b : base) {
    for (auto& c : b) c = 100.0f * q(rng) / levels;
  }
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      auto value = base[static_cast<std::size_t>((v / bv) * w + u / bu)];
      for (auto& c : value) c += 5.0f * q(rng) / levels;
      f(u, v) = value;
    }
  }
  return f;
}

std::vector<std::int32_t> flat(const PixelGridMap<std::int32_t>& m) { return {m.values().begin(), m.values().end()}; }

}  // namespace

TEST(Lab, ReferenceColors) {
  const auto white = rgb_to_lab(1, 1, 1);
  EXPECT_NEAR(white.l, 100.0, 1e-3);
  EXPECT_NEAR(white.a, 0.0, 1e-3);
  EXPECT_NEAR(white.b, 0.0, 1e-3);
  const auto black = rgb_to_lab(0, 0, 0);
  EXPECT_NEAR(black.l, 0.0, 1e-4);
  const auto red = rgb_to_lab(1, 0, 0);
  EXPECT_NEAR(red.l, 53.24, 0.01);
  EXPECT_NEAR(red.a, 80.09, 0.01);
  EXPECT_NEAR(red.b, 67.20, 0.01);
  const auto mid = rgb_to_lab(0.5, 0.5, 0.5);
  EXPECT_NEAR(mid.l, 53.39, 0.01);
}

TEST(Lab, ImageAndGrayAgree) {
  RgbImage rgb(16, 1, Rgb8{}, true);
  PixelGridMap<std::uint8_t> gray(16, 1, 0, true);
  for (int i = 0; i < 16; ++i) {
    const auto g = static_cast<std::uint8_t>(i * 17);
    rgb[static_cast<std::size_t>(i)] = {g, g, g};
    gray[static_cast<std::size_t>(i)] = g;
  }
  const auto a = lab_convert(rgb);
  const auto b = lab_from_gray(gray);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_NEAR(a[i].l, b[i].l, 1e-3);
    EXPECT_NEAR(a[i].a, 0.0, 1e-3);
    const auto ref = rgb_to_lab(i * 17 / 255.0, i * 17 / 255.0, i * 17 / 255.0);
    EXPECT_FLOAT_EQ(a[i].l, ref.l);
  }
}

TEST(Features, DepthChannelRescaled) {
  LabImage lab(3, 1, LabColor{50, 1, 2}, true);
  RelativeDepthMap d(3, 1);
  d.set(0, 2.0f);
  d.set(1, 4.0f);
  const auto f = build_features(lab, d, 0.5);
  EXPECT_FLOAT_EQ(f[0][3], 0.0f);
  EXPECT_FLOAT_EQ(f[1][3], 50.0f);
  EXPECT_FLOAT_EQ(f[2][3], 50.0f);  // invalid -> far
  EXPECT_FLOAT_EQ(f[0][0], 50.0f);
}

TEST(Smoothing, PreservesConstantsAndMass) {
  const FeatureImage c(9, 7, Feature4{1, 2, 3, 4}, true);
  const auto s = smooth_features(c, 1.3);
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (int ch = 0; ch < 4; ++ch) EXPECT_NEAR(s[i][static_cast<std::size_t>(ch)], ch + 1.0f, 1e-5);
  }
  EXPECT_EQ(smooth_features(c, 0.0), c);
}

TEST(Smoothing, MatchesDirectConvolution) {
  const auto f = random_features(11, 9, 3, 50);
  const double sigma = 0.8;
  const auto s = smooth_features(f, sigma);
  const int r = static_cast<int>(std::ceil(4 * sigma));
  std::vector<double> k(static_cast<std::size_t>(r + 1));
  double total = 0;
  for (int i = 0; i <= r; ++i) {
    k[static_cast<std::size_t>(i)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += (i ? 2 : 1) * k[static_cast<std::size_t>(i)];
  }
  for (int v = 0; v < 9; ++v) {
    for (int u = 0; u < 11; ++u) {
      for (std::size_t c = 0; c < 4; ++c) {
        double acc = 0;
        for (int dv = -r; dv <= r; ++dv) {
          for (int du = -r; du <= r; ++du) {
            const int uu = std::clamp(u + du, 0, 10), vv = std::clamp(v + dv, 0, 8);
            acc += k[static_cast<std::size_t>(std::abs(du))] * k[static_cast<std::size_t>(std::abs(dv))] * f(uu, vv)[c];
          }
        }
        EXPECT_NEAR(s(u, v)[c], acc / (total * total), 1e-3);
      }
    }
  }
}

TEST(Felzenszwalb, MatchesBruteForceReference) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    SegmentationParams p;
    p.k = 20.0 + 15.0 * static_cast<double>(seed % 7);
    p.min_size = 1 + static_cast<int>(seed % 9);
    p.sigma = (seed % 3) * 0.5;
    const auto f = random_features(16, 16, seed, seed % 2 ? 4 : 64);
    const auto labels = felzenszwalb_segment(f, p);
    const auto ref = oracle::brute_force_segment(smooth_features(f, p.sigma), p.k, p.min_size);
    EXPECT_TRUE(oracle::same_partition(flat(labels.labels), ref)) << "seed " << seed;
  }
}

TEST(Felzenszwalb, LabelsAreCompactAndSized) {
  const auto f = random_features(24, 20, 9, 8);
  SegmentationParams p;
  p.k = 50.0;
  p.min_size = 10;
  const auto s = felzenszwalb_segment(f, p);
  ASSERT_EQ(static_cast<int>(s.sizes.size()), s.count);
  std::vector<int> counted(static_cast<std::size_t>(s.count), 0);
  int next = 0;
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    const int l = s.labels[i];
    ASSERT_GE(l, 0);
    ASSERT_LT(l, s.count);
    if (l == next) ++next;
    EXPECT_LT(l, next);  // first-appearance order
    ++counted[static_cast<std::size_t>(l)];
  }
  EXPECT_EQ(counted, s.sizes);
  for (int size : s.sizes) EXPECT_GE(size, std::min(p.min_size, 24 * 20));
}

TEST(Felzenszwalb, UniformImageIsOneSegment) {
  const FeatureImage f(10, 10, Feature4{5, 5, 5, 5}, true);
  const auto s = felzenszwalb_segment(f, SegmentationParams{});
  EXPECT_EQ(s.count, 1);
  EXPECT_EQ(s.sizes[0], 100);
}

TEST(Felzenszwalb, SeparatesStrongEdges) {
  FeatureImage f(20, 10, Feature4{0, 0, 0, 0}, true);
  for (int v = 0; v < 10; ++v) {
    for (int u = 10; u < 20; ++u) f(u, v) = Feature4{100, 0, 0, 0};
  }
  SegmentationParams p;
  p.k = 10;
  p.min_size = 5;
  p.sigma = 0;
  const auto s = felzenszwalb_segment(f, p);
  EXPECT_EQ(s.count, 2);
  EXPECT_NE(s.labels(0, 0), s.labels(19, 9));
  EXPECT_EQ(s.labels(0, 0), s.labels(9, 9));
}

TEST(Felzenszwalb, RejectsBadParams) {
  SegmentationParams p;
  p.k = 0;
  EXPECT_THROW(felzenszwalb_segment(FeatureImage(4, 4, Feature4{}, true), p), Error);
}

namespace {

SegmentLabels two_segments(int w, int h) {
  SegmentLabels s;
  s.labels = PixelGridMap<std::int32_t>(w, h, 0, true);
  for (int v = 0; v < h; ++v) {
    for (int u = w / 2; u < w; ++u) s.labels(u, v) = 1;
  }
  s.count = 2;
  s.sizes = {w / 2 * h, (w - w / 2) * h};
  return s;
}

}  // namespace

TEST(Consolidation, AcceptedSegmentsTakeTheirMedian) {
  const auto labels = two_segments(20, 10);
  ScalarMap s(20, 10), v(20, 10, 0.01f, true);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 20; ++x) s.set(s.index(x, y), x < 10 ? 2.0f + 0.01f * (x % 3) : 5.0f);
  }
  ConsolidationConfig cfg;
  cfg.min_evidence = 20;
  const auto c = consolidate_scales(labels, s, v, cfg);
  EXPECT_EQ(c.accepted, 2);
  EXPECT_EQ(c.s_seg(0, 0), 2.0f + 0.01f);
  EXPECT_EQ(c.s_seg(15, 5), 5.0f);
  EXPECT_EQ(c.segments[0].evidence, 100);
}

TEST(Consolidation, ThinEvidenceFallsBackToGlobal) {
  const auto labels = two_segments(20, 10);
  ScalarMap s(20, 10), v(20, 10, 0.01f, true);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 10; ++x) s.set(s.index(x, y), 2.0f);
  }
  s.set(s.index(15, 5), 9.0f);  // one pixel of evidence on the right
  ConsolidationConfig cfg;
  cfg.min_evidence = 20;
  const auto c = consolidate_scales(labels, s, v, cfg);
  EXPECT_EQ(c.accepted, 1);
  ASSERT_TRUE(c.global_scale);
  EXPECT_EQ(*c.global_scale, 2.0f);
  EXPECT_EQ(c.s_seg(15, 5), 2.0f);
  EXPECT_EQ(c.s_seg.valid_count(), 200u);
}

TEST(Consolidation, HighFitErrorRejected) {
  const auto labels = two_segments(20, 10);
  ScalarMap s(20, 10), v(20, 10, 0.01f, true);
  const float cycle[3] = {1.0f, 2.0f, 4.0f};
  for (std::size_t i = 0; i < s.size(); ++i) s.set(i, cycle[i % 3]);
  const auto c = consolidate_scales(labels, s, v, ConsolidationConfig{});
  EXPECT_EQ(c.accepted, 0);
  EXPECT_GT(c.segments[0].fit_error, 0.2);
}

TEST(Consolidation, EvidenceNeedsVariance) {
  const auto labels = two_segments(20, 10);
  const ScalarMap s(20, 10, 2.0f, true);
  ScalarMap v(20, 10);
  const auto c = consolidate_scales(labels, s, v, ConsolidationConfig{});
  EXPECT_EQ(c.segments[0].evidence, 0);
  EXPECT_FALSE(c.global_scale);
  EXPECT_EQ(c.s_seg.valid_count(), 0u);
}

TEST(Consolidation, PreviousGlobalWhenEmpty) {
  const auto labels = two_segments(20, 10);
  const auto c = consolidate_scales(labels, ScalarMap(20, 10), ScalarMap(20, 10), ConsolidationConfig{}, 3.5f);
  EXPECT_TRUE(c.global_from_previous);
  EXPECT_EQ(c.s_seg(3, 3), 3.5f);
  const auto g = global_fill(ScalarMap(20, 10), 1.5f);
  EXPECT_TRUE(g.global_from_previous);
  EXPECT_EQ(g.s_seg(0, 0), 1.5f);
}

TEST(GlobalFill, KeepsPixelsAndFillsGaps) {
  ScalarMap s(4, 1);
  s.set(0, 1.0f);
  s.set(1, 2.0f);
  s.set(2, 7.0f);
  const auto g = global_fill(s, std::nullopt);
  EXPECT_EQ(*g.global_scale, 2.0f);
  EXPECT_EQ(g.s_seg[0], 1.0f);
  EXPECT_EQ(g.s_seg[3], 2.0f);
}

TEST(FinalDepth, ProductWhereBothValid) {
  ScalarMap s(3, 1, 2.0f, true);
  RelativeDepthMap d(3, 1);
  d.set(0, 1.5f);
  s.invalidate(1);
  d.set(1, 1.0f);
  const auto z = final_depth(s, d);
  EXPECT_EQ(z[0], 3.0f);
  EXPECT_FALSE(z.valid(1));
  EXPECT_FALSE(z.valid(2));
}
