#include <benchmark/benchmark.h>

#include "scalefuse/pipeline.hpp"

using namespace scalefuse;

namespace {

struct Fixture {
  OracleSequence seq;
  std::vector<FrameInput> inputs;
  MotionHypothesis hypothesis;
  FusedFlow fused;
  ScaleObservation observation;
  FrameOutput previous;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture f;
    SceneOptions o;
    o.width = 1241;
    o.height = 376;
    o.frames = 3;
    o.noise.flow_sigma_px = 0.3;
    o.noise.baseline_rel_sigma = 0.05;
    f.seq = render_sequence(make_scene(o));
    for (std::size_t i = 0; i < f.seq.frames.size(); ++i) {
      FrameInput in;
      in.lab = lab_convert(f.seq.frames[i].image);
      in.d_rel = f.seq.frames[i].d_rel;
      if (i > 0) {
        in.flow = f.seq.flows[i];
        in.baseline = f.seq.baselines_measured[i];
      }
      f.inputs.push_back(std::move(in));
    }
    const auto& k = f.seq.spec.k;
    const auto& in = f.inputs[2];
    const RansacConfig cfg;
    f.hypothesis = ransac_motion(stratified_sample(*in.flow, in.d_rel, k, cfg, 1), *in.baseline, k, cfg, 1);
    f.fused = fuse_flow(*in.flow, in.d_rel, k, f.hypothesis, cfg);
    const auto tri = build_observation(f.fused, f.hypothesis.pose(), k, in.d_rel, TriangulationConfig{});
    f.observation = make_scale_observation(tri, in.d_rel, k, FusionConfig{});
    SequenceProcessor p(k, PipelineConfig{});
    p.process(f.inputs[0]);
    f.previous = *p.process(f.inputs[1]);
    return f;
  }();
  return f;
}

void BM_LabConvert(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(lab_convert(f.seq.frames[2].image));
}

void BM_Segmentation(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(segment_frame(f.inputs[2].lab, f.inputs[2].d_rel, SegmentationParams{}));
}

void BM_Motion(benchmark::State& state) {
  const auto& f = fixture();
  const auto& in = f.inputs[2];
  const RansacConfig cfg;
  for (auto _ : state) {
    const auto samples = stratified_sample(*in.flow, in.d_rel, f.seq.spec.k, cfg, 1);
    benchmark::DoNotOptimize(ransac_motion(samples, *in.baseline, f.seq.spec.k, cfg, 1));
  }
}

void BM_Triangulation(benchmark::State& state) {
  const auto& f = fixture();
  const auto& in = f.inputs[2];
  for (auto _ : state) {
    const auto fused = fuse_flow(*in.flow, in.d_rel, f.seq.spec.k, f.hypothesis, RansacConfig{});
    benchmark::DoNotOptimize(build_observation(fused, f.hypothesis.pose(), f.seq.spec.k, in.d_rel, TriangulationConfig{}));
  }
}

void BM_Propagation(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(warp_posterior(f.previous.depth, f.previous.variance, f.hypothesis.pose(), f.seq.spec.k,
                                            f.inputs[2].d_rel));
  }
}

void BM_Fusion(benchmark::State& state) {
  const auto& f = fixture();
  const auto prior = warp_posterior(f.previous.depth, f.previous.variance, f.hypothesis.pose(), f.seq.spec.k,
                                    f.inputs[2].d_rel);
  ScaleState prev;
  prev.frame_index = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(fuse_frame(prev, &prior, &f.observation, f.inputs[2].d_rel, f.seq.spec.k, FusionConfig{}));
  }
}

void BM_Consolidation(benchmark::State& state) {
  const auto& f = fixture();
  const auto labels = segment_frame(f.inputs[2].lab, f.inputs[2].d_rel, SegmentationParams{});
  const auto fused = fuse_frame(ScaleState{}, nullptr, &f.observation, f.inputs[2].d_rel, f.seq.spec.k, FusionConfig{});
  for (auto _ : state) {
    benchmark::DoNotOptimize(consolidate_scales(labels, fused.state.s, fused.state.v, ConsolidationConfig{}));
  }
}

void BM_ProcessFrame(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) {
    state.PauseTiming();
    SequenceProcessor p(f.seq.spec.k, PipelineConfig{});
    p.process(f.inputs[0]);
    p.process(f.inputs[1]);
    state.ResumeTiming();
    benchmark::DoNotOptimize(p.process(f.inputs[2]));
  }
}

}  // namespace

BENCHMARK(BM_LabConvert)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Segmentation)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Motion)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Triangulation)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Propagation)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Fusion)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Consolidation)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ProcessFrame)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
