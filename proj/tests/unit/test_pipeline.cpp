#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "oracles.hpp"
#include "scalefuse/pipeline.hpp"

using namespace scalefuse;

namespace {

const OracleSequence& clean_sequence() {
  static const OracleSequence seq = [] {
    SceneOptions o;
    o.frames = 5;
    o.seed = 11;
    return render_sequence(make_scene(o));
  }();
  return seq;
}

}  // namespace

TEST(Flags, Description) {
  EXPECT_EQ(describe_flags(0), "ok");
  EXPECT_EQ(describe_flags(kFlagPriorOnly | kFlagNoFlow), "prior-only,no-flow");
  EXPECT_EQ(describe_flags(kFlagBootstrap), "bootstrap");
}

TEST(Pipeline, NoiselessSequenceRecoversMetricDepth) {
  const auto& seq = clean_sequence();
  const auto outs = run_sequence(oracle::oracle_inputs(seq), seq.spec.k, PipelineConfig{});
  ASSERT_EQ(outs.size(), 4u);
  EXPECT_TRUE(outs[0].diagnostics.flags & kFlagBootstrap);
  for (std::size_t j = 0; j < outs.size(); ++j) {
    const auto& d = outs[j].diagnostics;
    EXPECT_EQ(d.index, static_cast<int>(j + 1));
    EXPECT_FALSE(d.flags & kFlagPriorOnly) << d.reason;
    EXPECT_NEAR(d.alpha, seq.spec.alpha, 1e-6 * seq.spec.alpha);
    EXPECT_LT(abs_rel(outs[j].depth, seq.frames[j + 1].depth), 1e-4);
    EXPECT_EQ(outs[j].variance.valid_count(), outs[j].depth.valid_count());
  }
}

TEST(Pipeline, MissingFlowIsPriorOnly) {
  const auto& seq = clean_sequence();
  auto inputs = oracle::oracle_inputs(seq);
  inputs[3].flow.reset();
  const auto outs = run_sequence(inputs, seq.spec.k, PipelineConfig{});
  const auto& d = outs[2].diagnostics;
  EXPECT_EQ(d.flags, static_cast<std::uint32_t>(kFlagNoFlow | kFlagPriorOnly));
  EXPECT_GT(outs[2].depth.valid_count(), 0u);
  // Without a pose the prior is carried in place, so the error grows but stays bounded.
  EXPECT_LT(abs_rel(outs[2].depth, seq.frames[3].depth), 0.2);
  EXPECT_FALSE(outs[3].diagnostics.flags & kFlagPriorOnly);
}

TEST(Pipeline, ZeroBaselineIsFlagged) {
  const auto& seq = clean_sequence();
  auto inputs = oracle::oracle_inputs(seq);
  inputs[2].baseline = 0.0;
  const auto outs = run_sequence(inputs, seq.spec.k, PipelineConfig{});
  EXPECT_TRUE(outs[1].diagnostics.flags & kFlagZeroBaseline);
  EXPECT_TRUE(outs[1].diagnostics.flags & kFlagPriorOnly);
}

TEST(Pipeline, FirstFrameOnlyPrimes) {
  const auto& seq = clean_sequence();
  SequenceProcessor p(seq.spec.k, PipelineConfig{});
  const auto inputs = oracle::oracle_inputs(seq);
  EXPECT_FALSE(p.process(inputs[0]));
  EXPECT_EQ(p.frames_seen(), 1);
  EXPECT_TRUE(p.process(inputs[1]));
}

TEST(Pipeline, Deterministic) {
  const auto& seq = clean_sequence();
  const auto inputs = oracle::oracle_inputs(seq);
  const auto a = run_sequence(inputs, seq.spec.k, PipelineConfig{});
  const auto b = run_sequence(inputs, seq.spec.k, PipelineConfig{});
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a[j].depth, b[j].depth);
    EXPECT_EQ(a[j].variance, b[j].variance);
  }
}

TEST(Pipeline, InputErrors) {
  const auto& seq = clean_sequence();
  auto inputs = oracle::oracle_inputs(seq);
  try {
    run_sequence({inputs[0]}, seq.spec.k, PipelineConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientFrames);
  }
  SequenceProcessor p(seq.spec.k, PipelineConfig{});
  FrameInput bad = inputs[0];
  bad.d_rel = RelativeDepthMap(10, 10);
  EXPECT_THROW(p.process(bad), Error);
}

TEST(MetricsRecord, JsonRoundTrip) {
  MetricsRecord r;
  r.frame = 7;
  r.abs_rel = 0.012345678901234567;
  r.tae_pair = 1.5;
  r.inlier_ratio = 0.875;
  r.alpha = 3.25;
  r.rho_median = 1e-7;
  r.flags = kFlagPriorOnly | kFlagNoFlow;
  const auto back = parse_metrics_record(to_json_line(r));
  EXPECT_EQ(back.frame, 7);
  EXPECT_EQ(*back.abs_rel, *r.abs_rel);
  EXPECT_FALSE(back.delta1);
  EXPECT_EQ(*back.tae_pair, 1.5);
  EXPECT_EQ(back.rho_median, 1e-7);
  EXPECT_EQ(back.flags, r.flags);
  EXPECT_EQ(to_json_line(back), to_json_line(r));
  EXPECT_THROW(parse_metrics_record("{"), Error);
}

TEST(Dataset, RunAndEvaluateThroughFiles) {
  oracle::ScratchDir dir("dataset");
  const auto& seq = clean_sequence();
  const auto manifest = write_oracle_dataset(seq, dir / "data");
  PipelineConfig cfg;
  RunOptions options;
  options.out_dir = dir / "run";
  const auto summary = run_dataset(manifest, cfg, options);
  EXPECT_EQ(summary.frames, 5);
  EXPECT_EQ(summary.outputs, 4);
  EXPECT_EQ(summary.prior_only, 0);
  ASSERT_TRUE(summary.mean_metrics);
  EXPECT_LT(summary.mean_metrics->abs_rel, 1e-3);
  EXPECT_TRUE(std::filesystem::exists(options.out_dir / "metrics.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(options.out_dir / "diagnostics.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(options.out_dir / "poses.txt"));

  const auto report = evaluate_run(manifest, options.out_dir, DepthFormat::kPfm, cfg);
  EXPECT_EQ(report.records.size(), 4u);
  EXPECT_LT(report.overall.abs_rel, 1e-3);
  ASSERT_TRUE(report.tae);
  EXPECT_EQ(report.tae->pairs, 3u);
}

#ifdef SCALEFUSE_CLI
TEST(Cli, SynthRunEval) {
  oracle::ScratchDir dir("cli");
  const std::string cli = SCALEFUSE_CLI;
  const auto data = (dir / "data").string(), run = (dir / "run").string();
  auto sh = [](const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); };
  ASSERT_EQ(sh(cli + " synth --out " + data + " --frames 3 --seed 2"), 0);
  ASSERT_EQ(sh(cli + " run " + data + "/manifest.json --out " + run + " --format png16"), 0);
  ASSERT_EQ(sh(cli + " eval " + data + "/manifest.json --out " + run), 0);
  EXPECT_EQ(sh(cli + " inspect " + run), 0);
  EXPECT_NE(sh(cli + " run " + data + "/manifest.json"), 0);  // --out is required
  EXPECT_NE(sh(cli + " eval " + data + "/missing.json --out " + run), 0);
}
#endif
