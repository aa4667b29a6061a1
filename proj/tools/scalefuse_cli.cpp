// scalefuse: metric depth from relative depth, optical flow and odometry.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "scalefuse/pipeline.hpp"
#include "scalefuse/stats.hpp"

namespace fs = std::filesystem;
using namespace scalefuse;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

PipelineConfig resolve_config(const CommonFlags& flags) {
  PipelineConfig config = flags.config.empty() ? PipelineConfig{} : load_pipeline_config(flags.config);
  if (flags.seed) config.seed = *flags.seed;
  if (flags.threads > 0) config.threads = flags.threads;
  set_thread_count(config.threads);
  return config;
}

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "Pipeline config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.seed, "Random seed");
  cmd->add_option("--threads", flags.threads, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
}

std::string fmt(double x, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, x);
  return buf;
}

void print_metrics_row(const char* label, const DepthMetrics& m) {
  std::printf("%-10s %10s %8s %8s %8s %10zu\n", label, fmt(m.abs_rel).c_str(), fmt(m.delta1, "%.4f").c_str(),
              fmt(m.delta2, "%.4f").c_str(), fmt(m.delta3, "%.4f").c_str(), m.count);
}

int cmd_run(const std::string& manifest, const CommonFlags& flags, const std::string& out,
            const std::string& format, const std::string& metrics_out) {
  PipelineConfig config = resolve_config(flags);
  if (!format.empty()) config.output.depth_format = parse_depth_format(format);
  RunOptions options;
  options.out_dir = out;
  if (!metrics_out.empty()) options.metrics_out = fs::path(metrics_out);
  fs::create_directories(options.out_dir);
  {
    std::ofstream cfg(options.out_dir / "config.json");
    cfg << dump_pipeline_config(config) << '\n';
  }
  const RunSummary s = run_dataset(manifest, config, options);
  std::printf("frames %d, outputs %d, prior-only %d, max odometry association residual %.4f s\n", s.frames,
              s.outputs, s.prior_only, s.max_association_residual);
  if (s.mean_metrics) {
    std::printf("%-10s %10s %8s %8s %8s %10s\n", "window", "AbsRel", "d1", "d2", "d3", "pixels");
    print_metrics_row("all", *s.mean_metrics);
  }
  if (s.tae) std::printf("TAE %.4f\n", *s.tae);
  return 0;
}

int cmd_eval(const std::string& manifest, const CommonFlags& flags, const std::string& out,
             const std::string& format, const std::string& metrics_out) {
  PipelineConfig config = resolve_config(flags);
  DepthFormat fmt_kind = config.output.depth_format;
  if (!format.empty()) {
    fmt_kind = parse_depth_format(format);
  } else if (fs::exists(fs::path(out) / "config.json")) {
    fmt_kind = load_pipeline_config(fs::path(out) / "config.json").output.depth_format;
  }
  const EvalReport r = evaluate_run(manifest, out, fmt_kind, config);
  std::printf("%-10s %10s %8s %8s %8s %10s\n", "window", "AbsRel", "d1", "d2", "d3", "pixels");
  print_metrics_row("all", r.overall);
  if (r.near_far) {
    print_metrics_row("near", r.near_far->near);
    print_metrics_row("far", r.near_far->far);
  }
  if (r.tae) std::printf("TAE %.4f over %zu pairs\n", r.tae->tae, r.tae->pairs);
  if (!metrics_out.empty()) {
    std::ofstream f(metrics_out);
    if (!f) throw Error(ErrorCode::kIo, "cannot write " + metrics_out);
    for (const auto& rec : r.records) f << to_json_line(rec) << '\n';
  }
  return 0;
}

int cmd_synth(const CommonFlags& flags, const std::string& scene_config, const std::string& out,
              std::optional<int> frames, std::optional<int> width, std::optional<int> height) {
  set_thread_count(flags.threads);
  SceneOptions options = scene_config.empty() ? SceneOptions{} : load_scene_options(scene_config);
  if (flags.seed) options.seed = *flags.seed;
  if (frames) options.frames = *frames;
  if (width) options.width = *width;
  if (height) options.height = *height;
  const auto seq = render_sequence(make_scene(options));
  const auto manifest = write_oracle_dataset(seq, out);
  std::ofstream(fs::path(out) / "scene.json") << dump_scene_options(options) << '\n';
  std::printf("wrote %zu frames to %s\n", seq.frames.size(), manifest.string().c_str());
  return 0;
}

int cmd_bench(const CommonFlags& flags, int frames, int width, int height) {
  PipelineConfig config = resolve_config(flags);
  SceneOptions options;
  options.width = width;
  options.height = height;
  options.frames = frames + 1;
  options.seed = config.seed;
  options.noise.flow_sigma_px = 0.3;
  options.noise.baseline_rel_sigma = 0.05;
  std::fprintf(stderr, "rendering %d frames at %dx%d...\n", options.frames, width, height);
  const auto seq = render_sequence(make_scene(options));
  SequenceProcessor processor(seq.spec.k, config);
  std::vector<double> seg, motion, scale, tri, total;
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    FrameInput in;
    const auto t0 = std::chrono::steady_clock::now();
    in.lab = lab_convert(seq.frames[i].image);
    const double lab_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    in.d_rel = seq.frames[i].d_rel;
    if (i > 0) {
      in.flow = seq.flows[i];
      in.baseline = seq.baselines_measured[i];
    }
    const auto out = processor.process(in);
    if (!out) continue;
    auto t = out->diagnostics.timings;
    t.segmentation += lab_ms;
    seg.push_back(t.segmentation);
    motion.push_back(t.motion);
    scale.push_back(t.scale);
    tri.push_back(t.tri_fusion);
    total.push_back(t.total());
  }
  std::printf("runtime per frame at %dx%d, median of %zu frames, %d threads (flow and relative depth external, color conversion counted in Seg)\n",
              width, height, total.size(), thread_count());
  std::printf("%-12s %10s\n", "stage", "ms");
  std::printf("%-12s %10.2f\n", "Seg", lower_median(seg));
  std::printf("%-12s %10.2f\n", "Motion", lower_median(motion));
  std::printf("%-12s %10.2f\n", "Scale", lower_median(scale));
  std::printf("%-12s %10.2f\n", "Tri+Fusion", lower_median(tri));
  std::printf("%-12s %10.2f\n", "Total", lower_median(total));
  return 0;
}

int cmd_inspect(const std::string& run_dir) {
  const fs::path path = fs::path(run_dir) / "diagnostics.jsonl";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::printf("%6s %8s %10s %12s %10s %10s  %s\n", "frame", "inliers", "alpha", "rho_median", "scale", "gate_rej",
              "flags");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const double scale = j["global_scale"].is_null() ? 0.0 : j["global_scale"].get<double>();
    std::printf("%6d %8.3f %10.5f %12.5f %10.5f %10.4f  %s\n", j["frame"].get<int>(),
                j["inlier_ratio"].get<double>(), j["alpha"].get<double>(), j["rho_median"].get<double>(), scale,
                j["gate_rejection_rate"].get<double>(), j["flags"].get<std::string>().c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metric depth from relative depth, optical flow and odometry"};
  app.require_subcommand(1);

  CommonFlags run_flags, eval_flags, synth_flags, bench_flags;
  std::string manifest, out, format, metrics_out, scene, run_dir;
  std::optional<int> frames, width, height;
  int bench_frames = 50, bench_width = 1241, bench_height = 376;

  auto* run = app.add_subcommand("run", "Process a sequence");
  run->add_option("manifest", manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  add_common(run, run_flags);
  run->add_option("--out", out, "Output directory")->required();
  run->add_option("--format", format, "Depth raster format")->check(CLI::IsMember({"pfm", "png16"}));
  run->add_option("--metrics-out", metrics_out, "Line-delimited metrics records");

  auto* eval = app.add_subcommand("eval", "Score a run against ground truth");
  eval->add_option("manifest", manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  add_common(eval, eval_flags);
  eval->add_option("--out", out, "Run output directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--format", format, "Depth raster format")->check(CLI::IsMember({"pfm", "png16"}));
  eval->add_option("--metrics-out", metrics_out, "Line-delimited per-frame records");

  auto* synth = app.add_subcommand("synth", "Generate an oracle sequence");
  synth->add_option("--config", scene, "Scene options (JSON)")->check(CLI::ExistingFile);
  synth->add_option("--seed", synth_flags.seed, "Random seed");
  synth->add_option("--threads", synth_flags.threads, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--frames", frames, "Frame count")->check(CLI::PositiveNumber);
  synth->add_option("--width", width, "Image width")->check(CLI::PositiveNumber);
  synth->add_option("--height", height, "Image height")->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "Per-stage runtime on a synthetic sequence");
  add_common(bench, bench_flags);
  bench->add_option("--frames", bench_frames, "Frames to time")->check(CLI::PositiveNumber);
  bench->add_option("--width", bench_width, "Image width")->check(CLI::PositiveNumber);
  bench->add_option("--height", bench_height, "Image height")->check(CLI::PositiveNumber);

  auto* inspect = app.add_subcommand("inspect", "Per-frame diagnostics of a run");
  inspect->add_option("run_dir", run_dir, "Run output directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(manifest, run_flags, out, format, metrics_out);
    if (*eval) return cmd_eval(manifest, eval_flags, out, format, metrics_out);
    if (*synth) return cmd_synth(synth_flags, scene, out, frames, width, height);
    if (*bench) return cmd_bench(bench_flags, bench_frames, bench_width, bench_height);
    if (*inspect) return cmd_inspect(run_dir);
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.code())).c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
