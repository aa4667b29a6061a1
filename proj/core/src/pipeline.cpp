#include "scalefuse/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <fstream>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json_util.hpp"
#include "scalefuse/random.hpp"
#include "scalefuse/stats.hpp"

namespace scalefuse {

namespace {

using detail::Json;
using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

bool is_geometric_failure(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegenerateDepth:
    case ErrorCode::kInsufficientSamples:
    case ErrorCode::kRankDeficient:
    case ErrorCode::kZeroBaseline:
    case ErrorCode::kDegenerateTranslation:
    case ErrorCode::kNoConsensus:
    case ErrorCode::kZeroTranslation:
    case ErrorCode::kEmptyObservation:
      return true;
    default:
      return false;
  }
}

// Per-frame observations only; the ablation without temporal fusion.
FusionResult observation_only(const ScaleState& previous, const WarpedPrior* prior,
                              const ScaleObservation* obs, const RelativeDepthMap& d_rel) {
  FusionResult r;
  r.state.s = ScalarMap(d_rel.width(), d_rel.height());
  r.state.v = ScalarMap(d_rel.width(), d_rel.height());
  r.state.frame_index = previous.frame_index;
  r.state.rho_median = previous.rho_median;
  if (obs) {
    r.state.s = obs->s_obs;
    r.state.v = obs->v_obs;
    r.state.rho_median = obs->rho_median;
    r.state.frame_index = previous.frame_index + 1;
    r.stats.observation_only = obs->s_obs.valid_count();
  } else if (prior) {
    for (std::size_t i = 0; i < d_rel.size(); ++i) {
      if (prior->s_prior.valid(i) && prior->v_prior.valid(i)) {
        r.state.s.set(i, prior->s_prior[i]);
        r.state.v.set(i, prior->v_prior[i]);
      }
    }
    r.stats.prior_only = r.state.s.valid_count();
  }
  return r;
}

std::string frame_name(int index, const char* extension) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d%s", index, extension);
  return buf;
}

Json optional_number(const std::optional<double>& x) { return x ? Json(*x) : Json(nullptr); }

}  // namespace

void set_thread_count(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

std::string describe_flags(std::uint32_t flags) {
  static const std::pair<std::uint32_t, const char*> names[] = {
      {kFlagPriorOnly, "prior-only"},       {kFlagNoConsensus, "no-consensus"},
      {kFlagZeroBaseline, "zero-baseline"}, {kFlagRotationOnly, "rotation-only"},
      {kFlagEmptyObservation, "empty-observation"}, {kFlagNoFlow, "no-flow"},
      {kFlagBootstrap, "bootstrap"}};
  std::string out;
  for (const auto& [bit, name] : names) {
    if (!(flags & bit)) continue;
    if (!out.empty()) out += ',';
    out += name;
  }
  return out.empty() ? "ok" : out;
}

SequenceProcessor::SequenceProcessor(const Intrinsics& k, const PipelineConfig& config) : k_(k), config_(config) {
  k_.validate();
  config_.validate();
}

std::optional<FrameOutput> SequenceProcessor::process(const FrameInput& frame) {
  if (frame.d_rel.width() != k_.width || frame.d_rel.height() != k_.height) {
    throw Error(ErrorCode::kDimensionMismatch, "relative depth does not match the intrinsics");
  }
  require_same_shape(frame.lab, frame.d_rel, "image vs relative depth");
  if (frame.flow) require_same_shape(*frame.flow, frame.d_rel, "flow vs relative depth");
  ++frame_index_;
  if (frame_index_ == 0) return std::nullopt;

  FrameOutput out;
  auto& d = out.diagnostics;
  d.index = frame_index_;
  const std::uint64_t seed = mix_seed(config_.seed, static_cast<std::uint64_t>(frame_index_));
  const auto& d_rel = frame.d_rel;

  auto t0 = Clock::now();
  SegmentLabels labels;
  if (config_.enable_segmentation) {
    labels = segment_frame(frame.lab, d_rel, config_.segmentation);
    d.segments = labels.count;
  }
  d.timings.segmentation = elapsed_ms(t0);

  t0 = Clock::now();
  std::optional<MotionHypothesis> hypothesis;
  Pose pose = Pose::identity();
  d.baseline = frame.baseline.value_or(0.0);
  if (!frame.flow) {
    d.flags |= kFlagNoFlow | kFlagPriorOnly;
    d.reason = "no flow";
  } else {
    try {
      const auto samples = stratified_sample(*frame.flow, d_rel, k_, config_.ransac, seed);
      hypothesis = ransac_motion(samples, d.baseline, k_, config_.ransac, seed);
      pose = hypothesis->pose();
      d.inlier_ratio = hypothesis->inlier_ratio();
      d.alpha = hypothesis->alpha;
      if (!hypothesis->has_translation()) {
        d.flags |= kFlagPriorOnly |
                   (d.baseline < config_.ransac.min_baseline ? kFlagZeroBaseline : kFlagRotationOnly);
        d.reason = d.baseline < config_.ransac.min_baseline ? "baseline below floor" : "rotation-only motion";
      }
    } catch (const Error& e) {
      if (!is_geometric_failure(e.code())) throw;
      hypothesis.reset();
      pose = Pose::identity();
      d.flags |= kFlagNoConsensus | kFlagPriorOnly;
      d.reason = e.what();
    }
  }
  d.pose = pose;
  d.timings.motion = elapsed_ms(t0);

  t0 = Clock::now();
  std::optional<ScaleObservation> observation;
  if (hypothesis && hypothesis->has_translation()) {
    const auto fused = fuse_flow(*frame.flow, d_rel, k_, *hypothesis, config_.ransac);
    d.observed_flow = fused.observed;
    d.synthetic_flow = fused.synthetic;
    try {
      const auto tri = build_observation(fused, pose, k_, d_rel, config_.triangulation);
      d.triangulated = tri.triangulated;
      observation = make_scale_observation(tri, d_rel, k_, config_.fusion);
    } catch (const Error& e) {
      if (!is_geometric_failure(e.code())) throw;
      d.flags |= kFlagEmptyObservation | kFlagPriorOnly;
      d.reason = e.what();
    }
  }
  std::optional<WarpedPrior> prior;
  if (!z_post_.empty()) prior = warp_posterior(z_post_, v_post_, pose, k_, d_rel);
  const WarpedPrior* prior_ptr = prior ? &*prior : nullptr;
  const ScaleObservation* obs_ptr = observation ? &*observation : nullptr;
  if (!state_.initialized() && observation) d.flags |= kFlagBootstrap;
  FusionResult fusion = config_.enable_fusion
                            ? fuse_frame(state_, prior_ptr, obs_ptr, d_rel, k_, config_.fusion)
                            : observation_only(state_, prior_ptr, obs_ptr, d_rel);
  d.rho_median = fusion.state.rho_median;
  d.gate_rejection_rate = fusion.stats.gate_rejection_rate();
  d.timings.tri_fusion = elapsed_ms(t0);

  t0 = Clock::now();
  const Consolidation scales =
      config_.enable_segmentation
          ? consolidate_scales(labels, fusion.state.s, fusion.state.v, config_.consolidation, global_scale_)
          : global_fill(fusion.state.s, global_scale_);
  d.global_scale = scales.global_scale;
  d.accepted_segments = scales.accepted;
  out.depth = final_depth(scales.s_seg, d_rel);

  std::vector<float> variances;
  for (std::size_t i = 0; i < fusion.state.v.size(); ++i) {
    if (fusion.state.v.valid(i)) variances.push_back(fusion.state.v[i]);
  }
  const float fill = variances.empty()
                         ? static_cast<float>(config_.fusion.fill_variance_factor)
                         : static_cast<float>(config_.fusion.fill_variance_factor * lower_median(std::move(variances)));
  out.variance = ScalarMap(d_rel.width(), d_rel.height());
  for (std::size_t i = 0; i < out.depth.size(); ++i) {
    if (!out.depth.valid(i)) continue;
    out.variance.set(i, fusion.state.v.valid(i) ? fusion.state.v[i] : fill);
  }
  d.timings.scale = elapsed_ms(t0);

  state_ = std::move(fusion.state);
  global_scale_ = scales.global_scale;
  z_post_ = out.depth;
  v_post_ = out.variance;
  return out;
}

std::vector<FrameOutput> run_sequence(const std::vector<FrameInput>& frames, const Intrinsics& k,
                                      const PipelineConfig& config) {
  if (frames.size() < 2) throw Error(ErrorCode::kInsufficientFrames, "run_sequence: need at least 2 frames");
  SequenceProcessor processor(k, config);
  std::vector<FrameOutput> outputs;
  for (const auto& f : frames) {
    if (auto out = processor.process(f)) outputs.push_back(std::move(*out));
  }
  return outputs;
}

std::string to_json_line(const MetricsRecord& r) {
  Json j;
  j["frame"] = r.frame;
  j["abs_rel"] = optional_number(r.abs_rel);
  j["delta1"] = optional_number(r.delta1);
  j["tae_pair"] = optional_number(r.tae_pair);
  j["inlier_ratio"] = r.inlier_ratio;
  j["alpha"] = r.alpha;
  j["rho_median"] = r.rho_median;
  j["flags"] = r.flags;
  return j.dump();
}

MetricsRecord parse_metrics_record(const std::string& line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("metrics record: ") + e.what());
  }
  MetricsRecord r;
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
  };
  try {
    r.frame = j.at("frame").get<int>();
    r.abs_rel = opt("abs_rel");
    r.delta1 = opt("delta1");
    r.tae_pair = opt("tae_pair");
    r.inlier_ratio = j.value("inlier_ratio", 0.0);
    r.alpha = j.value("alpha", 0.0);
    r.rho_median = j.value("rho_median", 0.0);
    r.flags = j.value("flags", 0u);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("metrics record: ") + e.what());
  }
  return r;
}

std::string to_json_line(const FrameDiagnostics& d) {
  Json j;
  j["frame"] = d.index;
  j["flags"] = describe_flags(d.flags);
  if (!d.reason.empty()) j["reason"] = d.reason;
  j["inlier_ratio"] = d.inlier_ratio;
  j["alpha"] = d.alpha;
  j["baseline"] = d.baseline;
  j["rho_median"] = d.rho_median;
  j["global_scale"] = d.global_scale ? Json(*d.global_scale) : Json(nullptr);
  j["gate_rejection_rate"] = d.gate_rejection_rate;
  j["observed_flow"] = d.observed_flow;
  j["synthetic_flow"] = d.synthetic_flow;
  j["triangulated"] = d.triangulated;
  j["segments"] = d.segments;
  j["accepted_segments"] = d.accepted_segments;
  j["rotation_deg"] = d.pose.rotation_vector().norm() * 180.0 / std::numbers::pi;
  j["direction"] = {d.pose.direction().x(), d.pose.direction().y(), d.pose.direction().z()};
  j["timings_ms"] = {{"seg", d.timings.segmentation},
                     {"motion", d.timings.motion},
                     {"tri_fusion", d.timings.tri_fusion},
                     {"scale", d.timings.scale},
                     {"total", d.timings.total()}};
  return j.dump();
}

FrameInput load_frame(const Manifest& manifest, std::size_t index, double* association_residual) {
  const auto& entry = manifest.frames.at(index);
  const auto& k = manifest.intrinsics;
  FrameInput in;
  const auto image = read_image(manifest.resolve(entry.image));
  in.lab = image.single_channel ? lab_from_gray(image.gray) : lab_convert(image.rgb);
  const auto inverse = read_pfm(manifest.resolve(entry.inverse_depth));
  in.d_rel = relative_depth_from_inverse(inverse);
  if (in.lab.width() != k.width || in.lab.height() != k.height || in.d_rel.width() != k.width ||
      in.d_rel.height() != k.height) {
    throw Error(ErrorCode::kDimensionMismatch, "frame " + std::to_string(index) + ": raster size differs from intrinsics");
  }
  if (index > 0 && entry.flow) in.flow = read_flo(manifest.resolve(*entry.flow), k.width, k.height);
  if (index > 0 && !manifest.odometry.empty()) {
    const auto match = associate_odometry(manifest.odometry, entry.timestamp);
    in.baseline = match.baseline;
    if (association_residual) *association_residual = match.residual;
  }
  return in;
}

std::filesystem::path depth_path(const std::filesystem::path& out_dir, int frame, DepthFormat format) {
  return out_dir / "depth" / frame_name(frame, format == DepthFormat::kPfm ? ".pfm" : ".png");
}

DepthMap read_depth(const std::filesystem::path& path) {
  return path.extension() == ".png" ? read_depth_png16(path) : read_pfm(path);
}

namespace {

std::optional<DepthMap> load_gt_depth(const Manifest& m, std::size_t index) {
  if (!m.gt || index >= m.gt->depth.size() || m.gt->depth[index].empty()) return std::nullopt;
  return read_pfm(m.resolve(m.gt->depth[index]));
}

std::optional<std::vector<Pose>> load_gt_relative(const Manifest& m) {
  if (!m.gt || !m.gt->poses) return std::nullopt;
  return relative_from_absolute(read_kitti_poses(m.resolve(*m.gt->poses)));
}

template <typename F>
std::optional<double> try_metric(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNoValidPixels) return std::nullopt;
    throw;
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

}  // namespace

RunSummary run_dataset(const std::filesystem::path& manifest_path, const PipelineConfig& config,
                       const RunOptions& options) {
  const Manifest manifest = read_manifest(manifest_path);
  if (manifest.frames.size() < 2) throw Error(ErrorCode::kInsufficientFrames, "run: need at least 2 frames");
  const auto& k = manifest.intrinsics;
  std::filesystem::create_directories(options.out_dir / "depth");
  const auto gt_relative = load_gt_relative(manifest);

  auto metrics_out = open_out(options.metrics_out.value_or(options.out_dir / "metrics.jsonl"));
  auto diagnostics_out = open_out(options.out_dir / "diagnostics.jsonl");

  SequenceProcessor processor(k, config);
  RunSummary summary;
  std::vector<Pose> world_from_camera{Pose::identity()};
  std::vector<PlyPoint> cloud;
  std::optional<DepthMap> previous_depth;
  std::vector<double> tae_terms;
  DepthMetrics sums;
  int with_gt = 0;

  for (std::size_t i = 0; i < manifest.frames.size(); ++i) {
    double residual = 0.0;
    const FrameInput input = load_frame(manifest, i, &residual);
    summary.max_association_residual = std::max(summary.max_association_residual, residual);
    ++summary.frames;
    auto out = processor.process(input);
    if (!out) continue;
    const auto& d = out->diagnostics;
    ++summary.outputs;
    if (d.flags & kFlagPriorOnly) ++summary.prior_only;
    world_from_camera.push_back(d.pose.inverse().then(world_from_camera.back()));

    if (config.output.depth) {
      const auto path = depth_path(options.out_dir, d.index, config.output.depth_format);
      if (config.output.depth_format == DepthFormat::kPfm) {
        write_pfm(path, out->depth);
      } else {
        write_depth_png16(path, out->depth);
      }
    }
    if (config.output.pointcloud) {
      const auto image = read_image(manifest.resolve(manifest.frames[i].image));
      append_points(cloud, out->depth, image.rgb, k, world_from_camera.back());
    }

    MetricsRecord record;
    record.frame = d.index;
    record.inlier_ratio = d.inlier_ratio;
    record.alpha = d.alpha;
    record.rho_median = d.rho_median;
    record.flags = d.flags;
    if (const auto gt = load_gt_depth(manifest, i)) {
      record.abs_rel = try_metric([&] { return abs_rel(out->depth, *gt); });
      record.delta1 = try_metric([&] { return delta_accuracy(out->depth, *gt, 1.25); });
      if (record.abs_rel) {
        const auto m = depth_metrics(out->depth, *gt);
        sums.abs_rel += m.abs_rel;
        sums.delta1 += m.delta1;
        sums.delta2 += m.delta2;
        sums.delta3 += m.delta3;
        sums.count += m.count;
        ++with_gt;
      }
    }
    if (previous_depth) {
      const Pose pair_pose = gt_relative && i < gt_relative->size() ? (*gt_relative)[i] : d.pose;
      record.tae_pair = try_metric([&] { return tae_pair(*previous_depth, out->depth, pair_pose, k); });
      if (record.tae_pair) tae_terms.push_back(*record.tae_pair);
    }
    if (config.output.metrics) metrics_out << to_json_line(record) << '\n';
    diagnostics_out << to_json_line(d) << '\n';
    if (options.on_frame) options.on_frame(*out);
    previous_depth = std::move(out->depth);
  }

  write_kitti_poses(options.out_dir / "poses.txt", world_from_camera);
  if (config.output.pointcloud) write_ply(options.out_dir / "pointcloud.ply", cloud);
  if (with_gt > 0) {
    sums.abs_rel /= with_gt;
    sums.delta1 /= with_gt;
    sums.delta2 /= with_gt;
    sums.delta3 /= with_gt;
    summary.mean_metrics = sums;
  }
  if (tae_terms.size() >= 2) {
    double total = 0.0;
    for (double t : tae_terms) total += t;
    summary.tae = total / static_cast<double>(tae_terms.size());
  }
  return summary;
}

EvalReport evaluate_run(const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir,
                        DepthFormat format, const PipelineConfig& config) {
  const Manifest manifest = read_manifest(manifest_path);
  if (!manifest.gt) throw Error(ErrorCode::kConfig, "eval: manifest has no ground truth");
  const auto& k = manifest.intrinsics;

  std::vector<MetricsRecord> run_records;
  if (std::ifstream in(out_dir / "metrics.jsonl"); in) {
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) run_records.push_back(parse_metrics_record(line));
    }
  }
  auto run_record = [&](int frame) -> const MetricsRecord* {
    for (const auto& r : run_records) {
      if (r.frame == frame) return &r;
    }
    return nullptr;
  };

  std::vector<Pose> relative;
  if (const auto gt = load_gt_relative(manifest)) {
    relative = *gt;
  } else if (std::filesystem::exists(out_dir / "poses.txt")) {
    relative = relative_from_absolute(read_kitti_poses(out_dir / "poses.txt"));
  }

  const DepthRange near{0.0, config.near_max, false};
  const DepthRange far{config.near_max, config.far_max, true};
  EvalReport report;
  std::vector<DepthMap> depths;
  std::vector<Pose> pair_poses;
  DepthMetrics overall;
  NearFarMetrics nf;
  int n_all = 0, n_near = 0, n_far = 0;
  auto accumulate = [](DepthMetrics& into, const DepthMetrics& m) {
    into.abs_rel += m.abs_rel;
    into.delta1 += m.delta1;
    into.delta2 += m.delta2;
    into.delta3 += m.delta3;
    into.count += m.count;
  };
  auto finish = [](DepthMetrics& m, int n) {
    m.abs_rel /= n;
    m.delta1 /= n;
    m.delta2 /= n;
    m.delta3 /= n;
  };

  for (std::size_t i = 1; i < manifest.frames.size(); ++i) {
    const auto path = depth_path(out_dir, static_cast<int>(i), format);
    if (!std::filesystem::exists(path)) continue;
    DepthMap pred = read_depth(path);
    MetricsRecord rec;
    rec.frame = static_cast<int>(i);
    if (const auto* r = run_record(rec.frame)) {
      rec.inlier_ratio = r->inlier_ratio;
      rec.alpha = r->alpha;
      rec.rho_median = r->rho_median;
      rec.flags = r->flags;
    }
    if (const auto gt = load_gt_depth(manifest, i)) {
      if (try_metric([&] { return abs_rel(pred, *gt); })) {
        const auto m = depth_metrics(pred, *gt);
        rec.abs_rel = m.abs_rel;
        rec.delta1 = m.delta1;
        accumulate(overall, m);
        ++n_all;
      }
      if (try_metric([&] { return abs_rel(pred, *gt, near); })) {
        accumulate(nf.near, depth_metrics(pred, *gt, near));
        ++n_near;
      }
      if (try_metric([&] { return abs_rel(pred, *gt, far); })) {
        accumulate(nf.far, depth_metrics(pred, *gt, far));
        ++n_far;
      }
    }
    if (!depths.empty() && i < relative.size()) {
      rec.tae_pair = try_metric([&] { return tae_pair(depths.back(), pred, relative[i], k); });
      pair_poses.push_back(relative[i]);
    }
    report.records.push_back(rec);
    depths.push_back(std::move(pred));
  }
  if (n_all == 0) throw Error(ErrorCode::kNoValidPixels, "eval: no frame overlaps ground truth");
  finish(overall, n_all);
  report.overall = overall;
  if (n_near > 0 && n_far > 0) {
    finish(nf.near, n_near);
    finish(nf.far, n_far);
    nf.near.range = near;
    nf.far.range = far;
    report.near_far = nf;
  }
  if (depths.size() >= 3 && pair_poses.size() + 1 == depths.size()) {
    report.tae = tae(depths, pair_poses, k);
  }
  return report;
}

std::filesystem::path write_oracle_dataset(const OracleSequence& seq, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const char* sub : {"images", "inverse_depth", "flow", "gt/depth"}) fs::create_directories(dir / sub);
  const auto& spec = seq.spec;
  Manifest m;
  m.root = dir;
  m.intrinsics = spec.k;
  GroundTruth gt;
  gt.poses = "gt/poses.txt";
  gt.scale = spec.alpha;
  auto rng = make_rng(spec.seed, 4000);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);

  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const auto& f = seq.frames[i];
    const int index = static_cast<int>(i);
    FrameEntry e;
    e.timestamp = index * spec.frame_interval;
    e.image = "images/" + frame_name(index, ".png");
    e.inverse_depth = "inverse_depth/" + frame_name(index, ".pfm");
    write_rgb_png(dir / e.image, f.image);
    ScalarMap inverse(f.d_rel.width(), f.d_rel.height());
    for (std::size_t p = 0; p < f.d_rel.size(); ++p) {
      if (f.d_rel.valid(p)) inverse.set(p, 1.0f / f.d_rel[p]);
    }
    write_pfm(dir / e.inverse_depth, inverse);
    if (i > 0) {
      e.flow = "flow/" + frame_name(index, ".flo");
      write_flo(dir / *e.flow, seq.flows[i]);
      m.odometry.push_back({e.timestamp + jitter(rng) * spec.frame_interval, seq.baselines_measured[i]});
    }
    const std::string gt_name = "gt/depth/" + frame_name(index, ".pfm");
    write_pfm(dir / gt_name, f.depth);
    gt.depth.push_back(gt_name);
    m.frames.push_back(std::move(e));
  }
  write_kitti_poses(dir / "gt/poses.txt", absolute_from_relative(seq.poses));
  m.gt = std::move(gt);
  const auto path = dir / "manifest.json";
  write_manifest(path, m);
  return path;
}

}  // namespace scalefuse
