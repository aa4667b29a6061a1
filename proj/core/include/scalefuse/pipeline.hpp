#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "scalefuse/config.hpp"
#include "scalefuse/io.hpp"
#include "scalefuse/metrics.hpp"

namespace scalefuse {

/// Sets the worker count for data-parallel loops; 0 keeps the runtime default.
void set_thread_count(int threads);
int thread_count();

enum FrameFlag : std::uint32_t {
  kFlagPriorOnly = 1u << 0,
  kFlagNoConsensus = 1u << 1,
  kFlagZeroBaseline = 1u << 2,
  kFlagRotationOnly = 1u << 3,
  kFlagEmptyObservation = 1u << 4,
  kFlagNoFlow = 1u << 5,
  kFlagBootstrap = 1u << 6,
};

std::string describe_flags(std::uint32_t flags);

struct FrameInput {
  LabImage lab;
  RelativeDepthMap d_rel;
  std::optional<FlowField> flow;  // backward flow to the previous frame
  std::optional<double> baseline;
};

/// Milliseconds per stage, named after the runtime breakdown table.
struct StageTimings {
  double segmentation = 0.0;
  double motion = 0.0;
  double tri_fusion = 0.0;
  double scale = 0.0;

  double total() const { return segmentation + motion + tri_fusion + scale; }
};

struct FrameDiagnostics {
  int index = 0;
  std::uint32_t flags = 0;
  std::string reason;
  double inlier_ratio = 0.0;
  double alpha = 0.0;
  double baseline = 0.0;
  double rho_median = 0.0;
  std::optional<float> global_scale;
  double gate_rejection_rate = 0.0;
  std::size_t observed_flow = 0;
  std::size_t synthetic_flow = 0;
  std::size_t triangulated = 0;
  int segments = 0;
  int accepted_segments = 0;
  Pose pose;  // estimated, previous -> current
  StageTimings timings;
};

struct FrameOutput {
  DepthMap depth;
  ScalarMap variance;
  FrameDiagnostics diagnostics;
};

/// Owns the recursive state. Feed frames in order; the first frame only primes
/// the state and yields no output.
class SequenceProcessor {
 public:
  SequenceProcessor(const Intrinsics& k, const PipelineConfig& config);

  std::optional<FrameOutput> process(const FrameInput& frame);

  int frames_seen() const { return frame_index_ + 1; }
  const ScaleState& state() const { return state_; }

 private:
  Intrinsics k_;
  PipelineConfig config_;
  int frame_index_ = -1;
  ScaleState state_;
  DepthMap z_post_;
  ScalarMap v_post_;
  std::optional<float> global_scale_;
};

/// Runs every frame; outputs[i] belongs to frames[i + 1].
std::vector<FrameOutput> run_sequence(const std::vector<FrameInput>& frames, const Intrinsics& k,
                                      const PipelineConfig& config);

/// Per-frame line-delimited record. Holds only deterministic quantities.
struct MetricsRecord {
  int frame = 0;
  std::optional<double> abs_rel;
  std::optional<double> delta1;
  std::optional<double> tae_pair;
  double inlier_ratio = 0.0;
  double alpha = 0.0;
  double rho_median = 0.0;
  std::uint32_t flags = 0;
};

std::string to_json_line(const MetricsRecord& record);
MetricsRecord parse_metrics_record(const std::string& line);
std::string to_json_line(const FrameDiagnostics& diagnostics);

/// Frame inputs from a manifest entry; the baseline comes from the odometry
/// record nearest to the frame's timestamp.
FrameInput load_frame(const Manifest& manifest, std::size_t index, double* association_residual = nullptr);

std::filesystem::path depth_path(const std::filesystem::path& out_dir, int frame, DepthFormat format);
DepthMap read_depth(const std::filesystem::path& path);

struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> metrics_out;  // default out_dir/metrics.jsonl
  std::function<void(const FrameOutput&)> on_frame;
};

struct RunSummary {
  int frames = 0;
  int outputs = 0;
  int prior_only = 0;
  std::optional<DepthMetrics> mean_metrics;  // over frames with ground truth
  std::optional<double> tae;
  double max_association_residual = 0.0;
};

/// Loads frames one at a time, writes depth rasters, poses.txt (estimated
/// camera-to-world), diagnostics.jsonl, metrics records and optionally a PLY.
RunSummary run_dataset(const std::filesystem::path& manifest_path, const PipelineConfig& config,
                       const RunOptions& options);

struct EvalReport {
  std::vector<MetricsRecord> records;
  DepthMetrics overall;
  std::optional<NearFarMetrics> near_far;
  std::optional<TaeResult> tae;
};

/// Compares the depth rasters in `out_dir` with the manifest's ground truth.
/// TAE uses ground-truth poses when present, otherwise the estimated ones.
EvalReport evaluate_run(const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir,
                        DepthFormat format, const PipelineConfig& config);

/// Writes an oracle sequence in the on-disk dataset layout and returns the
/// manifest path.
std::filesystem::path write_oracle_dataset(const OracleSequence& sequence, const std::filesystem::path& dir);

}  // namespace scalefuse
