#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scalefuse/pipeline.hpp"

namespace scalefuse::oracle {

// Straightforward reimplementations used as references. They share no code
// with the library beyond the raster types.

/// Graph segmentation with a stable comparison sort and label arrays that are
/// rewritten on every merge. Same merge predicate as the library.
std::vector<std::int32_t> brute_force_segment(const FeatureImage& smoothed, double k, int min_size);

/// True when two label images describe the same partition.
bool same_partition(const std::vector<std::int32_t>& a, const std::vector<std::int32_t>& b);

double brute_abs_rel(const DepthMap& pred, const DepthMap& gt);
double brute_delta(const DepthMap& pred, const DepthMap& gt, double threshold);
double brute_tae(const std::vector<DepthMap>& depths, const std::vector<Pose>& poses, const Intrinsics& k);

/// Frame inputs for the pipeline straight from an oracle sequence.
std::vector<FrameInput> oracle_inputs(const OracleSequence& seq);

/// Random valid depth map in [lo, hi] with roughly `invalid` fraction masked.
DepthMap random_depth(int w, int h, std::uint64_t seed, double lo, double hi, double invalid = 0.0);

/// Fresh directory under the system temp path, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag);
  ~ScratchDir();
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace scalefuse::oracle
