#pragma once

#include <optional>
#include <vector>

#include "scalefuse/geometry.hpp"
#include "scalefuse/propagation.hpp"
#include "scalefuse/triangulation.hpp"

namespace scalefuse {

/// 99% quantile of the chi-square distribution with one degree of freedom.
inline constexpr double kChiSquare99OneDof = 6.634896601021214;

struct FusionConfig {
  double variance_scale = 1.0;  // sigma^2
  double gain_floor = 0.1;      // kappa_min
  double gate = kChiSquare99OneDof;
  double ema = 0.9;
  double observation_variance_floor = 1e-6;
  /// Bootstrap variance = factor * frame median of V_obs.
  double init_variance_factor = 25.0;
  /// Variance for pixels that gain depth without a filter estimate
  /// = factor * frame median of V_post.
  double fill_variance_factor = 10.0;
  double tolerance_floor = 1e-4;

  void validate() const;
};

/// Recursive per-pixel scale filter state.
struct ScaleState {
  ScalarMap s;  // posterior scale, unitless
  ScalarMap v;  // posterior variance, scale^2
  double tolerance = 0.0;  // sigma_e
  bool has_tolerance = false;
  /// Last observed frame median Sampson residual; inflates prior-only frames.
  double rho_median = 0.0;
  int frame_index = -1;

  bool initialized() const { return frame_index >= 0; }
};

/// 1 + rho_median / (fx * fy).
double prior_inflation(double rho_median, const Intrinsics& k);
ScalarMap inflate_prior(const ScalarMap& v_prior, double rho_median, const Intrinsics& k);

/// sigma^2 * rho / (fx * fy), floored so the gain stays finite.
double observation_variance(double rho, const Intrinsics& k, double variance_scale,
                            double floor);
ScalarMap observation_variance(const ScalarMap& rho, const Intrinsics& k,
                               const FusionConfig& cfg);

enum class GateOutcome : std::uint8_t { kInlier, kKeepPrior, kKeepObservation };

struct GateResult {
  GateOutcome outcome = GateOutcome::kInlier;
  double gamma = 0.0;
};

/// gamma = (S_obs - S_prior)^2 / (V_prior + V_obs); outliers keep whichever
/// estimate has the smaller variance.
GateResult innovation_gate(double s_obs, double s_prior, double v_obs, double v_prior,
                           double gate);

/// |S_obs - S_prior| / S_obs.
double relative_discrepancy(double s_obs, double s_prior);

/// exp(-delta^2 / (2 sigma_e^2)).
double consistency_score(double s_obs, double s_prior, double tolerance);

/// ema * previous + (1 - ema) * MAD(deltas), floored; without a previous value
/// max(MAD, floor). Empty input returns the previous value unchanged.
std::optional<double> update_tolerance(std::vector<double> deltas,
                                       std::optional<double> previous, double ema,
                                       double floor);

struct KalmanResult {
  double s = 0.0;
  double v = 0.0;
  double gain = 0.0;
};

/// kappa = min(kappa_raw, kappa_min + (1 - kappa_min) c), Joseph-form variance.
KalmanResult kalman_update(double s_prior, double v_prior, double s_obs, double v_obs,
                           double consistency, double gain_floor);

/// Scale observation from triangulation: S_obs = Z_tri / d_rel and V_obs.
struct ScaleObservation {
  ScalarMap s_obs;
  ScalarMap v_obs;
  double rho_median = 0.0;
};

ScaleObservation make_scale_observation(const Observation& obs, const RelativeDepthMap& d_rel,
                                        const Intrinsics& k, const FusionConfig& cfg);

struct FusionStats {
  std::size_t fused = 0;
  std::size_t gated = 0;
  std::size_t prior_only = 0;
  std::size_t observation_only = 0;
  double inflation = 1.0;

  double gate_rejection_rate() const {
    const auto tested = fused + gated;
    return tested == 0 ? 0.0 : static_cast<double>(gated) / tested;
  }
};

struct FusionResult {
  ScaleState state;
  FusionStats stats;
};

/// One recursive step. `prior` is absent on the bootstrap frame and
/// `observation` is absent on prior-only frames.
FusionResult fuse_frame(const ScaleState& previous, const WarpedPrior* prior,
                        const ScaleObservation* observation, const RelativeDepthMap& d_rel,
                        const Intrinsics& k, const FusionConfig& cfg);

}  // namespace scalefuse
