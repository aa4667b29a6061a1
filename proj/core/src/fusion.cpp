#include "scalefuse/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "scalefuse/stats.hpp"

namespace scalefuse {

void FusionConfig::validate() const {
  auto fail = [](const char* what) { throw Error(ErrorCode::kConfig, std::string("fusion: ") + what); };
  if (!(variance_scale > 0.0)) fail("variance_scale must be positive");
  if (!(gain_floor > 0.0 && gain_floor < 1.0)) fail("gain_floor must be in (0, 1)");
  if (!(gate > 0.0)) fail("gate must be positive");
  if (!(ema >= 0.0 && ema < 1.0)) fail("ema must be in [0, 1)");
  if (!(observation_variance_floor > 0.0)) fail("observation_variance_floor must be positive");
  if (!(init_variance_factor > 0.0) || !(fill_variance_factor > 0.0)) fail("variance factors must be positive");
  if (!(tolerance_floor > 0.0)) fail("tolerance_floor must be positive");
}

double prior_inflation(double rho_median, const Intrinsics& k) {
  return 1.0 + rho_median / (k.fx * k.fy);
}

ScalarMap inflate_prior(const ScalarMap& v_prior, double rho_median, const Intrinsics& k) {
  const double factor = prior_inflation(rho_median, k);
  ScalarMap out = v_prior;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out.valid(i)) out[i] = static_cast<float>(out[i] * factor);
  }
  return out;
}

double observation_variance(double rho, const Intrinsics& k, double variance_scale, double floor) {
  return std::max(floor, variance_scale * rho / (k.fx * k.fy));
}

ScalarMap observation_variance(const ScalarMap& rho, const Intrinsics& k, const FusionConfig& cfg) {
  ScalarMap out(rho.width(), rho.height());
  for (std::size_t i = 0; i < rho.size(); ++i) {
    if (!rho.valid(i)) continue;
    out.set(i, static_cast<float>(observation_variance(rho[i], k, cfg.variance_scale,
                                                       cfg.observation_variance_floor)));
  }
  return out;
}

GateResult innovation_gate(double s_obs, double s_prior, double v_obs, double v_prior, double gate) {
  GateResult r;
  const double diff = s_obs - s_prior;
  r.gamma = diff * diff / (v_prior + v_obs);
  if (r.gamma <= gate) {
    r.outcome = GateOutcome::kInlier;
  } else {
    r.outcome = v_obs < v_prior ? GateOutcome::kKeepObservation : GateOutcome::kKeepPrior;
  }
  return r;
}

double relative_discrepancy(double s_obs, double s_prior) {
  return std::abs(s_obs - s_prior) / s_obs;
}

double consistency_score(double s_obs, double s_prior, double tolerance) {
  const double delta = relative_discrepancy(s_obs, s_prior);
  return std::exp(-delta * delta / (2.0 * tolerance * tolerance));
}

std::optional<double> update_tolerance(std::vector<double> deltas, std::optional<double> previous,
                                       double ema, double floor) {
  if (deltas.empty()) return previous;
  const double mad = median_absolute_deviation(std::move(deltas));
  if (!previous) return std::max(mad, floor);
  return std::max(floor, ema * *previous + (1.0 - ema) * mad);
}

KalmanResult kalman_update(double s_prior, double v_prior, double s_obs, double v_obs,
                           double consistency, double gain_floor) {
  const double raw = v_prior / (v_prior + v_obs);
  const double gain = std::min(raw, gain_floor + (1.0 - gain_floor) * consistency);
  KalmanResult r;
  r.gain = gain;
  r.s = s_prior + gain * (s_obs - s_prior);
  r.v = (1.0 - gain) * (1.0 - gain) * v_prior + gain * gain * v_obs;
  return r;
}

ScaleObservation make_scale_observation(const Observation& obs, const RelativeDepthMap& d_rel,
                                        const Intrinsics& k, const FusionConfig& cfg) {
  require_same_shape(obs.z_tri, d_rel, "triangulated depth vs relative depth");
  const int w = d_rel.width();
  const int h = d_rel.height();
  ScaleObservation out{ScalarMap(w, h), ScalarMap(w, h), obs.sampson.median};
  for (std::size_t i = 0; i < d_rel.size(); ++i) {
    if (!obs.z_tri.valid(i) || !d_rel.valid(i) || !obs.sampson.rho.valid(i)) continue;
    const float s = obs.z_tri[i] / d_rel[i];
    if (!(s > 0.0f) || !std::isfinite(s)) continue;
    out.s_obs.set(i, s);
    out.v_obs.set(i, static_cast<float>(observation_variance(
                         obs.sampson.rho[i], k, cfg.variance_scale, cfg.observation_variance_floor)));
  }
  return out;
}

namespace {

FusionResult bootstrap(const ScaleState& previous, const ScaleObservation& observation,
                       const RelativeDepthMap& d_rel, const FusionConfig& cfg) {
  const int w = d_rel.width();
  const int h = d_rel.height();
  std::vector<float> scales;
  std::vector<float> variances;
  for (std::size_t i = 0; i < d_rel.size(); ++i) {
    if (!observation.s_obs.valid(i)) continue;
    scales.push_back(observation.s_obs[i]);
    variances.push_back(observation.v_obs[i]);
  }
  FusionResult r;
  r.state = previous;
  r.state.s = ScalarMap(w, h);
  r.state.v = ScalarMap(w, h);
  r.state.rho_median = observation.rho_median;
  r.state.frame_index = previous.frame_index + 1;
  if (scales.empty()) return r;
  const float global = lower_median(std::move(scales));
  const float init_var = static_cast<float>(
      cfg.init_variance_factor *
      std::max<double>(lower_median(std::move(variances)), cfg.observation_variance_floor));
  for (std::size_t i = 0; i < d_rel.size(); ++i) {
    if (!d_rel.valid(i)) continue;
    r.state.s.set(i, global);
    r.state.v.set(i, init_var);
  }
  r.stats.observation_only = r.state.s.valid_count();
  return r;
}

}  // namespace

FusionResult fuse_frame(const ScaleState& previous, const WarpedPrior* prior,
                        const ScaleObservation* observation, const RelativeDepthMap& d_rel,
                        const Intrinsics& k, const FusionConfig& cfg) {
  if (observation) require_same_shape(observation->s_obs, d_rel, "observation vs relative depth");
  if (prior) require_same_shape(prior->s_prior, d_rel, "prior vs relative depth");

  if (!previous.initialized() || !prior) {
    if (!observation) {
      FusionResult r;
      r.state = previous;
      r.state.s = ScalarMap(d_rel.width(), d_rel.height());
      r.state.v = ScalarMap(d_rel.width(), d_rel.height());
      return r;
    }
    return bootstrap(previous, *observation, d_rel, cfg);
  }

  const std::size_t n = d_rel.size();
  const double rho_median = observation ? observation->rho_median : previous.rho_median;
  const double inflation = prior_inflation(rho_median, k);

  auto has_prior = [&](std::size_t i) {
    return prior->s_prior.valid(i) && prior->v_prior.valid(i) && prior->s_prior[i] > 0.0f;
  };
  auto has_obs = [&](std::size_t i) { return observation && observation->s_obs.valid(i); };

  // Frame-level tolerance first; the per-pixel pass only reads it.
  std::optional<double> tolerance;
  if (previous.has_tolerance) tolerance = previous.tolerance;
  {
    std::vector<double> deltas;
    for (std::size_t i = 0; i < n; ++i) {
      if (has_prior(i) && has_obs(i)) {
        deltas.push_back(relative_discrepancy(observation->s_obs[i], prior->s_prior[i]));
      }
    }
    tolerance = update_tolerance(std::move(deltas), tolerance, cfg.ema, cfg.tolerance_floor);
  }
  const double sigma_e = tolerance.value_or(cfg.tolerance_floor);

  FusionResult r;
  r.state.s = ScalarMap(d_rel.width(), d_rel.height());
  r.state.v = ScalarMap(d_rel.width(), d_rel.height());
  r.state.tolerance = sigma_e;
  r.state.has_tolerance = tolerance.has_value();
  r.state.rho_median = rho_median;
  r.state.frame_index = previous.frame_index + 1;
  r.stats.inflation = inflation;

  std::size_t fused = 0, gated = 0, prior_only = 0, obs_only = 0;
#pragma omp parallel for schedule(static) reduction(+ : fused, gated, prior_only, obs_only)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const bool p = has_prior(i);
    const bool o = has_obs(i);
    if (!p && !o) continue;
    if (!o) {
      r.state.s.set(i, prior->s_prior[i]);
      r.state.v.set(i, static_cast<float>(prior->v_prior[i] * inflation));
      ++prior_only;
      continue;
    }
    const double s_obs = observation->s_obs[i];
    const double v_obs = observation->v_obs[i];
    if (!p) {
      r.state.s.set(i, static_cast<float>(s_obs));
      r.state.v.set(i, static_cast<float>(v_obs));
      ++obs_only;
      continue;
    }
    const double s_prior = prior->s_prior[i];
    const double v_prior = prior->v_prior[i] * inflation;
    const auto gate = innovation_gate(s_obs, s_prior, v_obs, v_prior, cfg.gate);
    if (gate.outcome == GateOutcome::kKeepObservation) {
      r.state.s.set(i, static_cast<float>(s_obs));
      r.state.v.set(i, static_cast<float>(v_obs));
      ++gated;
    } else if (gate.outcome == GateOutcome::kKeepPrior) {
      r.state.s.set(i, static_cast<float>(s_prior));
      r.state.v.set(i, static_cast<float>(v_prior));
      ++gated;
    } else {
      const double c = consistency_score(s_obs, s_prior, sigma_e);
      const auto upd = kalman_update(s_prior, v_prior, s_obs, v_obs, c, cfg.gain_floor);
      r.state.s.set(i, static_cast<float>(upd.s));
      r.state.v.set(i, static_cast<float>(std::max(upd.v, 1e-30)));
      ++fused;
    }
  }
  r.stats.fused = fused;
  r.stats.gated = gated;
  r.stats.prior_only = prior_only;
  r.stats.observation_only = obs_only;
  return r;
}

}  // namespace scalefuse
