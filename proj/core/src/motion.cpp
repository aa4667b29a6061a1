#include "scalefuse/motion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "scalefuse/random.hpp"
#include "scalefuse/stats.hpp"

namespace scalefuse {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kHypothesisBatch = 16;

void fail_config(const char* what) { throw Error(ErrorCode::kConfig, std::string("ransac: ") + what); }

Vec2 to_pixels(const Vec2& normalized, const Intrinsics& k) {
  return {normalized.x() * k.fx, normalized.y() * k.fy};
}

Vec2 motion_field_prediction(const MotionSample& s, const Vec3& omega, const Vec3& v) {
  const auto m = motion_field_matrices(s.x, s.y);
  return m.b * omega + (m.a * v) / s.depth;
}

void fill_scale(MotionHypothesis& h, double baseline, const RansacConfig& cfg) {
  h.baseline = baseline;
  const double norm = h.v.norm();
  h.direction = norm > 0.0 ? Vec3(h.v / norm) : Vec3(Vec3::UnitZ());
  h.alpha = 0.0;
  if (baseline >= cfg.min_baseline && norm >= cfg.degenerate_translation) {
    h.alpha = baseline / norm;
  }
}

// Inlier mask, count and cell coverage under threshold eta.
void classify(MotionHypothesis& h, std::span<const MotionSample> samples,
              const ResidualStats& stats, double eta, int total_cells) {
  const std::size_t n = samples.size();
  h.threshold = eta;
  h.angle_threshold = stats.angle_threshold;
  h.inliers.assign(n, 0);
  h.inlier_count = 0;
  std::vector<std::uint8_t> cell_hit(static_cast<std::size_t>(total_cells), 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (stats.residuals[i] <= eta && stats.direction_ok[i]) {
      h.inliers[i] = 1;
      ++h.inlier_count;
      cell_hit[static_cast<std::size_t>(samples[i].cell)] = 1;
    }
  }
  h.covered_cells = static_cast<int>(std::count(cell_hit.begin(), cell_hit.end(), 1));
  h.total_cells = 0;
}

bool better(const MotionHypothesis& a, const MotionHypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.inlier_count > b.inlier_count;
}

}  // namespace

void RansacConfig::validate() const {
  if (min_sample_size < 3) fail_config("min_sample_size must be >= 3");
  if (max_iterations < 1) fail_config("max_iterations must be >= 1");
  if (cells_per_axis < 1 || depth_bins < 1 || per_group_cap < 1) fail_config("stratification sizes must be >= 1");
  if (huber_iterations < 0) fail_config("huber_iterations must be >= 0");
  for (double f : {flow_floor_px, mad_multiplier, target_inlier_ratio, relax_factor, tighten_factor,
                   min_threshold, max_threshold, early_exit_ratio, angle_mad_multiplier,
                   validation_mad_multiplier,
                   min_angle_threshold, degenerate_translation, min_baseline}) {
    if (!(f > 0.0)) fail_config("factors and thresholds must be positive");
  }
  if (static_flow_px < 0.0 || min_inlier_ratio < 0.0) fail_config("floors must be non-negative");
  if (min_threshold > max_threshold) fail_config("min_threshold > max_threshold");
}

std::vector<MotionSample> stratified_sample(const FlowField& flow, const RelativeDepthMap& d_rel,
                                            const Intrinsics& k, const RansacConfig& cfg,
                                            std::uint64_t seed) {
  require_same_shape(flow, d_rel, "flow vs relative depth");
  const int w = flow.width();
  const int h = flow.height();
  const int cells = cfg.cells_per_axis;
  const int bins = cfg.depth_bins;
  const double static2 = cfg.static_flow_px * cfg.static_flow_px;

  auto usable = [&](std::size_t i) {
    if (!flow.valid(i) || !d_rel.valid(i)) return false;
    const auto f = flow[i];
    if (!std::isfinite(f.u) || !std::isfinite(f.v)) return false;
    const double d = d_rel[i];
    if (!std::isfinite(d) || d <= 0.0) return false;
    const double m2 = double(f.u) * f.u + double(f.v) * f.v;
    return m2 >= static2 && m2 > 0.0;
  };

  // Candidate scan on a sub-grid sized so every group has a few times its cap.
  const double wanted = 4.0 * cells * cells * bins * cfg.per_group_cap;
  int stride = std::max(1, static_cast<int>(std::floor(std::sqrt(double(w) * h / wanted))));

  std::vector<std::size_t> candidates;
  auto scan = [&](int step) {
    candidates.clear();
    for (int v = step / 2; v < h; v += step) {
      for (int u = step / 2; u < w; u += step) {
        const std::size_t i = flow.index(u, v);
        if (usable(i)) candidates.push_back(i);
      }
    }
  };
  scan(stride);
  if (stride > 1 && candidates.size() < static_cast<std::size_t>(2 * cfg.min_sample_size)) {
    stride = 1;
    scan(stride);
  }
  if (candidates.size() < static_cast<std::size_t>(2 * cfg.min_sample_size)) {
    throw Error(ErrorCode::kInsufficientSamples,
                "stratified_sample: only " + std::to_string(candidates.size()) +
                    " usable flow vectors");
  }

  double log_min = kInf;
  double log_max = -kInf;
  for (auto i : candidates) {
    const double l = std::log(double(d_rel[i]));
    log_min = std::min(log_min, l);
    log_max = std::max(log_max, l);
  }
  const double bin_width = (log_max - log_min) / bins;

  const int groups = cells * cells * bins;
  std::vector<std::vector<std::size_t>> grouped(static_cast<std::size_t>(groups));
  for (auto i : candidates) {
    const int u = static_cast<int>(i % w);
    const int v = static_cast<int>(i / w);
    const int cell = std::min(cells - 1, v * cells / h) * cells + std::min(cells - 1, u * cells / w);
    int bin = 0;
    if (bin_width > 0.0) {
      bin = std::min(bins - 1, static_cast<int>((std::log(double(d_rel[i])) - log_min) / bin_width));
    }
    grouped[static_cast<std::size_t>(cell * bins + bin)].push_back(i);
  }

  std::vector<MotionSample> samples;
  samples.reserve(static_cast<std::size_t>(groups * cfg.per_group_cap));
  const auto cap = static_cast<std::size_t>(cfg.per_group_cap);
  for (int g = 0; g < groups; ++g) {
    auto& members = grouped[static_cast<std::size_t>(g)];
    if (members.size() > cap) {
      auto rng = make_rng(seed, static_cast<std::uint64_t>(g));
      for (std::size_t j = 0; j < cap; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, members.size() - 1);
        std::swap(members[j], members[pick(rng)]);
      }
      members.resize(cap);
      std::sort(members.begin(), members.end());
    }
    for (auto i : members) {
      MotionSample s;
      s.pixel = i;
      const int u = static_cast<int>(i % w);
      const int v = static_cast<int>(i / w);
      s.x = (u - k.cx) / k.fx;
      s.y = (v - k.cy) / k.fy;
      const auto f = flow[i];
      s.flow_px = Vec2(f.u, f.v);
      s.flow = Vec2(f.u / k.fx, f.v / k.fy);
      s.flow_norm_px = s.flow_px.norm();
      s.depth = d_rel[i];
      s.cell = g / bins;
      s.depth_bin = g % bins;
      samples.push_back(s);
    }
  }
  return samples;
}

LinearSystem build_linear_system(std::span<const MotionSample> samples) {
  std::vector<double> ones(samples.size(), 1.0);
  return build_weighted_system(samples, ones);
}

LinearSystem build_weighted_system(std::span<const MotionSample> samples,
                                   std::span<const double> weights) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  LinearSystem sys;
  sys.design.resize(2 * n, 6);
  sys.rhs.resize(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const double w = std::sqrt(weights[static_cast<std::size_t>(i)]);
    const auto m = motion_field_matrices(s.x, s.y);
    sys.design.block<2, 3>(2 * i, 0) = w * m.b;
    sys.design.block<2, 3>(2 * i, 3) = (w / s.depth) * m.a;
    sys.rhs.segment<2>(2 * i) = w * s.flow;
  }
  return sys;
}

MotionSolution solve_motion(const LinearSystem& system) {
  if (system.design.rows() < 6) {
    throw Error(ErrorCode::kRankDeficient, "solve_motion: fewer than 6 equations");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(system.design);
  qr.setThreshold(1e-10);
  if (qr.rank() < 6) {
    throw Error(ErrorCode::kRankDeficient,
                "solve_motion: design rank " + std::to_string(qr.rank()) + " < 6");
  }
  const Eigen::VectorXd x = qr.solve(system.rhs);
  MotionSolution out;
  out.omega = x.head<3>();
  out.v = x.tail<3>();
  out.residual_norm = (system.design * x - system.rhs).norm();
  return out;
}

double design_conditioning(const LinearSystem& system) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(system.design);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0.0;
  return s(s.size() - 1) / s(0);
}

ScaleRecovery recover_scale(const Vec3& v, double baseline, double min_baseline,
                            double degenerate_translation) {
  if (!(baseline >= min_baseline)) {
    throw Error(ErrorCode::kZeroBaseline,
                "recover_scale: baseline " + std::to_string(baseline) + " m below floor");
  }
  const double norm = v.norm();
  if (!(norm >= degenerate_translation)) {
    throw Error(ErrorCode::kDegenerateTranslation, "recover_scale: |V| below floor");
  }
  ScaleRecovery out;
  out.direction = v / norm;
  out.alpha = baseline / norm;
  out.translation = baseline * out.direction;
  return out;
}

double normalized_residual(const Vec2& observed_px, const Vec2& predicted_px, double tau) {
  return (observed_px - predicted_px).norm() / std::max(observed_px.norm(), tau);
}

double angular_deviation(const Vec2& observed, const Vec2& predicted) {
  const double denom = observed.norm() * predicted.norm();
  if (denom <= 0.0) return 0.0;
  return std::acos(std::clamp(observed.dot(predicted) / denom, -1.0, 1.0));
}

namespace {

// acos to within 2e-8 rad (Abramowitz and Stegun 4.4.46).
double fast_acos(double x) {
  const double a = std::min(std::abs(x), 1.0);
  double p = -0.0012624911;
  for (double c : {0.0066700901, -0.0170881256, 0.0308918810, -0.0501743046, 0.0889789874,
                   -0.2145988016, 1.5707963050}) {
    p = p * a + c;
  }
  const double r = std::sqrt(1.0 - a) * p;
  return x < 0.0 ? std::numbers::pi - r : r;
}

bool within_cone(const Vec2& observed_px, const Vec2& predicted_px, double cos_threshold,
                 double min_flow_px) {
  const double no = observed_px.norm();
  const double np = predicted_px.norm();
  if (no < min_flow_px || np < min_flow_px) return true;
  const double denom = no * np;
  if (denom <= 0.0) return true;
  return std::clamp(observed_px.dot(predicted_px) / denom, -1.0, 1.0) >= cos_threshold;
}

double cone_cosine(double threshold) { return threshold >= std::numbers::pi ? -2.0 : std::cos(threshold); }

}  // namespace

bool directional_gate(const Vec2& observed_px, const Vec2& predicted_px, double threshold,
                      double min_flow_px) {
  return within_cone(observed_px, predicted_px, cone_cosine(threshold), min_flow_px);
}

double angle_threshold(std::vector<double> deviations, const RansacConfig& cfg) {
  if (deviations.empty()) return cfg.min_angle_threshold;
  const auto spread = robust_spread(std::move(deviations));
  return std::max(cfg.min_angle_threshold, spread.median + cfg.angle_mad_multiplier * spread.mad);
}

Pose MotionHypothesis::pose() const {
  return Pose::from_direction(rotation, direction, alpha > 0.0 ? baseline : 0.0);
}

std::optional<Vec2> predict_sample_flow(const MotionSample& s, const MotionHypothesis& h,
                                        const Intrinsics& k) {
  if (h.model == FlowModel::kMotionField) {
    return to_pixels(motion_field_prediction(s, h.omega, h.v), k);
  }
  const auto p = predict_rigid_flow(s.x, s.y, s.depth, h.rotation, h.v);
  if (!p) return std::nullopt;
  return to_pixels(*p, k);
}

ResidualStats evaluate_hypothesis(std::span<const MotionSample> samples,
                                  const MotionHypothesis& h, const Intrinsics& k,
                                  const RansacConfig& cfg) {
  const std::size_t n = samples.size();
  ResidualStats out;
  out.residuals.assign(n, kInf);
  out.direction_ok.assign(n, 0);
  std::vector<double> deviations;
  std::vector<double> gated(n, -1.0);
  const double gate_flow = 2.0 * cfg.flow_floor_px;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    const auto pred = predict_sample_flow(s, h, k);
    if (!pred) continue;
    out.residuals[i] = normalized_residual(s.flow_px, *pred, cfg.flow_floor_px);
    const double pred_norm = pred->norm();
    if (s.flow_norm_px >= gate_flow && pred_norm >= cfg.static_flow_px) {
      gated[i] = fast_acos(s.flow_px.dot(*pred) / (s.flow_norm_px * pred_norm));
      deviations.push_back(gated[i]);
    }
  }
  out.angle_threshold = angle_threshold(std::move(deviations), cfg);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isinf(out.residuals[i])) continue;
    out.direction_ok[i] = gated[i] < 0.0 || gated[i] <= out.angle_threshold;
  }
  return out;
}

MotionHypothesis ransac_consensus(std::span<const MotionSample> samples, double baseline,
                                  const Intrinsics& k, const RansacConfig& cfg,
                                  std::uint64_t seed) {
  const std::size_t n = samples.size();
  const auto m = static_cast<std::size_t>(cfg.min_sample_size);
  if (n < m) {
    throw Error(ErrorCode::kInsufficientSamples, "ransac: fewer samples than the minimal set");
  }
  int max_cell = 0;
  for (const auto& s : samples) max_cell = std::max(max_cell, s.cell);
  std::vector<std::uint8_t> nonempty(static_cast<std::size_t>(max_cell + 1), 0);
  for (const auto& s : samples) nonempty[static_cast<std::size_t>(s.cell)] = 1;
  const int total_cells = static_cast<int>(std::count(nonempty.begin(), nonempty.end(), 1));
  const int mask_cells = max_cell + 1;

  struct Candidate {
    bool ok = false;
    MotionHypothesis hypothesis;
    ResidualStats stats;
  };

  auto generate = [&](int index) {
    Candidate c;
    auto rng = make_rng(seed, 0x100000ull + static_cast<std::uint64_t>(index));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> chosen;
    chosen.reserve(m);
    while (chosen.size() < m) {
      const std::size_t j = pick(rng);
      if (std::find(chosen.begin(), chosen.end(), j) == chosen.end()) chosen.push_back(j);
    }
    std::vector<MotionSample> subset;
    subset.reserve(m);
    for (auto j : chosen) subset.push_back(samples[j]);
    MotionSolution sol;
    try {
      sol = solve_motion(build_linear_system(subset));
    } catch (const Error&) {
      return c;
    }
    if (!sol.omega.allFinite() || !sol.v.allFinite()) return c;
    c.hypothesis.model = FlowModel::kMotionField;
    c.hypothesis.omega = sol.omega;
    c.hypothesis.rotation = rotation_from_vector(sol.omega);
    c.hypothesis.v = sol.v;
    c.stats = evaluate_hypothesis(samples, c.hypothesis, k, cfg);
    c.ok = true;
    return c;
  };

  std::vector<Candidate> evaluated;
  evaluated.reserve(static_cast<std::size_t>(cfg.max_iterations));
  double eta = 0.0;
  bool eta_initialized = false;
  int lead = -1;
  bool done = false;
  for (int start = 0; start < cfg.max_iterations && !done; start += kHypothesisBatch) {
    const int count = std::min(kHypothesisBatch, cfg.max_iterations - start);
    std::vector<Candidate> batch(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(static)
    for (int j = 0; j < count; ++j) batch[static_cast<std::size_t>(j)] = generate(start + j);

    // Sequential pass keeps eta adaptation independent of the thread count.
    for (auto& c : batch) {
      if (!c.ok) continue;
      if (!eta_initialized) {
        std::vector<double> finite;
        finite.reserve(n);
        for (double e : c.stats.residuals) {
          if (std::isfinite(e)) finite.push_back(e);
        }
        const auto spread = robust_spread(std::move(finite));
        eta = std::clamp(spread.median + cfg.mad_multiplier * spread.mad, cfg.min_threshold,
                         cfg.max_threshold);
        eta_initialized = true;
      }
      classify(c.hypothesis, samples, c.stats, eta, mask_cells);
      // eta follows the best-supported hypothesis so far; most random draws
      // are poor and would otherwise drag it up to max_threshold.
      int lead_count = c.hypothesis.inlier_count;
      if (lead >= 0) {
        auto& l = evaluated[static_cast<std::size_t>(lead)];
        classify(l.hypothesis, samples, l.stats, eta, mask_cells);
        lead_count = std::max(lead_count, l.hypothesis.inlier_count);
      }
      if (lead < 0 || c.hypothesis.inlier_count >= lead_count) {
        lead = static_cast<int>(evaluated.size());
      }
      const double ratio = static_cast<double>(lead_count) / n;
      evaluated.push_back(std::move(c));
      // Only a fully tightened threshold can end the search early; a relaxed
      // one admits almost anything.
      if (ratio >= cfg.early_exit_ratio && eta <= cfg.min_threshold) {
        done = true;
        break;
      }
      eta = ratio < cfg.target_inlier_ratio
                ? std::min(cfg.max_threshold, eta * cfg.relax_factor)
                : std::max(cfg.min_threshold, eta * cfg.tighten_factor);
    }
  }
  if (evaluated.empty()) {
    throw Error(ErrorCode::kNoConsensus, "ransac: every minimal sample was degenerate");
  }

  // Rescore every hypothesis under the final threshold so scores compare.
  const double final_eta = done ? evaluated.back().hypothesis.threshold : eta;
  MotionHypothesis best;
  bool have_best = false;
  for (auto& c : evaluated) {
    classify(c.hypothesis, samples, c.stats, final_eta, mask_cells);
    c.hypothesis.total_cells = total_cells;
    c.hypothesis.score = static_cast<double>(c.hypothesis.inlier_count) *
                         c.hypothesis.covered_cells / std::max(1, total_cells);
    if (!have_best || better(c.hypothesis, best)) {
      best = c.hypothesis;
      have_best = true;
    }
  }
  if (best.inlier_ratio() < cfg.min_inlier_ratio ||
      best.inlier_count < cfg.min_sample_size) {
    throw Error(ErrorCode::kNoConsensus,
                "ransac: best inlier ratio " + std::to_string(best.inlier_ratio()) +
                    " below floor");
  }
  fill_scale(best, baseline, cfg);
  return best;
}

namespace {

double huber(double e, double eta) { return e <= eta ? 0.5 * e * e : eta * (e - 0.5 * eta); }

struct RigidTerm {
  bool ok = false;
  Vec2 residual_px = Vec2::Zero();  // observed - predicted
  double normalizer = 1.0;
  Eigen::Matrix<double, 2, 6> jacobian_px;  // d prediction / d [delta; dV]
};

RigidTerm rigid_term(const MotionSample& s, const Mat3& rotation, const Vec3& v,
                     const Intrinsics& k, double tau) {
  RigidTerm t;
  const Vec3 ray(s.x, s.y, 1.0);
  const Vec3 q = rotation.transpose() * (ray - v / s.depth);
  if (!(q.z() > 1e-12)) return t;
  const double iz = 1.0 / q.z();
  Eigen::Matrix<double, 2, 3> dproj;
  dproj << iz, 0.0, -q.x() * iz * iz, 0.0, iz, -q.y() * iz * iz;
  Eigen::Matrix<double, 3, 6> dq;
  dq.leftCols<3>() = skew(q);  // R <- R exp([delta]x)
  dq.rightCols<3>() = -rotation.transpose() / s.depth;
  Eigen::Matrix<double, 2, 6> j = dproj * dq;
  j.row(0) *= k.fx;
  j.row(1) *= k.fy;
  const Vec2 pred((q.x() * iz - s.x) * k.fx, (q.y() * iz - s.y) * k.fy);
  t.ok = true;
  t.residual_px = s.flow_px - pred;
  t.normalizer = std::max(s.flow_norm_px, tau);
  t.jacobian_px = j;
  return t;
}

double rigid_cost(std::span<const MotionSample> samples, std::span<const std::size_t> active,
                  const Mat3& rotation, const Vec3& v, const Intrinsics& k, double tau,
                  double eta) {
  double cost = 0.0;
  for (auto i : active) {
    const auto t = rigid_term(samples[i], rotation, v, k, tau);
    if (!t.ok) return kInf;
    cost += huber(t.residual_px.norm() / t.normalizer, eta);
  }
  return cost;
}

}  // namespace

double huber_cost(std::span<const MotionSample> samples, const MotionHypothesis& h,
                  const Intrinsics& k, const RansacConfig& cfg) {
  double cost = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (h.inliers.empty() || !h.inliers[i]) continue;
    const auto pred = predict_sample_flow(samples[i], h, k);
    if (!pred) return kInf;
    cost += huber(normalized_residual(samples[i].flow_px, *pred, cfg.flow_floor_px), h.threshold);
  }
  return cost;
}

MotionHypothesis irls_refine(std::span<const MotionSample> samples,
                             const MotionHypothesis& hypothesis, const Intrinsics& k,
                             const RansacConfig& cfg) {
  if (hypothesis.inlier_count < cfg.min_sample_size ||
      hypothesis.inliers.size() != samples.size()) {
    throw Error(ErrorCode::kRankDeficient, "irls_refine: too few inliers");
  }
  const double tau = cfg.flow_floor_px;
  const double eta = hypothesis.threshold;
  int max_cell = 0;
  for (const auto& s : samples) max_cell = std::max(max_cell, s.cell);

  MotionHypothesis current = hypothesis;
  current.model = FlowModel::kRigid;
  if (hypothesis.model != FlowModel::kRigid) current.rotation = rotation_from_vector(hypothesis.omega);
  const Mat3 start_rotation = current.rotation;
  const Vec3 start_v = current.v;

  auto active_set = [&](const MotionHypothesis& h) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (h.inliers[i]) active.push_back(i);
    }
    return active;
  };
  // Inliers are reselected around each estimate; a fixed set chosen around a
  // noisy hypothesis pins the refinement to it.
  auto reclassify = [&](MotionHypothesis& h) {
    const auto stats = evaluate_hypothesis(samples, h, k, cfg);
    classify(h, samples, stats, eta, max_cell + 1);
  };

  std::vector<std::size_t> active = active_set(current);
  for (int it = 0; it < cfg.huber_iterations; ++it) {
    if (active.size() < static_cast<std::size_t>(cfg.min_sample_size)) break;
    double cost = rigid_cost(samples, active, current.rotation, current.v, k, tau, eta);
    if (!std::isfinite(cost)) break;
    const auto rows = static_cast<Eigen::Index>(2 * active.size());
    Eigen::MatrixXd j(rows, 6);
    Eigen::VectorXd r(rows);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const auto t = rigid_term(samples[active[a]], current.rotation, current.v, k, tau);
      const double e = t.residual_px.norm() / t.normalizer;
      const double w = e <= eta ? 1.0 : eta / e;
      const double scale = std::sqrt(w);
      const auto row = static_cast<Eigen::Index>(2 * a);
      j.block<2, 6>(row, 0) = scale * t.jacobian_px;
      r.segment<2>(row) = scale * t.residual_px;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(j);
    qr.setThreshold(1e-12);
    if (qr.rank() < 6) {
      throw Error(ErrorCode::kRankDeficient, "irls_refine: weighted system rank < 6");
    }
    const Eigen::Matrix<double, 6, 1> step = qr.solve(r);
    if (!step.allFinite()) break;
    current.rotation = current.rotation * rotation_from_vector(step.head<3>());
    current.v += step.tail<3>();
    const auto previous = current.inliers;
    reclassify(current);
    if (current.inliers == previous && step.norm() < 1e-12) break;
    active = active_set(current);
  }
  // Re-orthonormalize after accumulated products.
  const Eigen::JacobiSVD<Mat3> svd(current.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  current.rotation = svd.matrixU() * svd.matrixV().transpose();
  reclassify(current);
  active = active_set(current);
  if (rigid_cost(samples, active, current.rotation, current.v, k, tau, eta) >
      rigid_cost(samples, active, start_rotation, start_v, k, tau, eta)) {
    current.rotation = start_rotation;
    current.v = start_v;
    reclassify(current);
  }
  current.omega = vector_from_rotation(current.rotation);
  fill_scale(current, hypothesis.baseline, cfg);
  std::vector<double> finite;
  finite.reserve(samples.size());
  for (double e : evaluate_hypothesis(samples, current, k, cfg).residuals) {
    if (std::isfinite(e)) finite.push_back(e);
  }
  current.validation_threshold = eta;
  if (!finite.empty()) {
    const auto spread = robust_spread(std::move(finite));
    current.validation_threshold = std::clamp(spread.median + cfg.validation_mad_multiplier * spread.mad,
                                              eta, std::max(eta, cfg.max_threshold));
  }
  current.total_cells = hypothesis.total_cells;
  current.score = static_cast<double>(current.inlier_count) * current.covered_cells /
                  std::max(1, current.total_cells);
  return current;
}

MotionHypothesis ransac_motion(std::span<const MotionSample> samples, double baseline,
                               const Intrinsics& k, const RansacConfig& cfg,
                               std::uint64_t seed) {
  return irls_refine(samples, ransac_consensus(samples, baseline, k, cfg, seed), k, cfg);
}

FusedFlow fuse_flow(const FlowField& flow, const RelativeDepthMap& d_rel, const Intrinsics& k,
                    const MotionHypothesis& h, const RansacConfig& cfg) {
  require_same_shape(flow, d_rel, "flow vs relative depth");
  const int w = flow.width();
  const int height = flow.height();
  FusedFlow out;
  out.flow = FlowField(w, height);
  out.source = PixelGridMap<FlowSource>(w, height, FlowSource::kInvalid, true);
  const double gate_flow = 2.0 * cfg.flow_floor_px;
  const double eta = h.validation_threshold > 0.0 ? h.validation_threshold : h.threshold;
  const double cos_angle = cone_cosine(h.angle_threshold);
  std::size_t observed = 0;
  std::size_t synthetic = 0;

#pragma omp parallel for schedule(static) reduction(+ : observed, synthetic)
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < w; ++u) {
      const std::size_t i = flow.index(u, v);
      if (!d_rel.valid(i)) continue;
      MotionSample s;
      s.x = (u - k.cx) / k.fx;
      s.y = (v - k.cy) / k.fy;
      s.depth = d_rel[i];
      const auto pred = predict_sample_flow(s, h, k);
      if (!pred) continue;
      bool keep = false;
      if (flow.valid(i)) {
        const auto f = flow[i];
        const Vec2 obs(f.u, f.v);
        if (obs.allFinite()) {
          const double e = normalized_residual(obs, *pred, cfg.flow_floor_px);
          keep = e <= eta && within_cone(obs, *pred, cos_angle, gate_flow);
        }
      }
      if (keep) {
        out.flow.set(i, flow[i]);
        out.source[i] = FlowSource::kObserved;
        ++observed;
      } else {
        out.flow.set(i, FlowVector{static_cast<float>(pred->x()), static_cast<float>(pred->y())});
        out.source[i] = FlowSource::kSynthetic;
        ++synthetic;
      }
    }
  }
  out.observed = observed;
  out.synthetic = synthetic;
  return out;
}

}  // namespace scalefuse
