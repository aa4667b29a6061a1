#include "scalefuse/config.hpp"

#include "json_util.hpp"

namespace scalefuse {

namespace {

using detail::Json;
using detail::StrictObject;

template <typename V>
void visit(V& v, RansacConfig& c) {
  v("max_iterations", c.max_iterations);
  v("min_sample_size", c.min_sample_size);
  v("flow_floor_px", c.flow_floor_px);
  v("static_flow_px", c.static_flow_px);
  v("mad_multiplier", c.mad_multiplier);
  v("target_inlier_ratio", c.target_inlier_ratio);
  v("relax_factor", c.relax_factor);
  v("tighten_factor", c.tighten_factor);
  v("min_threshold", c.min_threshold);
  v("max_threshold", c.max_threshold);
  v("early_exit_ratio", c.early_exit_ratio);
  v("min_inlier_ratio", c.min_inlier_ratio);
  v("angle_mad_multiplier", c.angle_mad_multiplier);
  v("min_angle_threshold", c.min_angle_threshold);
  v("validation_mad_multiplier", c.validation_mad_multiplier);
  v("cells_per_axis", c.cells_per_axis);
  v("depth_bins", c.depth_bins);
  v("per_group_cap", c.per_group_cap);
  v("huber_iterations", c.huber_iterations);
  v("degenerate_translation", c.degenerate_translation);
  v("min_baseline", c.min_baseline);
}

template <typename V>
void visit(V& v, TriangulationConfig& c) {
  v("min_ray_sine", c.min_ray_sine);
  v("synthetic_penalty", c.synthetic_penalty);
  v("min_valid_fraction", c.min_valid_fraction);
}

template <typename V>
void visit(V& v, FusionConfig& c) {
  v("variance_scale", c.variance_scale);
  v("gain_floor", c.gain_floor);
  v("gate", c.gate);
  v("ema", c.ema);
  v("observation_variance_floor", c.observation_variance_floor);
  v("init_variance_factor", c.init_variance_factor);
  v("fill_variance_factor", c.fill_variance_factor);
  v("tolerance_floor", c.tolerance_floor);
}

template <typename V>
void visit(V& v, SegmentationParams& c) {
  v("k", c.k);
  v("min_size", c.min_size);
  v("sigma", c.sigma);
  v("depth_weight", c.depth_weight);
}

template <typename V>
void visit(V& v, ConsolidationConfig& c) {
  v("min_evidence", c.min_evidence);
  v("evidence_fraction", c.evidence_fraction);
  v("max_fit_error", c.max_fit_error);
}

template <typename V>
void visit(V& v, OutlierSpec& c) {
  v("fraction", c.fraction);
  v("block_size", c.block_size);
  v("rotation_deg", c.rotation_deg);
  v("translation", c.translation);
}

template <typename V>
void visit(V& v, NoiseSpec& c) {
  v("flow_sigma_px", c.flow_sigma_px);
  v("baseline_rel_sigma", c.baseline_rel_sigma);
  v("depth_gain", c.depth_gain);
  v("depth_shift", c.depth_shift);
}

struct Reader {
  StrictObject& object;
  template <typename T>
  void operator()(const char* key, T& value) {
    object.read(key, value);
  }
};

struct Writer {
  Json& object;
  template <typename T>
  void operator()(const char* key, T& value) {
    object[key] = value;
  }
};

template <typename T>
void read_section(StrictObject& parent, const char* key, T& section) {
  const Json* child = parent.child(key);
  if (!child) return;
  StrictObject object(*child, parent.path(key));
  Reader reader{object};
  visit(reader, section);
  object.finish();
}

template <typename T>
Json write_section(T section) {
  Json j = Json::object();
  Writer writer{j};
  visit(writer, section);
  return j;
}

Json parse_text(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("config: ") + e.what());
  }
}

}  // namespace

DepthFormat parse_depth_format(const std::string& name) {
  if (name == "pfm") return DepthFormat::kPfm;
  if (name == "png16") return DepthFormat::kPng16;
  throw Error(ErrorCode::kConfig, "unknown depth format '" + name + "' (pfm|png16)");
}

std::string to_string(DepthFormat format) { return format == DepthFormat::kPfm ? "pfm" : "png16"; }

void PipelineConfig::validate() const {
  ransac.validate();
  triangulation.validate();
  fusion.validate();
  segmentation.validate();
  consolidation.validate();
  if (!(near_max > 0.0 && far_max > near_max)) throw Error(ErrorCode::kConfig, "metrics: need 0 < near_max < far_max");
  if (threads < 0) throw Error(ErrorCode::kConfig, "threads must be >= 0");
}

PipelineConfig parse_pipeline_config(const std::string& text) {
  const Json json = parse_text(text);
  PipelineConfig c;
  StrictObject top(json, "");
  top.read("seed", c.seed);
  top.read("threads", c.threads);
  read_section(top, "ransac", c.ransac);
  read_section(top, "triangulation", c.triangulation);
  read_section(top, "fusion", c.fusion);
  read_section(top, "segmentation", c.segmentation);
  read_section(top, "consolidation", c.consolidation);
  if (const Json* m = top.child("metrics")) {
    StrictObject o(*m, "metrics");
    o.read("near_max", c.near_max);
    o.read("far_max", c.far_max);
    o.finish();
  }
  if (const Json* a = top.child("ablation")) {
    StrictObject o(*a, "ablation");
    o.read("fusion", c.enable_fusion);
    o.read("segmentation", c.enable_segmentation);
    o.finish();
  }
  if (const Json* out = top.child("output")) {
    StrictObject o(*out, "output");
    std::string format = to_string(c.output.depth_format);
    o.read("depth_format", format);
    c.output.depth_format = parse_depth_format(format);
    o.read("depth", c.output.depth);
    o.read("pointcloud", c.output.pointcloud);
    o.read("metrics", c.output.metrics);
    o.finish();
  }
  top.finish();
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  const Json json = detail::parse_json_file(path);
  try {
    return parse_pipeline_config(json.dump());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string dump_pipeline_config(const PipelineConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["ransac"] = write_section(c.ransac);
  j["triangulation"] = write_section(c.triangulation);
  j["fusion"] = write_section(c.fusion);
  j["segmentation"] = write_section(c.segmentation);
  j["consolidation"] = write_section(c.consolidation);
  j["metrics"] = {{"near_max", c.near_max}, {"far_max", c.far_max}};
  j["ablation"] = {{"fusion", c.enable_fusion}, {"segmentation", c.enable_segmentation}};
  j["output"] = {{"depth_format", to_string(c.output.depth_format)},
                 {"depth", c.output.depth},
                 {"pointcloud", c.output.pointcloud},
                 {"metrics", c.output.metrics}};
  return j.dump(2);
}

SceneOptions parse_scene_options(const std::string& text) {
  const Json json = parse_text(text);
  SceneOptions s;
  StrictObject top(json, "scene");
  top.read("width", s.width);
  top.read("height", s.height);
  top.read("frames", s.frames);
  top.read("seed", s.seed);
  top.read("panels", s.panels);
  top.read("piecewise_scale", s.piecewise_scale);
  top.read("height_field", s.height_field);
  top.read("alpha", s.alpha);
  top.read("forward_step", s.forward_step);
  top.read("lateral_amplitude", s.lateral_amplitude);
  top.read("rotation_amplitude_deg", s.rotation_amplitude_deg);
  read_section(top, "outliers", s.outliers);
  read_section(top, "noise", s.noise);
  top.finish();
  return s;
}

SceneOptions load_scene_options(const std::filesystem::path& path) {
  const Json json = detail::parse_json_file(path);
  try {
    return parse_scene_options(json.dump());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string dump_scene_options(const SceneOptions& s) {
  Json j;
  j["width"] = s.width;
  j["height"] = s.height;
  j["frames"] = s.frames;
  j["seed"] = s.seed;
  j["panels"] = s.panels;
  j["piecewise_scale"] = s.piecewise_scale;
  j["height_field"] = s.height_field;
  j["alpha"] = s.alpha;
  j["forward_step"] = s.forward_step;
  j["lateral_amplitude"] = s.lateral_amplitude;
  j["rotation_amplitude_deg"] = s.rotation_amplitude_deg;
  j["outliers"] = write_section(s.outliers);
  j["noise"] = write_section(s.noise);
  return j.dump(2);
}

}  // namespace scalefuse
