#include "smlm/config.hpp"

#include "json_fields.hpp"

namespace smlm {

namespace fs = std::filesystem;
using detail::Fields;

namespace {

template <typename Fn>
void checked(const std::string& where, Fn&& fn)
{
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw IoError(IoErrc::BadConfig, where + ": " + e.what());
  }
}

void read_prior(const Json& doc, SimulationConfig& sim)
{
  Fields f(doc, "prior");
  PriorConfig& p = sim.prior;
  f.get("p_on", p.p_on);
  f.get("p_off", p.p_off);
  f.get("z_sigma", p.z_sigma);
  f.get("max_brightness", p.max_brightness);
  f.get("brightness_min_fraction", p.brightness_min_fraction);
  f.get("width", p.width);
  f.get("height", p.height);
  f.get("n_frames", p.n_frames);
  f.get("focal_plane_z", p.focal_plane_z);
  f.get("pixel_size", p.pixel_size);
  f.get("constant_brightness", p.constant_brightness);
  f.get("lls_dx", sim.lls_dx);
  f.get("lls_dz", sim.lls_dz);
  f.get("oversample", sim.oversample);
  f.finish();
  checked("prior", [&] { p.validate(); });
  if (sim.oversample < 1)
    f.fail("'oversample' must be at least 1");
}

Json prior_to_json(const SimulationConfig& sim)
{
  const PriorConfig& p = sim.prior;
  return {{"p_on", p.p_on},
          {"p_off", p.p_off},
          {"z_sigma", p.z_sigma},
          {"max_brightness", p.max_brightness},
          {"brightness_min_fraction", p.brightness_min_fraction},
          {"width", p.width},
          {"height", p.height},
          {"n_frames", p.n_frames},
          {"focal_plane_z", p.focal_plane_z},
          {"pixel_size", p.pixel_size},
          {"constant_brightness", p.constant_brightness},
          {"lls_dx", sim.lls_dx},
          {"lls_dz", sim.lls_dz},
          {"oversample", sim.oversample}};
}

LocalizerConfig read_localizer(const Json& doc)
{
  Fields f(doc, "localizer");
  LocalizerConfig c;
  f.get("threshold_k", c.threshold_k);
  f.get("smoothing_sigma", c.smoothing_sigma);
  f.get("roi_size", c.roi_size);
  f.get("max_iterations", c.max_iterations);
  f.get("z_starts", c.z_starts);
  f.get("z_limit", c.z_limit);
  f.get("max_fit_excess", c.max_fit_excess);
  f.finish();
  checked("localizer", [&] { c.validate(); });
  return c;
}

Json localizer_to_json(const LocalizerConfig& c)
{
  return {{"threshold_k", c.threshold_k},   {"smoothing_sigma", c.smoothing_sigma}, {"roi_size", c.roi_size},
          {"max_iterations", c.max_iterations}, {"z_starts", c.z_starts},          {"z_limit", c.z_limit},
          {"max_fit_excess", c.max_fit_excess}};
}

PostprocessConfig read_postprocess(const Json& doc)
{
  Fields f(doc, "postprocess");
  PostprocessConfig c;
  f.get("peak_threshold", c.nms.peak_threshold);
  f.get("aggregate_threshold", c.nms.aggregate_threshold);
  f.get("debias_bins", c.debias_bins);
  f.get("filter_fraction", c.filter_fraction);
  f.get("group_radius", c.group_radius);
  f.get("sigma_floor", c.sigma_floor);
  f.finish();
  if (!(c.nms.peak_threshold >= 0 && c.nms.peak_threshold <= 1 && c.nms.aggregate_threshold >= 0))
    f.fail("NMS thresholds must be probabilities");
  if (c.debias_bins < 1)
    f.fail("'debias_bins' must be at least 1");
  if (!(c.filter_fraction >= 0 && c.filter_fraction < 1))
    f.fail("'filter_fraction' must lie in [0, 1)");
  if (!(c.group_radius >= 0))
    f.fail("'group_radius' must be non-negative");
  if (!(c.sigma_floor >= 0))
    f.fail("'sigma_floor' must be non-negative");
  return c;
}

Json postprocess_to_json(const PostprocessConfig& c)
{
  return {{"peak_threshold", c.nms.peak_threshold},
          {"aggregate_threshold", c.nms.aggregate_threshold},
          {"debias_bins", c.debias_bins},
          {"filter_fraction", c.filter_fraction},
          {"group_radius", c.group_radius},
          {"sigma_floor", c.sigma_floor}};
}

MetricsConfig read_metrics(const Json& doc)
{
  Fields f(doc, "metrics");
  MetricsConfig c;
  f.get("radius", c.radius);
  if (f.has("match")) {
    const auto m = f.require<std::string>("match");
    if (m == "lateral")
      c.match = MatchMode::Lateral;
    else if (m == "volume")
      c.match = MatchMode::Volume;
    else
      f.fail("'match' must be \"lateral\" or \"volume\"");
  }
  f.get("alpha_lateral", c.alpha_lateral);
  f.get("alpha_axial", c.alpha_axial);
  f.get("frc_threshold", c.frc_threshold);
  f.get("frc_block_size", c.frc_block_size);
  f.finish();
  if (!(c.radius > 0))
    f.fail("'radius' must be positive");
  if (!(c.alpha_lateral > 0 && c.alpha_axial > 0))
    f.fail("efficiency weights must be positive");
  if (!(c.frc_threshold > 0 && c.frc_threshold < 1))
    f.fail("'frc_threshold' must lie in (0, 1)");
  if (c.frc_block_size < 1)
    f.fail("'frc_block_size' must be at least 1");
  return c;
}

Json metrics_to_json(const MetricsConfig& c)
{
  return {{"radius", c.radius},
          {"match", c.match == MatchMode::Lateral ? "lateral" : "volume"},
          {"alpha_lateral", c.alpha_lateral},
          {"alpha_axial", c.alpha_axial},
          {"frc_threshold", c.frc_threshold},
          {"frc_block_size", c.frc_block_size}};
}

Point2 read_point(const Json& v, const std::string& where)
{
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw IoError(IoErrc::BadConfig, where + ": each bead must be [x_nm, y_nm]");
  return {v[0].get<double>(), v[1].get<double>()};
}

} // namespace

RenderConfig render_config_from_json(const Json& doc)
{
  Fields f(doc, "render");
  RenderConfig c;
  RenderSpec& s = c.spec;
  f.get("pixel_size", s.pixel_size);
  f.get("sigma", s.sigma);
  f.get("per_row_sigma", s.per_row_sigma);
  f.get("voxel_x", s.voxel_x);
  f.get("voxel_y", s.voxel_y);
  f.get("voxel_z", s.voxel_z);
  f.get("clip", s.clip);
  f.get("percentile", s.percentile);
  f.get("volume", c.volume);
  if (f.has("bounds")) {
    Fields b(f.raw("bounds"), "render.bounds");
    Bounds3 bounds;
    bounds.x0 = b.require<double>("x0");
    bounds.x1 = b.require<double>("x1");
    bounds.y0 = b.require<double>("y0");
    bounds.y1 = b.require<double>("y1");
    b.get("z0", bounds.z0);
    b.get("z1", bounds.z1);
    b.finish();
    s.bounds = bounds;
  }
  f.finish();
  checked("render", [&] { s.validate(); });
  return c;
}

Json render_config_to_json(const RenderConfig& c)
{
  const RenderSpec& s = c.spec;
  Json doc = {{"pixel_size", s.pixel_size}, {"sigma", s.sigma},         {"per_row_sigma", s.per_row_sigma},
              {"voxel_x", s.voxel_x},       {"voxel_y", s.voxel_y},     {"voxel_z", s.voxel_z},
              {"clip", s.clip},             {"percentile", s.percentile}, {"volume", c.volume}};
  if (s.bounds)
    doc["bounds"] = {{"x0", s.bounds->x0}, {"x1", s.bounds->x1}, {"y0", s.bounds->y0},
                     {"y1", s.bounds->y1}, {"z0", s.bounds->z0}, {"z1", s.bounds->z1}};
  return doc;
}

SimulationConfig PipelineConfig::resolved_simulation() const
{
  SimulationConfig out = simulation;
  out.camera = camera.resolve(simulation.prior.width, simulation.prior.height);
  return out;
}

PipelineConfig pipeline_config_from_json(const Json& doc, const fs::path& base_dir)
{
  Fields f(doc, "config");
  PipelineConfig cfg;
  if (f.has("prior"))
    read_prior(f.raw("prior"), cfg.simulation);
  if (f.has("psf"))
    cfg.simulation.psf = psf_from_json(f.raw("psf"), base_dir);
  if (f.has("camera"))
    cfg.camera = camera_from_json(f.raw("camera"), base_dir);
  cfg.simulation.camera = cfg.camera.camera;
  if (f.has("localizer"))
    cfg.localizer = read_localizer(f.raw("localizer"));
  if (f.has("postprocess"))
    cfg.postprocess = read_postprocess(f.raw("postprocess"));
  if (f.has("metrics"))
    cfg.metrics = read_metrics(f.raw("metrics"));
  if (f.has("render"))
    cfg.render = render_config_from_json(f.raw("render"));
  f.finish();
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path)
{
  return pipeline_config_from_json(load_json(path), fs::path(path).parent_path());
}

Json pipeline_config_to_json(const PipelineConfig& cfg)
{
  if (cfg.simulation.psf.pixmap)
    throw std::invalid_argument("pipeline_config_to_json: PSF pixel maps need write_psf");
  return {{"prior", prior_to_json(cfg.simulation)},
          {"psf", psf_to_json(cfg.simulation.psf, {}, {})},
          {"camera", camera_to_json(cfg.camera)},
          {"localizer", localizer_to_json(cfg.localizer)},
          {"postprocess", postprocess_to_json(cfg.postprocess)},
          {"metrics", metrics_to_json(cfg.metrics)},
          {"render", render_config_to_json(cfg.render)}};
}

CalibrationConfig calibration_config_from_json(const Json& doc, const fs::path& base_dir)
{
  Fields f(doc, "calibration");
  CalibrationConfig c;
  if (f.has("camera"))
    c.camera = camera_from_json(f.raw("camera"), base_dir);
  if (f.has("psf"))
    c.init = psf_from_json(f.raw("psf"), base_dir);
  f.get("z0", c.z0);
  f.get("dz", c.dz);
  if (f.has("optimizer")) {
    Fields o(f.raw("optimizer"), "calibration.optimizer");
    BeadFitOptions& opt = c.optimizer;
    o.get("window", opt.window);
    o.get("max_iterations", opt.max_iterations);
    o.get("tolerance", opt.tolerance);
    o.get("fit_pixmap", opt.fit_pixmap);
    o.get("pixmap_weight", opt.pixmap_weight);
    o.get("detect_threshold_k", opt.detect.threshold_k);
    o.finish();
    if (opt.window < 1 || opt.window % 2 == 0)
      o.fail("'window' must be a positive odd number");
    if (opt.max_iterations < 0 || !(opt.tolerance >= 0) || !(opt.pixmap_weight > 0))
      o.fail("invalid optimizer settings");
  }
  if (f.has("beads")) {
    const Json& beads = f.raw("beads");
    if (!beads.is_array())
      f.fail("'beads' must be an array of [x_nm, y_nm] pairs");
    for (const auto& b : beads)
      c.beads.push_back(read_point(b, "calibration.beads"));
  }
  f.finish();
  if (!(c.dz != 0))
    f.fail("'dz' must be non-zero");
  return c;
}

CalibrationConfig load_calibration_config(const std::string& path)
{
  return calibration_config_from_json(load_json(path), fs::path(path).parent_path());
}

} // namespace smlm
