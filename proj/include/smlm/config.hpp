#pragma once

#include "smlm/calibration.hpp"
#include "smlm/io.hpp"
#include "smlm/localizer.hpp"
#include "smlm/metrics.hpp"
#include "smlm/postprocess.hpp"
#include "smlm/renderer.hpp"
#include "smlm/simulator.hpp"

#include <filesystem>
#include <string>

namespace smlm {

/// Post-fit table processing and the map decoding thresholds.
struct PostprocessConfig
{
  NmsConfig nms;                 ///< 0.3 peak / 0.7 aggregate
  int debias_bins = 20;
  double filter_fraction = 0.0;  ///< share of rows with the largest var_tot to drop; 0 keeps all
  double group_radius = 0.0;     ///< nm; 0 disables grouping across frames
  double sigma_floor = 0.01;     ///< added to decoded sigmas, in pixel units
};

struct MetricsConfig
{
  double radius = 250.0; ///< nm
  MatchMode match = MatchMode::Lateral;
  double alpha_lateral = 0.5;
  double alpha_axial = 1.0;
  double frc_threshold = 0.143;
  std::size_t frc_block_size = 10000; ///< rows per alternating block
};

struct RenderConfig
{
  RenderSpec spec; ///< 5 nm splats, 10x10x20 nm voxels, clip 2.5, percentile 99.5
  bool volume = false; ///< render 3D and write the z maximum projection
};

/// Everything the CLI pipelines read. The "prior" section also carries the
/// simulation extras lls_dx, lls_dz (nm per frame) and oversample.
struct PipelineConfig
{
  SimulationConfig simulation;
  CameraSpec camera;
  LocalizerConfig localizer;
  PostprocessConfig postprocess;
  MetricsConfig metrics;
  RenderConfig render;

  /// Simulation settings with the camera sized to the prior's field.
  SimulationConfig resolved_simulation() const;
};

/// Sections and keys are all optional; unknown sections or keys, wrong
/// types and values that fail validation throw IoError(BadConfig).
PipelineConfig pipeline_config_from_json(const Json& doc, const std::filesystem::path& base_dir = {});
PipelineConfig load_pipeline_config(const std::string& path);
/// Full document with every field spelled out.
Json pipeline_config_to_json(const PipelineConfig& cfg);

RenderConfig render_config_from_json(const Json& doc);
Json render_config_to_json(const RenderConfig& cfg);

/// Input of the calibrate command: {"camera", "psf" (starting model),
/// "z0", "dz", "optimizer": {window, max_iterations, tolerance, fit_pixmap,
/// pixmap_weight, detect_threshold_k}, "beads": [[x, y], ...]}.
struct CalibrationConfig
{
  CameraSpec camera;
  PsfModel init;
  double z0 = -750.0;
  double dz = 50.0;
  BeadFitOptions optimizer;
  std::vector<Point2> beads; ///< empty: detect
};

CalibrationConfig calibration_config_from_json(const Json& doc, const std::filesystem::path& base_dir = {});
CalibrationConfig load_calibration_config(const std::string& path);

} // namespace smlm
