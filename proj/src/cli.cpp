#include "smlm/cli.hpp"

#include "smlm/calibration.hpp"
#include "smlm/config.hpp"
#include "smlm/io.hpp"
#include "smlm/localizer.hpp"
#include "smlm/metrics.hpp"
#include "smlm/parallel.hpp"
#include "smlm/postprocess.hpp"
#include "smlm/renderer.hpp"
#include "smlm/simulator.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

namespace smlm {

namespace {

struct Options
{
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string config;
  std::string stack;
  std::string psf;
  std::string camera;
  std::string out;
  std::string truth;
  std::string report;
  std::string pred;
  std::string table;
  std::string spec;
  std::string curve;
  std::string volume_out;
  std::optional<double> radius;
  std::optional<std::string> match;
  std::optional<std::size_t> block;
  std::optional<double> threshold;
  bool volume = false;
};

/// Restores the worker cap on scope exit.
class ThreadScope
{
public:
  explicit ThreadScope(unsigned n)
    : saved_(thread_count_override())
  {
    if (n > 0)
      set_thread_count(n);
  }
  ~ThreadScope() { set_thread_count(saved_); }
  ThreadScope(const ThreadScope&) = delete;
  ThreadScope& operator=(const ThreadScope&) = delete;

private:
  unsigned saved_;
};

PipelineConfig pipeline_or_default(const std::string& path)
{
  return path.empty() ? PipelineConfig{} : load_pipeline_config(path);
}

void emit_json(const Json& doc, const std::string& path, std::ostream& out)
{
  if (path.empty())
    out << doc.dump(2) << '\n';
  else
    save_json(doc, path);
}

Json optional_number(const std::optional<double>& v)
{
  return v && std::isfinite(*v) ? Json(*v) : Json(nullptr);
}

void cmd_simulate(const Options& o)
{
  const PipelineConfig cfg = load_pipeline_config(o.config);
  const SimulationResult sim = simulate_stack(cfg.resolved_simulation(), o.seed);
  write_smlf(sim.stack, o.out);
  if (!o.truth.empty())
    write_truth_table(sim.truth, o.truth);
}

void cmd_calibrate(const Options& o, std::ostream& out)
{
  const CalibrationConfig cc = load_calibration_config(o.config);
  BeadStack beads;
  beads.frames = read_smlf(o.stack);
  beads.z0 = cc.z0;
  beads.dz = cc.dz;
  beads.camera = cc.camera.resolve(beads.frames.width, beads.frames.height);
  const BeadFitResult fit = fit_psf(beads, cc.init, cc.optimizer, cc.beads);
  write_psf(fit.psf, o.out);

  Json report;
  report["converged"] = fit.converged;
  report["iterations"] = fit.iterations;
  report["negloglik"] = fit.negloglik;
  report["background"] = fit.background;
  report["objective_trace"] = fit.objective_trace;
  Json per_bead = Json::array();
  const auto nk = static_cast<std::size_t>(beads.n_frames());
  for (std::size_t b = 0; b < fit.beads.size(); ++b) {
    const std::vector<double> brightness(fit.brightness.begin() + static_cast<std::ptrdiff_t>(b * nk),
                                         fit.brightness.begin() + static_cast<std::ptrdiff_t>((b + 1) * nk));
    per_bead.push_back({{"x_nm", fit.beads[b].x},
                        {"y_nm", fit.beads[b].y},
                        {"residual_rms", fit.bead_residual_rms[b]},
                        {"brightness", brightness}});
  }
  report["beads"] = per_bead;
  emit_json(report, o.report, out);
}

void cmd_localize(const Options& o)
{
  const PipelineConfig cfg = pipeline_or_default(o.config);
  const FrameStack stack = read_smlf(o.stack);
  const PsfModel psf = read_psf(o.psf);
  const CameraSpec camera = read_camera(o.camera);
  LocalizationTable table = localize_stack(stack, psf, camera.resolve(stack.width, stack.height), cfg.localizer);
  if (cfg.postprocess.filter_fraction > 0)
    table = filter_by_sigma(table, cfg.postprocess.filter_fraction);
  if (cfg.postprocess.group_radius > 0)
    table = group_localizations(table, cfg.postprocess.group_radius);
  write_table(table, o.out);
}

void cmd_evaluate(const Options& o, std::ostream& out)
{
  const PipelineConfig cfg = pipeline_or_default(o.config);
  MetricsConfig m = cfg.metrics;
  if (o.radius)
    m.radius = *o.radius;
  if (o.match)
    m.match = *o.match == "volume" ? MatchMode::Volume : MatchMode::Lateral;
  if (!(m.radius > 0))
    throw IoError(IoErrc::BadConfig, "evaluate: radius must be positive");

  const LocalizationTable pred = read_table(o.pred);
  const LocalizationTable truth = read_table(o.truth);
  const MatchResult match = match_localizations(pred, truth, m.radius, m.match);
  const double j = jaccard(match);
  const auto lat = rmse(match, ErrorMode::Lateral);
  const auto ax = rmse(match, ErrorMode::Axial);
  const auto vol = rmse(match, ErrorMode::Volume);
  auto eff = [&](const std::optional<double>& r, double alpha) -> std::optional<double> {
    if (!r)
      return std::nullopt;
    return efficiency(j, *r, alpha);
  };
  const auto eff_lat = eff(lat, m.alpha_lateral);
  const auto eff_ax = eff(ax, m.alpha_axial);
  std::optional<double> eff_3d;
  if (eff_lat && eff_ax)
    eff_3d = 0.5 * (*eff_lat + *eff_ax);

  Json report;
  report["jaccard"] = j;
  report["rmse_lateral"] = optional_number(lat);
  report["rmse_axial"] = optional_number(ax);
  report["rmse_volume"] = optional_number(vol);
  report["eff_lateral"] = optional_number(eff_lat);
  report["eff_axial"] = optional_number(eff_ax);
  report["eff_3d"] = optional_number(eff_3d);
  report["n_tp"] = match.tp;
  report["n_fp"] = match.fp;
  report["n_fn"] = match.fn;
  report["radius"] = m.radius;
  report["match"] = m.match == MatchMode::Lateral ? "lateral" : "volume";
  emit_json(report, o.report.empty() ? o.out : o.report, out);
}

RenderConfig render_settings(const Options& o)
{
  if (!o.spec.empty())
    return render_config_from_json(load_json(o.spec));
  return pipeline_or_default(o.config).render;
}

void cmd_render(const Options& o)
{
  RenderConfig rc = render_settings(o);
  if (o.volume)
    rc.volume = true;
  const LocalizationTable table = read_table(o.table);
  if (!rc.volume) {
    if (!o.volume_out.empty())
      throw IoError(IoErrc::BadConfig, "render: --volume-out needs a 3D render");
    const ImageD img = render_2d(table, rc.spec);
    const double peak = img.empty() ? 0.0 : *std::max_element(img.data().begin(), img.data().end());
    write_pgm16(o.out, img, peak > 0 ? peak : 1.0);
    return;
  }
  const Volume vol = render_3d(table, rc.spec);
  write_pgm16(o.out, max_project(vol, rc.spec), 1.0);
  if (o.volume_out.empty())
    return;
  FrameStack planes;
  planes.width = vol.nx;
  planes.height = vol.ny;
  planes.pixel_size = rc.spec.voxel_x;
  for (int k = 0; k < vol.nz; ++k)
    planes.frames.push_back(vol.slice(k).cast<float>());
  write_smlf(planes, o.volume_out);
  save_json({{"format", "smlf-volume"},
             {"x0", vol.x0},
             {"y0", vol.y0},
             {"z0", vol.z0},
             {"voxel_x", rc.spec.voxel_x},
             {"voxel_y", rc.spec.voxel_y},
             {"voxel_z", rc.spec.voxel_z}},
            o.volume_out + ".json");
}

void cmd_frc(const Options& o, std::ostream& out)
{
  const PipelineConfig cfg = pipeline_or_default(o.config);
  RenderSpec spec = render_settings(o).spec;
  const std::size_t block = o.block ? *o.block : cfg.metrics.frc_block_size;
  const double threshold = o.threshold ? *o.threshold : cfg.metrics.frc_threshold;
  if (block < 1)
    throw IoError(IoErrc::BadConfig, "frc: block size must be at least 1");

  const LocalizationTable table = read_table(o.table);
  if (!spec.bounds)
    spec.bounds = render_bounds_2d(table, spec);
  const auto [a, b] = split_even_odd_blocks(table, block);
  const FrcCurve curve = frc_curve(render_2d(a, spec), render_2d(b, spec), spec.pixel_size);
  const FrcResolution res = frc_resolution(curve, threshold);

  if (!o.curve.empty()) {
    std::ofstream csv(o.curve, std::ios::binary | std::ios::trunc);
    if (!csv)
      throw IoError(IoErrc::Open, "cannot open '" + o.curve + "' for writing");
    csv << "frequency_nm_inv,correlation,samples\n";
    for (std::size_t i = 0; i < curve.frequency.size(); ++i)
      csv << format_number(curve.frequency[i]) << ',' << format_number(curve.correlation[i]) << ','
          << format_number(curve.samples[i]) << '\n';
    csv.flush();
    if (!csv)
      throw IoError(IoErrc::Write, "write to '" + o.curve + "' failed");
  }
  Json report;
  report["resolution_nm"] = res.resolution;
  report["frequency_nm_inv"] = res.frequency;
  report["crossed"] = res.crossed;
  report["threshold"] = threshold;
  report["block_size"] = block;
  report["rows_a"] = a.size();
  report["rows_b"] = b.size();
  report["pixel_size"] = spec.pixel_size;
  emit_json(report, o.out, out);
}

std::string one_line(std::string s)
{
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  Options o;
  CLI::App app{"Simulation, calibration, fitting and evaluation for single-molecule localization data",
               "smlmforge"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.add_option("--seed", o.seed, "RNG seed (simulate)");
  app.add_option("--threads", o.threads, "Worker thread cap; SMLMFORGE_THREADS is the fallback")
    ->check(CLI::PositiveNumber);

  auto* simulate = app.add_subcommand("simulate", "Sample a frame stack and its ground truth");
  simulate->add_option("--config", o.config, "Pipeline config JSON")->required();
  simulate->add_option("--out", o.out, "Output SMLF stack")->required();
  simulate->add_option("--truth", o.truth, "Output ground-truth CSV");

  auto* calibrate = app.add_subcommand("calibrate", "Fit a PSF model to a bead z-stack");
  calibrate->add_option("--stack", o.stack, "Bead stack (SMLF)")->required();
  calibrate->add_option("--config", o.config, "Calibration config JSON")->required();
  calibrate->add_option("--out", o.out, "Output PSF JSON")->required();
  calibrate->add_option("--report", o.report, "Fit report JSON (default: stdout)");

  auto* localize = app.add_subcommand("localize", "Detect and fit emitters in every frame");
  localize->add_option("--stack", o.stack, "Frame stack (SMLF)")->required();
  localize->add_option("--psf", o.psf, "PSF JSON")->required();
  localize->add_option("--camera", o.camera, "Camera JSON")->required();
  localize->add_option("--config", o.config, "Pipeline config JSON (localizer, postprocess)");
  localize->add_option("--out", o.out, "Output localization CSV")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Match predictions to ground truth and score them");
  evaluate->add_option("--pred", o.pred, "Predicted localizations CSV")->required();
  evaluate->add_option("--truth", o.truth, "Ground-truth CSV")->required();
  evaluate->add_option("--radius", o.radius, "Match radius in nm (default 250)");
  evaluate->add_option("--match", o.match, "Distance used for matching")
    ->check(CLI::IsMember({"lateral", "volume"}));
  evaluate->add_option("--config", o.config, "Pipeline config JSON (metrics)");
  evaluate->add_option("--out", o.out, "Report JSON (default: stdout)");

  auto* render = app.add_subcommand("render", "Render a localization table to a 16-bit PGM");
  render->add_option("--table", o.table, "Localization CSV")->required();
  render->add_option("--spec", o.spec, "Render settings JSON");
  render->add_option("--config", o.config, "Pipeline config JSON (render)");
  render->add_flag("--3d", o.volume, "Render a volume and write its z maximum projection");
  render->add_option("--volume-out", o.volume_out, "Also write the volume planes (SMLF + JSON sidecar)");
  render->add_option("--out", o.out, "Output PGM")->required();

  auto* frc = app.add_subcommand("frc", "Fourier ring correlation of alternating row blocks");
  frc->add_option("--table", o.table, "Localization CSV")->required();
  frc->add_option("--spec", o.spec, "Render settings JSON");
  frc->add_option("--config", o.config, "Pipeline config JSON (metrics, render)");
  frc->add_option("--block", o.block, "Rows per block (default 10000)");
  frc->add_option("--threshold", o.threshold, "Correlation threshold (default 0.143)");
  frc->add_option("--curve", o.curve, "Output curve CSV");
  frc->add_option("--out", o.out, "Resolution JSON (default: stdout)");

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args)
    argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "smlmforge: error: usage: " << one_line(e.what()) << '\n';
    return kExitUsage;
  }

  try {
    const ThreadScope scope(o.threads);
    if (simulate->parsed())
      cmd_simulate(o);
    else if (calibrate->parsed())
      cmd_calibrate(o, out);
    else if (localize->parsed())
      cmd_localize(o);
    else if (evaluate->parsed())
      cmd_evaluate(o, out);
    else if (render->parsed())
      cmd_render(o);
    else if (frc->parsed())
      cmd_frc(o, out);
  } catch (const IoError& e) {
    err << "smlmforge: error: " << errc_name(e.code()) << ": " << one_line(e.what()) << '\n';
    return kExitDataError;
  } catch (const std::exception& e) {
    err << "smlmforge: error: invalid_data: " << one_line(e.what()) << '\n';
    return kExitDataError;
  }
  return kExitOk;
}

} // namespace smlm
