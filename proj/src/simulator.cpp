#include "smlm/simulator.hpp"

#include "smlm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace smlm {

void PriorConfig::validate() const
{
  if (!(p_on >= 0 && p_on <= 1))
    throw std::invalid_argument("prior: p_on must lie in [0, 1]");
  if (!(p_off > 0 && p_off <= 1))
    throw std::invalid_argument("prior: p_off must lie in (0, 1]");
  if (!(z_sigma > 0))
    throw std::invalid_argument("prior: z_sigma must be > 0");
  if (!(max_brightness > 0))
    throw std::invalid_argument("prior: max_brightness must be > 0");
  if (!(brightness_min_fraction >= 0 && brightness_min_fraction <= 1))
    throw std::invalid_argument("prior: brightness_min_fraction must lie in [0, 1]");
  if (width <= 0 || height <= 0 || n_frames < 0)
    throw std::invalid_argument("prior: field dimensions must be positive");
  if (!(pixel_size > 0))
    throw std::invalid_argument("prior: pixel_size must be > 0");
}

void FrameStack::validate() const
{
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("frame stack: dimensions must be positive");
  for (const auto& f : frames) {
    if (f.width() != width || f.height() != height)
      throw std::invalid_argument("frame stack: inconsistent frame dimensions");
    for (float v : f.data())
      if (!std::isfinite(v))
        throw std::invalid_argument("frame stack: non-finite pixel");
  }
}

namespace {

// Number of failures before the first success of a Bernoulli(p) sequence.
long geometric_failures(double p, Rng& rng)
{
  if (p >= 1.0)
    return 0;
  std::geometric_distribution<long> geom(p);
  return geom(rng);
}

} // namespace

std::vector<EmitterTrack> sample_tracks(const PriorConfig& cfg, Rng& rng)
{
  cfg.validate();
  std::vector<EmitterTrack> tracks;
  if (cfg.p_on == 0.0)
    return tracks;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> brightness(cfg.brightness_min_fraction, 1.0);
  std::normal_distribution<double> depth(cfg.focal_plane_z, cfg.z_sigma);

  const long n_pixels = static_cast<long>(cfg.width) * cfg.height;
  long next_id = 0;
  for (int t = 0; t < cfg.n_frames; ++t) {
    // Skipping geometric gaps visits exactly the pixels of independent
    // per-pixel Bernoulli(p_on) draws, in raster order.
    for (long pos = geometric_failures(cfg.p_on, rng); pos < n_pixels; pos += 1 + geometric_failures(cfg.p_on, rng)) {
      const int u = static_cast<int>(pos % cfg.width);
      const int v = static_cast<int>(pos / cfg.width);

      EmitterTrack track;
      track.id = next_id++;
      track.t_start = t;
      const long lifetime = 1 + geometric_failures(cfg.p_off, rng);
      track.t_end = static_cast<int>(std::min<long>(t + lifetime - 1, cfg.n_frames - 1));

      const Point3 p{(u + unit(rng)) * cfg.pixel_size, (v + unit(rng)) * cfg.pixel_size, depth(rng)};
      const int n = track.n_frames();
      track.positions.assign(static_cast<std::size_t>(n), p);
      track.photons_per_frame.resize(static_cast<std::size_t>(n));
      const double first = brightness(rng) * cfg.max_brightness;
      for (int k = 0; k < n; ++k)
        track.photons_per_frame[static_cast<std::size_t>(k)] =
          (k == 0 || cfg.constant_brightness) ? first : brightness(rng) * cfg.max_brightness;
      tracks.push_back(std::move(track));
    }
  }
  return tracks;
}

std::vector<EmitterTrack> apply_lls_drift(std::vector<EmitterTrack> tracks, double dx_per_frame, double dz_per_frame)
{
  for (auto& track : tracks) {
    for (std::size_t k = 1; k < track.positions.size(); ++k) {
      track.positions[k].x += static_cast<double>(k) * dx_per_frame;
      track.positions[k].z += static_cast<double>(k) * dz_per_frame;
    }
  }
  return tracks;
}

ImageD mean_frame(const std::vector<EmitterTrack>& tracks, int frame, const PsfModel& psf, double background,
                  const PixelGrid& grid)
{
  ImageD img(grid.width, grid.height, background);
  for (const auto& track : tracks) {
    if (!track.active_in(frame))
      continue;
    const Point3& p = track.position_at(frame);
    add_emitter(img, grid, psf, p.x, p.y, p.z, track.photons_at(frame));
  }
  return img;
}

SimulationResult simulate_stack(const SimulationConfig& cfg, std::uint64_t seed)
{
  cfg.prior.validate();
  validate(cfg.psf.parametric);
  validate(cfg.camera);
  if (const auto* sc = std::get_if<CameraScmos>(&cfg.camera))
    if (sc->var_map.width() != cfg.prior.width || sc->var_map.height() != cfg.prior.height)
      throw std::invalid_argument("sCMOS variance map does not match the field");
  if (camera_background(cfg.camera) <= 0)
    throw std::invalid_argument("simulation requires a background > 0");

  SimulationResult result;
  Rng track_rng = make_stream(seed, 0);
  result.tracks = sample_tracks(cfg.prior, track_rng);
  if (cfg.lls_dx != 0.0 || cfg.lls_dz != 0.0)
    result.tracks = apply_lls_drift(std::move(result.tracks), cfg.lls_dx, cfg.lls_dz);

  const int n_frames = cfg.prior.n_frames;
  const PixelGrid grid{cfg.prior.width, cfg.prior.height, cfg.prior.pixel_size, 0.0, 0.0, cfg.oversample};

  std::vector<std::vector<std::size_t>> active(static_cast<std::size_t>(n_frames));
  for (std::size_t i = 0; i < result.tracks.size(); ++i)
    for (int t = result.tracks[i].t_start; t <= result.tracks[i].t_end; ++t)
      active[static_cast<std::size_t>(t)].push_back(i);

  const double baseline = camera_baseline(cfg.camera);
  const double background = camera_background(cfg.camera);

  result.stack.width = cfg.prior.width;
  result.stack.height = cfg.prior.height;
  result.stack.pixel_size = cfg.prior.pixel_size;
  result.stack.camera_tag = camera_tag(cfg.camera);
  result.stack.frames.resize(static_cast<std::size_t>(n_frames));

  parallel_for(static_cast<std::size_t>(n_frames), [&](std::size_t t) {
    const int frame = static_cast<int>(t);
    ImageD mean(grid.width, grid.height, background);
    for (std::size_t i : active[t]) {
      const auto& track = result.tracks[i];
      const Point3& p = track.position_at(frame);
      add_emitter(mean, grid, cfg.psf, p.x, p.y, p.z, track.photons_at(frame));
    }
    for (double& v : mean.data())
      v += baseline;
    Rng rng = make_stream(seed, t + 1);
    result.stack.frames[t] = sample_camera(mean, cfg.camera, rng).cast<float>();
  });

  for (int t = 0; t < n_frames; ++t) {
    for (std::size_t i : active[static_cast<std::size_t>(t)]) {
      const auto& track = result.tracks[i];
      const Point3& p = track.position_at(t);
      Localization row;
      row.frame = t;
      row.id = track.id;
      row.x = p.x;
      row.y = p.y;
      row.z = p.z;
      row.photons = track.photons_at(t);
      result.truth.push_back(row);
    }
  }
  return result;
}

FrameStack simulate_bead_stack(const BeadSimulation& sim, const PsfModel& psf, const Camera& camera,
                               std::uint64_t seed)
{
  if (sim.beads.size() != sim.brightness.size())
    throw std::invalid_argument("bead simulation: one brightness per bead required");
  if (sim.n_frames < 1)
    throw std::invalid_argument("bead simulation: need at least one frame");
  validate(camera);

  const PixelGrid grid{sim.width, sim.height, sim.pixel_size, 0.0, 0.0, 1};
  const double baseline = camera_baseline(camera);
  const double background = camera_background(camera);

  FrameStack stack;
  stack.width = sim.width;
  stack.height = sim.height;
  stack.pixel_size = sim.pixel_size;
  stack.camera_tag = camera_tag(camera);
  stack.frames.resize(static_cast<std::size_t>(sim.n_frames));
  parallel_for(static_cast<std::size_t>(sim.n_frames), [&](std::size_t k) {
    const double z = sim.z0 + static_cast<double>(k) * sim.dz;
    ImageD mean(grid.width, grid.height, background);
    for (std::size_t b = 0; b < sim.beads.size(); ++b)
      add_emitter(mean, grid, psf, sim.beads[b].x, sim.beads[b].y, z, sim.brightness[b]);
    for (double& v : mean.data())
      v += baseline;
    Rng rng = make_stream(seed, k + 1);
    stack.frames[k] = sample_camera(mean, camera, rng).cast<float>();
  });
  return stack;
}

} // namespace smlm
