#pragma once

#include "smlm/camera.hpp"
#include "smlm/localizer.hpp"
#include "smlm/psf.hpp"
#include "smlm/rng.hpp"
#include "smlm/simulator.hpp"

#include <vector>

namespace smlm::testing {

/// EMCCD with unit gain ratio (eta = 2) and a modest background.
inline CameraEmccd desk_camera()
{
  CameraEmccd c;
  c.baseline = 100.0;
  c.em_gain = 45.0;
  c.e_per_count = 45.0;
  c.background = 20.0;
  return c;
}

struct Emitter
{
  double x, y, z, photons;
};

/// One noisy frame in absolute counts.
inline ImageD noisy_frame(const PsfModel& psf, const Camera& camera, const PixelGrid& grid,
                          const std::vector<Emitter>& emitters, Rng& rng)
{
  ImageD mean(grid.width, grid.height);
  for (auto& v : mean.data())
    v = camera_baseline(camera) + camera_background(camera);
  for (const auto& e : emitters)
    add_emitter(mean, grid, psf, e.x, e.y, e.z, e.photons);
  return sample_camera(mean, camera, rng);
}

/// Sparse blinking scene: fixed-brightness emitters, low density.
inline SimulationConfig sparse_scene(int frames, double p_on = 1e-4)
{
  SimulationConfig cfg;
  cfg.prior.width = 64;
  cfg.prior.height = 64;
  cfg.prior.n_frames = frames;
  cfg.prior.p_on = p_on;
  cfg.prior.p_off = 0.5;
  cfg.prior.z_sigma = 300.0;
  cfg.prior.max_brightness = 5000.0;
  cfg.prior.brightness_min_fraction = 1.0;
  cfg.psf.parametric = PsfAsParams{};
  cfg.camera = desk_camera();
  return cfg;
}

/// Localizer settings for sparse scenes: a stricter detection threshold that
/// keeps pure-noise candidates out.
inline LocalizerConfig sparse_localizer()
{
  LocalizerConfig cfg;
  cfg.threshold_k = 6.0;
  return cfg;
}

} // namespace smlm::testing
