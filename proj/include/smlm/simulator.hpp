#pragma once

#include "smlm/camera.hpp"
#include "smlm/image.hpp"
#include "smlm/localization.hpp"
#include "smlm/psf.hpp"
#include "smlm/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace smlm {

/// Blinking prior: per-pixel activation, geometric lifetimes, uniform
/// in-pixel position, Gaussian z and uniformly scaled brightness.
struct PriorConfig
{
  double p_on = 1e-4;
  double p_off = 0.5;
  double z_sigma = 300.0;
  double max_brightness = 5000.0;
  /// Per-frame brightness is U(brightness_min_fraction, 1) * max_brightness.
  double brightness_min_fraction = 0.1;
  int width = 64;
  int height = 64;
  int n_frames = 100;
  double focal_plane_z = 0.0;
  double pixel_size = 100.0;
  /// Draw brightness once per track instead of once per active frame.
  bool constant_brightness = false;

  void validate() const;
};

struct EmitterTrack
{
  long id = 0;
  int t_start = 0;
  int t_end = 0; // inclusive
  /// Position in each active frame; positions[k] belongs to frame t_start + k.
  std::vector<Point3> positions;
  std::vector<double> photons_per_frame;

  int n_frames() const { return t_end - t_start + 1; }
  bool active_in(int frame) const { return frame >= t_start && frame <= t_end; }
  const Point3& position_at(int frame) const { return positions[static_cast<std::size_t>(frame - t_start)]; }
  double photons_at(int frame) const { return photons_per_frame[static_cast<std::size_t>(frame - t_start)]; }
};

struct FrameStack
{
  int width = 0;
  int height = 0;
  double pixel_size = 100.0;
  std::string camera_tag;
  std::vector<ImageF> frames;

  int n_frames() const { return static_cast<int>(frames.size()); }
  ImageD frame(int index) const { return frames.at(static_cast<std::size_t>(index)).cast<double>(); }
  PixelGrid grid() const { return PixelGrid{width, height, pixel_size, 0.0, 0.0, 1}; }
  void validate() const;
};

std::vector<EmitterTrack> sample_tracks(const PriorConfig& cfg, Rng& rng);

/// Shifts the position of each track's k-th active frame by k * (dx, 0, dz).
std::vector<EmitterTrack> apply_lls_drift(std::vector<EmitterTrack> tracks, double dx_per_frame,
                                          double dz_per_frame);

/// Expected image in counts above baseline: sum of emitter patches plus a
/// constant background.
ImageD mean_frame(const std::vector<EmitterTrack>& tracks, int frame, const PsfModel& psf, double background,
                  const PixelGrid& grid);

struct SimulationConfig
{
  PriorConfig prior;
  PsfModel psf;
  Camera camera = CameraEmccd{};
  double lls_dx = 0.0;
  double lls_dz = 0.0;
  int oversample = 1;
};

struct SimulationResult
{
  FrameStack stack;
  LocalizationTable truth; // one row per (track, active frame), id set
  std::vector<EmitterTrack> tracks;
};

/// Tracks are drawn from stream 0 of `seed`; frame t draws its noise from
/// stream t + 1, so the output does not depend on the thread count.
SimulationResult simulate_stack(const SimulationConfig& cfg, std::uint64_t seed);

/// Noisy frames of fixed emitters imaged at frame-dependent depths
/// z_k = z0 + k * dz (a bead calibration stack).
struct BeadSimulation
{
  std::vector<Point2> beads;
  std::vector<double> brightness; // per bead, constant over frames
  int width = 48;
  int height = 48;
  double pixel_size = 100.0;
  int n_frames = 31;
  double z0 = -750.0;
  double dz = 50.0;
};

FrameStack simulate_bead_stack(const BeadSimulation& sim, const PsfModel& psf, const Camera& camera,
                               std::uint64_t seed);

} // namespace smlm
