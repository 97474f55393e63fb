#pragma once

#include "smlm/camera.hpp"
#include "smlm/image.hpp"
#include "smlm/localization.hpp"
#include "smlm/psf.hpp"
#include "smlm/simulator.hpp"

#include <array>
#include <vector>

namespace smlm {

struct LocalizerConfig
{
  double threshold_k = 4.0;     ///< detection threshold in robust noise units
  double smoothing_sigma = 1.0; ///< pixels
  int roi_size = 13;
  int max_iterations = 200;
  std::vector<double> z_starts; ///< empty: {-300, 0, 300}, or {0} for the 2D model
  double z_limit = 1500.0;      ///< fits with |z| beyond this are marked unconverged
  /// Fits whose Pearson statistic exceeds its degrees of freedom by more than
  /// this many multiples of sqrt(2 * dof) are marked unconverged; <= 0 keeps all.
  double max_fit_excess = 5.0;

  void validate() const;
};

struct Candidate
{
  int frame = 0;
  int u = 0;
  int v = 0;
  double intensity = 0.0; ///< peak of the smoothed frame, in units of its noise spread
};

/// Local maxima above threshold_k * 1.4826 * MAD of a smoothed frame. The
/// counts above `baseline` are first passed through a cube root, which makes
/// Gamma-distributed camera noise close to Gaussian; the result is median
/// subtracted and Gaussian smoothed, each value scaled by the norm of its
/// kernel weights so border pixels see the same noise level. Ties between
/// neighbours go to the pixel that comes first in raster order. Returned in
/// raster order.
std::vector<Candidate> detect_candidates(const ImageD& frame, const LocalizerConfig& cfg, double baseline = 0.0,
                                         int frame_index = 0);

struct RoiFit
{
  double x = 0, y = 0, z = 0;
  double photons = 0;
  double background = 0; ///< per pixel, counts above baseline
  double sig_x = 0, sig_y = 0, sig_z = 0, sig_photons = 0, sig_background = 0;
  double negloglik = 0;
  int iterations = 0;
  bool converged = false;
  bool hessian_pd = false; ///< false: uncertainties are +inf
  bool shrunk = false;     ///< ROI was cut by the frame border
  bool crowded = false;    ///< another candidate lies within roi_size / 2
  bool poor_fit = false;   ///< residuals too large for a single emitter
  double chi2 = 0;         ///< Pearson statistic over the fitted pixels
  int dof = 0;
  int roi_u0 = 0, roi_v0 = 0, roi_w = 0, roi_h = 0;
};

/// Parameter order of the ROI likelihood.
enum RoiParam : int { kRoiX = 0, kRoiY, kRoiZ, kRoiPhotons, kRoiBackground, kRoiParams };
using RoiTheta = std::array<double, kRoiParams>;

/// Negative log-likelihood of one ROI and its gradient.
class RoiObjective
{
public:
  RoiObjective(const ImageD& frame, const PixelGrid& grid, const PsfModel& psf, const NoiseModel& noise, int u0, int v0,
               int w, int h);

  /// Pixels with a zero entry (row-major over the ROI) are left out.
  void set_mask(std::vector<char> mask) { mask_ = std::move(mask); }
  bool uses(int u, int v) const { return mask_.empty() || mask_[(v - v0_) * w_ + (u - u0_)]; }

  double value(const RoiTheta& t) const;
  double gradient(const RoiTheta& t, RoiTheta& grad) const;
  /// Sum of squared standardized residuals; `used` receives the pixel count.
  double pearson(const RoiTheta& t, int& used) const;
  /// Expected Fisher information of the model at t (row-major 5x5).
  double fisher(const RoiTheta& t, RoiTheta& grad, std::array<double, kRoiParams * kRoiParams>& info) const;

private:
  const ImageD& frame_;
  const PixelGrid& grid_;
  const PsfModel& psf_;
  const NoiseModel& noise_;
  int u0_, v0_, w_, h_;
  std::vector<char> mask_;
};

/// Fits one candidate. ROI pixels closer to one of `others` than to the
/// candidate itself are left out of the likelihood.
RoiFit fit_roi(const ImageD& frame, const PixelGrid& grid, const Candidate& candidate, const PsfModel& psf,
               const NoiseModel& noise, const LocalizerConfig& cfg, const std::vector<Candidate>& others = {});

/// Fits every candidate of one frame.
std::vector<RoiFit> localize_frame(const ImageD& frame, const PixelGrid& grid, int frame_index, const PsfModel& psf,
                                   const NoiseModel& noise, const LocalizerConfig& cfg);

/// Detect and fit every frame; converged fits become rows with prob = 1.
LocalizationTable localize_stack(const FrameStack& stack, const PsfModel& psf, const Camera& camera,
                                 const LocalizerConfig& cfg);

} // namespace smlm
