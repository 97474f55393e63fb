#pragma once

#include "smlm/image.hpp"
#include "smlm/rng.hpp"

#include <string>
#include <variant>

namespace smlm {

/// EMCCD approximated by a single Gamma distribution with scale
/// eta = 2 * em_gain / e_per_count.
struct CameraEmccd
{
  double baseline = 100.0;
  double em_gain = 300.0;
  double e_per_count = 45.0;
  /// Expected background in counts above baseline.
  double background = 20.0;

  double eta() const { return 2.0 * em_gain / e_per_count; }
};

/// sCMOS with per-pixel read-noise variance (counts^2) and constant gain.
struct CameraScmos
{
  double baseline = 100.0;
  double gain = 1.0;
  ImageD var_map;
  double background = 20.0;
};

using Camera = std::variant<CameraEmccd, CameraScmos>;

void validate(const Camera& camera);
double camera_baseline(const Camera& camera);
double camera_background(const Camera& camera);
std::string camera_tag(const Camera& camera);

/// Per-pixel Gamma(shape=(I-BL)/eta, scale=eta) + BL. `mean` holds absolute
/// counts; throws std::invalid_argument if any pixel is <= baseline.
ImageD sample_emccd(const ImageD& mean, const CameraEmccd& cam, Rng& rng);

/// Per-pixel Gamma(shape=I/eta, scale=eta) with
/// eta = (Var + g*(I - BL)) / I. Throws if any eta <= 0.
ImageD sample_scmos(const ImageD& mean, const CameraScmos& cam, Rng& rng);

/// Dispatches on the camera type. `mean` holds absolute counts.
ImageD sample_camera(const ImageD& mean, const Camera& cam, Rng& rng);

/// Log-likelihood of observed camera counts under the Gamma approximation,
/// parametrised by the expected signal above baseline.
class NoiseModel
{
public:
  explicit NoiseModel(Camera camera);

  const Camera& camera() const { return camera_; }
  double baseline() const { return camera_baseline(camera_); }

  struct Term
  {
    double nll = 0.0;     ///< negative log density
    double d_mean = 0.0;  ///< derivative of nll w.r.t. the mean above baseline
    double fisher = 0.0;  ///< expected Fisher information for the mean
  };

  /// `observed` is in absolute counts, `mean` in counts above baseline and
  /// `pixel` is the flat frame index (needed for sCMOS variance maps).
  /// Returns nll = +inf when the Gamma parameters are invalid.
  Term term(double observed, double mean, std::size_t pixel) const;
  double nll(double observed, double mean, std::size_t pixel) const { return term(observed, mean, pixel).nll; }

  /// Variance of the observed counts for a mean above baseline.
  double variance(double mean, std::size_t pixel) const;

private:
  Camera camera_;
};

} // namespace smlm
