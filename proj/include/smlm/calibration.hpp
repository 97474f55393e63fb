#pragma once

#include "smlm/camera.hpp"
#include "smlm/image.hpp"
#include "smlm/psf.hpp"
#include "smlm/simulator.hpp"

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <vector>

namespace smlm {

/// Frames of fixed beads taken at z_k = z0 + k * dz.
struct BeadStack
{
  FrameStack frames;
  double z0 = 0.0;
  double dz = 0.0;
  Camera camera = CameraEmccd{};

  int n_frames() const { return frames.n_frames(); }
  double z_at(int k) const { return z0 + k * dz; }
  void validate() const;
};

struct BeadDetectConfig
{
  double threshold_k = 10.0; ///< in robust noise units of the z-summed image
};

/// Local maxima of the z-summed, median-subtracted stack above threshold,
/// refined by the intensity-weighted centroid of a 5x5 window (nm).
std::vector<Point2> detect_beads(const BeadStack& stack, const BeadDetectConfig& cfg = {});

/// Everything the bead likelihood depends on.
struct BeadParams
{
  std::vector<Point2> beads;
  PsfModel psf;
  std::vector<double> brightness; ///< bead-major: brightness[b * n_frames + k]
  double background = 0.0;        ///< counts above baseline, one value for the stack
};

using PixelAnchor = std::array<int, 2>;

/// Pixel containing each bead.
std::vector<PixelAnchor> anchors_for(const std::vector<Point2>& beads, double pixel_size);

/// Negative log-likelihood of the stack restricted to one window per bead
/// (window x window pixels around each anchor; anchors default to the pixel
/// containing the bead). +inf when a mean pixel or the PSF parameters are
/// invalid.
double bead_negloglik(const BeadStack& stack, const BeadParams& params, int window = 13,
                      const std::vector<PixelAnchor>& anchors = {});

/// Flat parameter vector: bead x, y pairs, the 4 shape values, per bead and
/// frame brightness, the background, then pixel-map nodes (if fitted).
class BeadObjective
{
public:
  /// `pixmap` is held fixed unless `fit_pixmap`, in which case its node
  /// values become parameters with an L2 penalty of `pixmap_weight`.
  /// Throws std::invalid_argument when two windows overlap.
  BeadObjective(const BeadStack& stack, std::vector<PixelAnchor> anchors, int window, PsfKind kind,
                std::optional<PixelMap3D> pixmap = std::nullopt, bool fit_pixmap = false,
                double pixmap_weight = 1e-3);

  int n_beads() const { return static_cast<int>(anchors_.size()); }
  int n_frames() const { return n_frames_; }
  int size() const { return dense_size() + pixmap_size(); }
  int dense_size() const { return 2 * n_beads() + kShapeParams + n_beads() * n_frames_ + 1; }
  int pixmap_size() const { return fit_pixmap_ ? static_cast<int>(pixmap_->node_count()) : 0; }

  int ix(int b) const { return 2 * b; }
  int iy(int b) const { return 2 * b + 1; }
  int ishape(int i) const { return 2 * n_beads() + i; }
  int ibright(int b, int k) const { return 2 * n_beads() + kShapeParams + b * n_frames_ + k; }
  int ibackground() const { return dense_size() - 1; }
  int ipixmap(std::size_t node) const { return dense_size() + static_cast<int>(node); }

  Eigen::VectorXd pack(const BeadParams& p) const;
  BeadParams unpack(const Eigen::VectorXd& theta) const;

  /// Includes the pixel-map penalty.
  double value(const Eigen::VectorXd& theta) const;
  double gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const;
  /// Gradient plus the expected information: dense over the non-map
  /// parameters, diagonal over map nodes.
  double information(const Eigen::VectorXd& theta, Eigen::VectorXd& grad, Eigen::MatrixXd& dense,
                     Eigen::VectorXd& pixmap_diag) const;

  /// RMS of standardized residuals per bead.
  std::vector<double> residual_rms(const Eigen::VectorXd& theta) const;

  const std::vector<PixelAnchor>& anchors() const { return anchors_; }

private:
  enum class Mode { Value, Gradient, Information };
  double evaluate(const Eigen::VectorXd& theta, Mode mode, Eigen::VectorXd* grad, Eigen::MatrixXd* dense,
                  Eigen::VectorXd* pixmap_diag) const;

  const BeadStack& stack_;
  std::vector<PixelAnchor> anchors_;
  int window_;
  PsfKind kind_;
  std::optional<PixelMap3D> pixmap_;
  bool fit_pixmap_;
  double pixmap_weight_;
  int n_frames_;
  NoiseModel noise_;
};

struct BeadFitOptions
{
  int window = 13;
  int max_iterations = 500;
  double tolerance = 1e-8;       ///< relative objective change that ends the fit
  bool fit_pixmap = false;
  double pixmap_weight = 1e-3;
  std::optional<PixelMap3D> pixmap_geometry; ///< default: PixelMap3D::zeros(pixel size)
  BeadDetectConfig detect;
};

struct BeadFitResult
{
  std::vector<Point2> beads;
  PsfModel psf;
  std::vector<double> brightness;
  double background = 0.0;
  double negloglik = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace; ///< accepted objective values, first entry is the start
  std::vector<double> bead_residual_rms;
};

/// Joint maximum-likelihood fit of bead positions, PSF shape, brightness,
/// background and optionally the pixel map. Beads are detected when not
/// given. Throws std::invalid_argument when no bead is available or the fit
/// windows overlap.
BeadFitResult fit_psf(const BeadStack& stack, const PsfModel& init, const BeadFitOptions& opts = {},
                      const std::vector<Point2>& beads = {});

} // namespace smlm
