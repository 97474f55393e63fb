#pragma once

#include "smlm/image.hpp"

#include <array>
#include <span>
#include <string_view>
#include <vector>

namespace smlm {

enum class Channel : int { P = 0, Alpha, Dx, Dy, Dz, SigAlpha, SigX, SigY, SigZ };
inline constexpr int kChannelCount = 9;
inline constexpr std::array<std::string_view, kChannelCount> kChannelNames = {
  "p", "alpha", "dx", "dy", "dz", "sig_alpha", "sig_x", "sig_y", "sig_z"};

/// Per-pixel network outputs for one frame. Offsets and sigmas are in nm;
/// the component mean of pixel k is (center_x + dx, center_y + dy, dz).
struct OutputMaps
{
  int width = 0;
  int height = 0;
  double pixel_size = 100.0;
  std::array<ImageD, kChannelCount> channels;

  OutputMaps() = default;
  OutputMaps(int w, int h, double pitch);

  ImageD& operator[](Channel c) { return channels[static_cast<int>(c)]; }
  const ImageD& operator[](Channel c) const { return channels[static_cast<int>(c)]; }
  std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  double center_x(int u) const { return (u + 0.5) * pixel_size; }
  double center_y(int v) const { return (v + 0.5) * pixel_size; }
};

struct TruthEmitter
{
  double x = 0.0, y = 0.0, z = 0.0;
  double photons = 0.0;
};

/// Ground-truth emitters of one frame.
struct GroundTruthSet
{
  std::vector<TruthEmitter> emitters;

  std::size_t count() const { return emitters.size(); }
  /// Per-pixel emitter counts on the given grid; each emitter goes to the
  /// pixel that contains it.
  ImageD indicators(int width, int height, double pixel_size) const;
};

struct LossConfig
{
  /// Added to every sigma output, in units of the pixel pitch (brightness:
  /// units of brightness_scale).
  double sigma_floor = 0.01;
  double brightness_scale = 1.0;
  /// Include (alpha, sig_alpha) as a fourth mixture dimension.
  bool use_brightness = false;
  /// Lower bound on the Gaussian count-surrogate variance.
  double count_var_floor = 1e-6;
};

/// Scalar log-likelihood with its gradient w.r.t. every map entry.
struct MapLoss
{
  double value = 0.0;
  OutputMaps grad;
  bool degenerate = false;
};

/// Sum over emitters of the log mixture density, mixture weights p_k / sum p.
MapLoss gmm_loglik(const OutputMaps& maps, const GroundTruthSet& truth, const LossConfig& cfg = {});

struct CountMoments
{
  double mean = 0.0;
  double variance = 0.0;
};

/// Mean and variance of the Poisson-binomial count implied by the p map.
CountMoments count_moments(std::span<const double> p);

struct CountLoss
{
  double value = 0.0;
  ImageD grad_p;
  bool degenerate = false; // variance hit the floor
};

/// log N(S | sum p, sum p - p^2).
CountLoss count_loglik(const ImageD& p, double true_count, const LossConfig& cfg = {});

/// gmm_loglik + S * count_loglik, S = number of ground-truth emitters.
MapLoss decode_loss(const OutputMaps& maps, const GroundTruthSet& truth, const LossConfig& cfg = {});

struct ContextLoss
{
  double value = 0.0;
  OutputMaps grad_prev, grad_cur, grad_next;
};

/// Sum over pixels of S_t S_{t-1} log N(mu_t | mu_{t-1}, Sigma_{t-1}) +
/// S_t S_{t+1} log N(mu_t | mu_{t+1}, Sigma_{t+1}), mu being the (dx, dy, dz)
/// offsets. The result is meant to be subtracted from the objective.
ContextLoss context_consistency(const OutputMaps& prev, const OutputMaps& cur, const OutputMaps& next,
                                const ImageD& s_prev, const ImageD& s_cur, const ImageD& s_next,
                                const LossConfig& cfg = {});

/// Normalised importance weights softmax(log_p_joint - log_q).
std::vector<double> importance_weights(std::span<const double> log_p_joint, std::span<const double> log_q);

/// log((1/J) sum_j exp(log_p_joint_j - log_q_j)).
double iw_bound(std::span<const double> log_p_joint, std::span<const double> log_q);

struct WakeObjective
{
  double value = 0.0;
  /// d value / d log_q_j with the weights held constant, i.e. the weights.
  std::vector<double> grad_log_q;
};

/// sum_j w_j * log_q_j with the normalised weights treated as constants.
WakeObjective rws_wake_objective(std::span<const double> log_p_joint, std::span<const double> log_q);

struct CrossEntropy
{
  double value = 0.0;
  ImageD grad_p;
};

/// sum_k S_k log p_k + (1 - S_k) log(1 - p_k), p clamped to [1e-7, 1 - 1e-7].
CrossEntropy bernoulli_crossentropy(const ImageD& p, const ImageD& indicators);

} // namespace smlm
