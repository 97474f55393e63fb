#include "smlm/camera.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace smlm {

void validate(const Camera& camera)
{
  if (const auto* em = std::get_if<CameraEmccd>(&camera)) {
    if (!(em->em_gain > 0) || !(em->e_per_count > 0))
      throw std::invalid_argument("EMCCD: em_gain and e_per_count must be > 0");
    if (!(em->background >= 0))
      throw std::invalid_argument("EMCCD: background must be >= 0");
  } else {
    const auto& sc = std::get<CameraScmos>(camera);
    if (!(sc.gain > 0))
      throw std::invalid_argument("sCMOS: gain must be > 0");
    if (!(sc.background >= 0))
      throw std::invalid_argument("sCMOS: background must be >= 0");
    for (double v : sc.var_map.data())
      if (!(v >= 0))
        throw std::invalid_argument("sCMOS: variance map values must be >= 0");
  }
}

double camera_baseline(const Camera& camera)
{
  return std::visit([](const auto& c) { return c.baseline; }, camera);
}

double camera_background(const Camera& camera)
{
  return std::visit([](const auto& c) { return c.background; }, camera);
}

std::string camera_tag(const Camera& camera)
{
  return std::holds_alternative<CameraEmccd>(camera) ? "emccd" : "scmos";
}

ImageD sample_emccd(const ImageD& mean, const CameraEmccd& cam, Rng& rng)
{
  const double eta = cam.eta();
  if (!(eta > 0))
    throw std::invalid_argument("EMCCD: eta must be > 0");
  ImageD out(mean.width(), mean.height());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double signal = mean.data()[i] - cam.baseline;
    if (!(signal > 0))
      throw std::invalid_argument("EMCCD: mean intensity must exceed the baseline");
    std::gamma_distribution<double> gamma(signal / eta, eta);
    out.data()[i] = gamma(rng) + cam.baseline;
  }
  return out;
}

ImageD sample_scmos(const ImageD& mean, const CameraScmos& cam, Rng& rng)
{
  if (!cam.var_map.same_shape(mean))
    throw std::invalid_argument("sCMOS: variance map shape does not match the frame");
  ImageD out(mean.width(), mean.height());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double level = mean.data()[i];
    if (!(level > 0))
      throw std::invalid_argument("sCMOS: mean intensity must be > 0");
    const double eta = (cam.var_map.data()[i] + cam.gain * (level - cam.baseline)) / level;
    if (!(eta > 0))
      throw std::invalid_argument("sCMOS: non-positive eta");
    std::gamma_distribution<double> gamma(level / eta, eta);
    out.data()[i] = gamma(rng);
  }
  return out;
}

ImageD sample_camera(const ImageD& mean, const Camera& cam, Rng& rng)
{
  if (const auto* em = std::get_if<CameraEmccd>(&cam))
    return sample_emccd(mean, *em, rng);
  return sample_scmos(mean, std::get<CameraScmos>(cam), rng);
}

NoiseModel::NoiseModel(Camera camera) : camera_(std::move(camera))
{
  validate(camera_);
}

namespace {

// log Gamma(y; k, theta) and its partials in (k, theta).
struct GammaTerm
{
  double logp, d_k, d_theta;
};

GammaTerm gamma_term(double y, double k, double theta)
{
  const double log_y = std::log(y);
  const double log_t = std::log(theta);
  GammaTerm g;
  g.logp = (k - 1.0) * log_y - y / theta - std::lgamma(k) - k * log_t;
  g.d_k = log_y - boost::math::digamma(k) - log_t;
  g.d_theta = y / (theta * theta) - k / theta;
  return g;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

} // namespace

NoiseModel::Term NoiseModel::term(double observed, double mean, std::size_t pixel) const
{
  Term t;
  if (const auto* em = std::get_if<CameraEmccd>(&camera_)) {
    const double eta = em->eta();
    if (!(mean > 0) || !std::isfinite(mean)) {
      t.nll = kInf;
      return t;
    }
    // Observations at or below the baseline carry no Gamma density; clamp them.
    const double y = std::max(observed - em->baseline, 1e-3 * eta);
    const double k = mean / eta;
    const GammaTerm g = gamma_term(y, k, eta);
    t.nll = -g.logp;
    t.d_mean = -g.d_k / eta;
    t.fisher = boost::math::trigamma(k) / (eta * eta);
    return t;
  }

  const auto& sc = std::get<CameraScmos>(camera_);
  const double level = sc.baseline + mean;
  const double var = sc.var_map.data()[pixel] + sc.gain * mean;
  if (!(level > 0) || !(var > 0) || !std::isfinite(mean)) {
    t.nll = kInf;
    return t;
  }
  const double theta = var / level;
  const double k = level * level / var;
  const double y = std::max(observed, 1e-3 * theta);
  const GammaTerm g = gamma_term(y, k, theta);
  const double dtheta = (sc.gain * level - var) / (level * level);
  const double dk = (2.0 * level * var - level * level * sc.gain) / (var * var);
  t.nll = -g.logp;
  t.d_mean = -(g.d_k * dk + g.d_theta * dtheta);
  // Fisher matrix of Gamma in (k, theta): [[psi1(k), 1/theta], [1/theta, k/theta^2]].
  t.fisher = boost::math::trigamma(k) * dk * dk + 2.0 * dk * dtheta / theta + k * dtheta * dtheta / (theta * theta);
  return t;
}

double NoiseModel::variance(double mean, std::size_t pixel) const
{
  if (const auto* em = std::get_if<CameraEmccd>(&camera_))
    return em->eta() * mean;
  const auto& sc = std::get<CameraScmos>(camera_);
  return sc.var_map.data()[pixel] + sc.gain * mean;
}

} // namespace smlm
