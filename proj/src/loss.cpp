#include "smlm/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace smlm {

namespace {

constexpr double kLog2Pi = 1.8378770664093453; // log(2 pi)
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> v)
{
  double m = kNegInf;
  for (double x : v)
    m = std::max(m, x);
  if (m == kNegInf)
    return kNegInf;
  double s = 0.0;
  for (double x : v)
    s += std::exp(x - m);
  return m + std::log(s);
}

void check_lengths(std::span<const double> a, std::span<const double> b)
{
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("log-weight lists must be non-empty and of equal length");
}

} // namespace

OutputMaps::OutputMaps(int w, int h, double pitch) : width(w), height(h), pixel_size(pitch)
{
  for (auto& c : channels)
    c = ImageD(w, h, 0.0);
}

ImageD GroundTruthSet::indicators(int width, int height, double pixel_size) const
{
  ImageD s(width, height, 0.0);
  for (const auto& e : emitters) {
    const int u = static_cast<int>(std::floor(e.x / pixel_size));
    const int v = static_cast<int>(std::floor(e.y / pixel_size));
    if (s.contains(u, v))
      s(u, v) += 1.0;
  }
  return s;
}

MapLoss gmm_loglik(const OutputMaps& maps, const GroundTruthSet& truth, const LossConfig& cfg)
{
  MapLoss out;
  out.grad = OutputMaps(maps.width, maps.height, maps.pixel_size);
  if (truth.emitters.empty())
    return out;

  const std::size_t K = maps.pixels();
  const auto& p = maps[Channel::P].data();
  double total_p = 0.0;
  for (double v : p)
    total_p += v;
  if (!(total_p > 0.0)) {
    out.value = kNegInf;
    out.degenerate = true;
    return out;
  }

  const int dims = cfg.use_brightness ? 4 : 3;
  const double floor_xyz = cfg.sigma_floor * maps.pixel_size;
  const double floor_alpha = cfg.sigma_floor * cfg.brightness_scale;

  // Component means and sigmas, one row of `dims` per pixel.
  std::vector<double> mu(K * dims), sig(K * dims), log_norm(K, 0.0);
  for (int v = 0; v < maps.height; ++v) {
    for (int u = 0; u < maps.width; ++u) {
      const std::size_t k = maps[Channel::P].index(u, v);
      double* m = &mu[k * dims];
      double* s = &sig[k * dims];
      m[0] = maps.center_x(u) + maps[Channel::Dx].data()[k];
      m[1] = maps.center_y(v) + maps[Channel::Dy].data()[k];
      m[2] = maps[Channel::Dz].data()[k];
      s[0] = maps[Channel::SigX].data()[k] + floor_xyz;
      s[1] = maps[Channel::SigY].data()[k] + floor_xyz;
      s[2] = maps[Channel::SigZ].data()[k] + floor_xyz;
      if (dims == 4) {
        m[3] = maps[Channel::Alpha].data()[k];
        s[3] = maps[Channel::SigAlpha].data()[k] + floor_alpha;
      }
      for (int d = 0; d < dims; ++d)
        log_norm[k] -= 0.5 * kLog2Pi + std::log(s[d]);
    }
  }

  std::vector<double> log_n(K), terms(K);
  std::vector<double> g_mu(K * dims, 0.0), g_sig(K * dims, 0.0), g_p(K, 0.0);
  for (const auto& e : truth.emitters) {
    const double x[4] = {e.x, e.y, e.z, e.photons};
    for (std::size_t k = 0; k < K; ++k) {
      double q = 0.0;
      for (int d = 0; d < dims; ++d) {
        const double r = (x[d] - mu[k * dims + d]) / sig[k * dims + d];
        q += r * r;
      }
      log_n[k] = log_norm[k] - 0.5 * q;
      terms[k] = p[k] > 0.0 ? std::log(p[k]) + log_n[k] : kNegInf;
    }
    const double lse = log_sum_exp(terms);
    if (lse == kNegInf) {
      out.value = kNegInf;
      out.degenerate = true;
      return out;
    }
    out.value += lse - std::log(total_p);
    for (std::size_t k = 0; k < K; ++k) {
      // d/dp_k log sum_k p_k N_k = N_k / sum p N
      const double n_over = std::exp(log_n[k] - lse);
      g_p[k] += n_over;
      const double resp = p[k] * n_over;
      if (resp == 0.0)
        continue;
      for (int d = 0; d < dims; ++d) {
        const double s = sig[k * dims + d];
        const double r = (x[d] - mu[k * dims + d]) / s;
        g_mu[k * dims + d] += resp * r / s;
        g_sig[k * dims + d] += resp * (r * r - 1.0) / s;
      }
    }
  }

  const double n = static_cast<double>(truth.emitters.size());
  for (std::size_t k = 0; k < K; ++k) {
    out.grad[Channel::P].data()[k] = g_p[k] - n / total_p;
    out.grad[Channel::Dx].data()[k] = g_mu[k * dims + 0];
    out.grad[Channel::Dy].data()[k] = g_mu[k * dims + 1];
    out.grad[Channel::Dz].data()[k] = g_mu[k * dims + 2];
    out.grad[Channel::SigX].data()[k] = g_sig[k * dims + 0];
    out.grad[Channel::SigY].data()[k] = g_sig[k * dims + 1];
    out.grad[Channel::SigZ].data()[k] = g_sig[k * dims + 2];
    if (dims == 4) {
      out.grad[Channel::Alpha].data()[k] = g_mu[k * dims + 3];
      out.grad[Channel::SigAlpha].data()[k] = g_sig[k * dims + 3];
    }
  }
  return out;
}

CountMoments count_moments(std::span<const double> p)
{
  CountMoments m;
  for (double v : p) {
    m.mean += v;
    m.variance += v - v * v;
  }
  return m;
}

CountLoss count_loglik(const ImageD& p, double true_count, const LossConfig& cfg)
{
  CountLoss out;
  out.grad_p = ImageD(p.width(), p.height(), 0.0);
  const CountMoments m = count_moments(p.data());
  double var = m.variance;
  if (!(var > cfg.count_var_floor)) {
    var = cfg.count_var_floor;
    out.degenerate = true;
  }
  const double r = true_count - m.mean;
  out.value = -0.5 * (kLog2Pi + std::log(var)) - 0.5 * r * r / var;

  const double d_mean = r / var;
  const double d_var = out.degenerate ? 0.0 : -0.5 / var + 0.5 * r * r / (var * var);
  for (std::size_t k = 0; k < p.size(); ++k)
    out.grad_p.data()[k] = d_mean + d_var * (1.0 - 2.0 * p.data()[k]);
  return out;
}

MapLoss decode_loss(const OutputMaps& maps, const GroundTruthSet& truth, const LossConfig& cfg)
{
  MapLoss out = gmm_loglik(maps, truth, cfg);
  const double s = static_cast<double>(truth.count());
  if (s == 0.0)
    return out; // the count term is weighted by S = 0
  const CountLoss count = count_loglik(maps[Channel::P], s, cfg);
  out.value += s * count.value;
  for (std::size_t k = 0; k < maps.pixels(); ++k)
    out.grad[Channel::P].data()[k] += s * count.grad_p.data()[k];
  return out;
}

ContextLoss context_consistency(const OutputMaps& prev, const OutputMaps& cur, const OutputMaps& next,
                                const ImageD& s_prev, const ImageD& s_cur, const ImageD& s_next,
                                const LossConfig& cfg)
{
  const auto same = [&](const OutputMaps& m) { return m.width == cur.width && m.height == cur.height; };
  if (!same(prev) || !same(next) || s_prev.width() != cur.width || s_prev.height() != cur.height ||
      !s_cur.same_shape(s_prev) || !s_next.same_shape(s_prev))
    throw std::invalid_argument("context_consistency: grid geometry differs between frames");

  ContextLoss out;
  out.grad_prev = OutputMaps(cur.width, cur.height, cur.pixel_size);
  out.grad_cur = OutputMaps(cur.width, cur.height, cur.pixel_size);
  out.grad_next = OutputMaps(cur.width, cur.height, cur.pixel_size);

  constexpr Channel mu_ch[3] = {Channel::Dx, Channel::Dy, Channel::Dz};
  constexpr Channel sig_ch[3] = {Channel::SigX, Channel::SigY, Channel::SigZ};
  const double floor = cfg.sigma_floor * cur.pixel_size;

  const auto accumulate = [&](const OutputMaps& other, const ImageD& s_other, OutputMaps& g_other) {
    for (std::size_t k = 0; k < cur.pixels(); ++k) {
      const double w = s_cur.data()[k] * s_other.data()[k];
      if (w == 0.0)
        continue;
      for (int d = 0; d < 3; ++d) {
        const double s = other[sig_ch[d]].data()[k] + floor;
        const double r = (cur[mu_ch[d]].data()[k] - other[mu_ch[d]].data()[k]) / s;
        out.value += w * (-0.5 * kLog2Pi - std::log(s) - 0.5 * r * r);
        out.grad_cur[mu_ch[d]].data()[k] += -w * r / s;
        g_other[mu_ch[d]].data()[k] += w * r / s;
        g_other[sig_ch[d]].data()[k] += w * (r * r - 1.0) / s;
      }
    }
  };
  accumulate(prev, s_prev, out.grad_prev);
  accumulate(next, s_next, out.grad_next);
  return out;
}

std::vector<double> importance_weights(std::span<const double> log_p_joint, std::span<const double> log_q)
{
  check_lengths(log_p_joint, log_q);
  std::vector<double> w(log_q.size());
  for (std::size_t j = 0; j < w.size(); ++j)
    w[j] = log_p_joint[j] - log_q[j];
  const double lse = log_sum_exp(w);
  for (double& x : w)
    x = std::exp(x - lse);
  return w;
}

double iw_bound(std::span<const double> log_p_joint, std::span<const double> log_q)
{
  check_lengths(log_p_joint, log_q);
  std::vector<double> w(log_q.size());
  for (std::size_t j = 0; j < w.size(); ++j)
    w[j] = log_p_joint[j] - log_q[j];
  return log_sum_exp(w) - std::log(static_cast<double>(w.size()));
}

WakeObjective rws_wake_objective(std::span<const double> log_p_joint, std::span<const double> log_q)
{
  WakeObjective out;
  out.grad_log_q = importance_weights(log_p_joint, log_q);
  for (std::size_t j = 0; j < log_q.size(); ++j)
    out.value += out.grad_log_q[j] * log_q[j];
  return out;
}

CrossEntropy bernoulli_crossentropy(const ImageD& p, const ImageD& indicators)
{
  if (!p.same_shape(indicators))
    throw std::invalid_argument("bernoulli_crossentropy: shape mismatch");
  constexpr double kEps = 1e-7;
  CrossEntropy out;
  out.grad_p = ImageD(p.width(), p.height(), 0.0);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double raw = p.data()[k];
    const double q = std::clamp(raw, kEps, 1.0 - kEps);
    const double s = indicators.data()[k];
    out.value += s * std::log(q) + (1.0 - s) * std::log(1.0 - q);
    if (raw > kEps && raw < 1.0 - kEps)
      out.grad_p.data()[k] = s / q - (1.0 - s) / (1.0 - q);
  }
  return out;
}

} // namespace smlm
