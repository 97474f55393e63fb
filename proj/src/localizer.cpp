#include "smlm/localizer.hpp"
#include "smlm/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace smlm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double median_of(std::vector<double> v)
{
  if (v.empty())
    return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (v.size() % 2 == 0)
    m = 0.5 * (m + *std::max_element(v.begin(), mid));
  return m;
}

// Separable Gaussian blur, renormalized at the borders. Each output is
// divided by the L2 norm of its weights so that white noise keeps the same
// spread everywhere, including near the edges.
ImageD smooth_standardized(const ImageD& img, double sigma)
{
  if (!(sigma > 0))
    return img;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  for (int i = -r; i <= r; ++i)
    k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));

  // 1D pass along one axis of length n; writes the mean and the weight norm.
  auto pass = [&](int n, auto&& get, std::vector<double>& mean, std::vector<double>& norm2) {
    mean.assign(n, 0.0);
    norm2.assign(n, 0.0);
    for (int j = 0; j < n; ++j) {
      double acc = 0, wsum = 0, w2 = 0;
      for (int i = -r; i <= r; ++i)
        if (j + i >= 0 && j + i < n) {
          acc += k[i + r] * get(j + i);
          wsum += k[i + r];
          w2 += k[i + r] * k[i + r];
        }
      mean[j] = acc / wsum;
      norm2[j] = w2 / (wsum * wsum);
    }
  };

  const int w = img.width(), h = img.height();
  ImageD tmp(w, h), out(w, h);
  std::vector<double> mean, nx2, ny2;
  for (int v = 0; v < h; ++v) {
    pass(w, [&](int u) { return img(u, v); }, mean, nx2);
    for (int u = 0; u < w; ++u)
      tmp(u, v) = mean[u];
  }
  for (int u = 0; u < w; ++u) {
    pass(h, [&](int v) { return tmp(u, v); }, mean, ny2);
    for (int v = 0; v < h; ++v)
      out(u, v) = mean[v];
  }
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u)
      out(u, v) /= std::sqrt(nx2[u] * ny2[v]);
  return out;
}

bool valid_theta(const RoiTheta& t)
{
  for (double v : t)
    if (!std::isfinite(v))
      return false;
  return t[kRoiPhotons] > 0 && t[kRoiBackground] > 0;
}

} // namespace

void LocalizerConfig::validate() const
{
  if (!(threshold_k > 0))
    throw std::invalid_argument("localizer: threshold_k must be > 0");
  if (!(smoothing_sigma >= 0))
    throw std::invalid_argument("localizer: smoothing_sigma must be >= 0");
  if (roi_size < 3)
    throw std::invalid_argument("localizer: roi_size must be >= 3");
  if (max_iterations < 1)
    throw std::invalid_argument("localizer: max_iterations must be >= 1");
  if (!(z_limit > 0))
    throw std::invalid_argument("localizer: z_limit must be > 0");
}

std::vector<Candidate> detect_candidates(const ImageD& frame, const LocalizerConfig& cfg, double baseline,
                                         int frame_index)
{
  std::vector<Candidate> out;
  if (frame.size() == 0)
    return out;
  ImageD centered = frame;
  for (auto& v : centered.data())
    v = std::cbrt(v - baseline);
  const double bg = median_of(centered.data());
  for (auto& v : centered.data())
    v -= bg;
  ImageD s = smooth_standardized(centered, cfg.smoothing_sigma);

  const double level = median_of(s.data());
  std::vector<double> dev(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    dev[i] = std::abs(s.data()[i] - level);
  const double scale = std::max(1.4826 * median_of(dev), 1e-12);
  const double threshold = level + cfg.threshold_k * scale;

  for (int v = 0; v < s.height(); ++v)
    for (int u = 0; u < s.width(); ++u) {
      const double c = s(u, v);
      if (!(c > threshold))
        continue;
      bool peak = true;
      for (int dv = -1; dv <= 1 && peak; ++dv)
        for (int du = -1; du <= 1; ++du) {
          if ((du == 0 && dv == 0) || !s.contains(u + du, v + dv))
            continue;
          const double n = s(u + du, v + dv);
          const bool earlier = dv < 0 || (dv == 0 && du < 0);
          if (earlier ? !(c > n) : !(c >= n)) {
            peak = false;
            break;
          }
        }
      if (peak)
        out.push_back({frame_index, u, v, c});
    }
  return out;
}

RoiObjective::RoiObjective(const ImageD& frame, const PixelGrid& grid, const PsfModel& psf, const NoiseModel& noise,
                           int u0, int v0, int w, int h)
  : frame_(frame), grid_(grid), psf_(psf), noise_(noise), u0_(u0), v0_(v0), w_(w), h_(h)
{
}

double RoiObjective::value(const RoiTheta& t) const
{
  double f = 0.0;
  for (int v = v0_; v < v0_ + h_; ++v)
    for (int u = u0_; u < u0_ + w_; ++u) {
      if (!uses(u, v))
        continue;
      const double mu = t[kRoiBackground] +
                        t[kRoiPhotons] * eval_psf(psf_, grid_.center_x(u) - t[kRoiX], grid_.center_y(v) - t[kRoiY], -t[kRoiZ]);
      f += noise_.nll(frame_(u, v), mu, frame_.index(u, v));
    }
  return f;
}

double RoiObjective::pearson(const RoiTheta& t, int& used) const
{
  double chi2 = 0.0;
  used = 0;
  const double baseline = noise_.baseline();
  for (int v = v0_; v < v0_ + h_; ++v)
    for (int u = u0_; u < u0_ + w_; ++u) {
      if (!uses(u, v))
        continue;
      const double mu = t[kRoiBackground] +
                        t[kRoiPhotons] * eval_psf(psf_, grid_.center_x(u) - t[kRoiX], grid_.center_y(v) - t[kRoiY], -t[kRoiZ]);
      const double r = frame_(u, v) - baseline - mu;
      chi2 += r * r / noise_.variance(mu, frame_.index(u, v));
      ++used;
    }
  return chi2;
}

double RoiObjective::gradient(const RoiTheta& t, RoiTheta& grad) const
{
  std::array<double, kRoiParams * kRoiParams> unused{};
  return fisher(t, grad, unused);
}

double RoiObjective::fisher(const RoiTheta& t, RoiTheta& grad, std::array<double, kRoiParams * kRoiParams>& info) const
{
  grad.fill(0.0);
  info.fill(0.0);
  double f = 0.0;
  const double n = t[kRoiPhotons];
  for (int v = v0_; v < v0_ + h_; ++v)
    for (int u = u0_; u < u0_ + w_; ++u) {
      if (!uses(u, v))
        continue;
      const PsfGradient g = eval_psf_gradient(psf_, grid_.center_x(u) - t[kRoiX], grid_.center_y(v) - t[kRoiY], -t[kRoiZ]);
      const double mu = t[kRoiBackground] + n * g.value;
      const NoiseModel::Term term = noise_.term(frame_(u, v), mu, frame_.index(u, v));
      f += term.nll;
      const RoiTheta dmu{-n * g.d[kSlotDx], -n * g.d[kSlotDy], -n * g.d[kSlotDz], g.value, 1.0};
      for (int i = 0; i < kRoiParams; ++i) {
        grad[i] += term.d_mean * dmu[i];
        for (int j = 0; j < kRoiParams; ++j)
          info[i * kRoiParams + j] += term.fisher * dmu[i] * dmu[j];
      }
    }
  return f;
}

namespace {

struct StartResult
{
  RoiTheta theta{};
  double f = kInf;
  int iterations = 0;
  bool converged = false;
};

// Levenberg-Marquardt on the expected information. `free` marks the
// parameters that move.
StartResult optimize(const RoiObjective& obj, RoiTheta theta, const std::array<bool, kRoiParams>& free, int max_iterations)
{
  using Mat = Eigen::Matrix<double, kRoiParams, kRoiParams>;
  using Vec = Eigen::Matrix<double, kRoiParams, 1>;

  StartResult res;
  RoiTheta grad;
  std::array<double, kRoiParams * kRoiParams> info;
  double f = obj.fisher(theta, grad, info);
  if (!std::isfinite(f)) {
    res.theta = theta;
    return res;
  }
  double lambda = 1e-3;
  int it = 0;
  bool converged = false;
  while (it < max_iterations) {
    ++it;
    Mat F;
    Vec g;
    for (int i = 0; i < kRoiParams; ++i) {
      g(i) = free[i] ? grad[i] : 0.0;
      for (int j = 0; j < kRoiParams; ++j)
        F(i, j) = (free[i] && free[j]) ? info[i * kRoiParams + j] : (i == j ? 1.0 : 0.0);
    }

    bool accepted = false;
    while (lambda < 1e12) {
      Mat A = F;
      for (int i = 0; i < kRoiParams; ++i)
        A(i, i) += lambda * std::max(F(i, i), 1e-12);
      const Vec step = A.ldlt().solve(-g);
      RoiTheta trial = theta;
      for (int i = 0; i < kRoiParams; ++i)
        trial[i] += step(i);
      const double ft = valid_theta(trial) ? obj.value(trial) : kInf;
      if (std::isfinite(ft) && ft <= f) {
        const double drop = f - ft;
        theta = trial;
        f = obj.fisher(theta, grad, info);
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (drop < 1e-9 * std::max(1.0, std::abs(f)))
          converged = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      // No descent left: accept as a stationary point if the Newton
      // decrement is negligible.
      Vec g;
      Mat F;
      for (int i = 0; i < kRoiParams; ++i) {
        g(i) = free[i] ? grad[i] : 0.0;
        for (int j = 0; j < kRoiParams; ++j)
          F(i, j) = (free[i] && free[j]) ? info[i * kRoiParams + j] : (i == j ? 1.0 : 0.0);
      }
      const double dec = g.dot(F.ldlt().solve(g));
      converged = std::isfinite(dec) && dec < 1e-6;
      break;
    }
    if (converged)
      break;
  }
  res.theta = theta;
  res.f = f;
  res.iterations = it;
  res.converged = converged;
  return res;
}

} // namespace

RoiFit fit_roi(const ImageD& frame, const PixelGrid& grid, const Candidate& candidate, const PsfModel& psf,
               const NoiseModel& noise, const LocalizerConfig& cfg, const std::vector<Candidate>& others)
{
  const int half = cfg.roi_size / 2;
  const int u_lo = std::max(0, candidate.u - half), v_lo = std::max(0, candidate.v - half);
  const int u_hi = std::min(frame.width(), candidate.u - half + cfg.roi_size);
  const int v_hi = std::min(frame.height(), candidate.v - half + cfg.roi_size);

  RoiFit fit;
  fit.roi_u0 = u_lo;
  fit.roi_v0 = v_lo;
  fit.roi_w = u_hi - u_lo;
  fit.roi_h = v_hi - v_lo;
  fit.shrunk = fit.roi_w < cfg.roi_size || fit.roi_h < cfg.roi_size;
  fit.sig_x = fit.sig_y = fit.sig_z = fit.sig_photons = fit.sig_background = kInf;
  if (fit.roi_w < 3 || fit.roi_h < 3)
    return fit;

  const double baseline = noise.baseline();
  std::vector<double> edge;
  for (int v = v_lo; v < v_hi; ++v)
    for (int u = u_lo; u < u_hi; ++u)
      if (u == u_lo || u == u_hi - 1 || v == v_lo || v == v_hi - 1)
        edge.push_back(frame(u, v) - baseline);
  const double b0 = std::max(median_of(edge), 0.1);

  double n0 = 0.0;
  for (int v = v_lo; v < v_hi; ++v)
    for (int u = u_lo; u < u_hi; ++u)
      n0 += std::max(frame(u, v) - baseline - b0, 0.0);
  n0 = std::max(n0, 1.0);

  double cx = 0, cy = 0, cw = 0;
  for (int v = candidate.v - 2; v <= candidate.v + 2; ++v)
    for (int u = candidate.u - 2; u <= candidate.u + 2; ++u) {
      if (!frame.contains(u, v))
        continue;
      const double e = std::max(frame(u, v) - baseline - b0, 0.0);
      cx += e * grid.center_x(u);
      cy += e * grid.center_y(v);
      cw += e;
    }
  const double x0 = cw > 0 ? cx / cw : grid.center_x(candidate.u);
  const double y0 = cw > 0 ? cy / cw : grid.center_y(candidate.v);

  const bool planar = psf.kind() == PsfKind::TwoD;
  std::vector<double> starts = cfg.z_starts;
  if (starts.empty())
    starts = planar ? std::vector<double>{0.0} : std::vector<double>{-300.0, 0.0, 300.0};
  std::array<bool, kRoiParams> free{true, true, !planar, true, true};

  RoiObjective obj(frame, grid, psf, noise, u_lo, v_lo, fit.roi_w, fit.roi_h);
  if (!others.empty()) {
    std::vector<char> mask(static_cast<std::size_t>(fit.roi_w) * fit.roi_h, 1);
    for (int v = v_lo; v < v_hi; ++v)
      for (int u = u_lo; u < u_hi; ++u) {
        const int own = (u - candidate.u) * (u - candidate.u) + (v - candidate.v) * (v - candidate.v);
        for (const Candidate& o : others)
          if ((u - o.u) * (u - o.u) + (v - o.v) * (v - o.v) < own)
            mask[static_cast<std::size_t>(v - v_lo) * fit.roi_w + (u - u_lo)] = 0;
      }
    obj.set_mask(std::move(mask));
  }
  StartResult best;
  bool best_converged = false;
  for (double z0 : starts) {
    const StartResult r = optimize(obj, RoiTheta{x0, y0, planar ? 0.0 : z0, n0, b0}, free, cfg.max_iterations);
    const bool better = (r.converged && !best_converged) || (r.converged == best_converged && r.f < best.f);
    if (better || best.iterations == 0) {
      best = r;
      best_converged = r.converged;
    }
  }

  const RoiTheta& t = best.theta;
  fit.x = t[kRoiX];
  fit.y = t[kRoiY];
  fit.z = t[kRoiZ];
  fit.photons = t[kRoiPhotons];
  fit.background = t[kRoiBackground];
  fit.negloglik = best.f;
  fit.iterations = best.iterations;

  const double ps = grid.pixel_size;
  const bool inside = t[kRoiX] >= grid.origin_x + u_lo * ps && t[kRoiX] <= grid.origin_x + u_hi * ps &&
                      t[kRoiY] >= grid.origin_y + v_lo * ps && t[kRoiY] <= grid.origin_y + v_hi * ps &&
                      std::abs(t[kRoiZ]) <= cfg.z_limit;
  fit.converged = best.converged && inside && std::isfinite(best.f);
  if (!valid_theta(t) || !std::isfinite(best.f))
    return fit;

  int used = 0;
  fit.chi2 = obj.pearson(t, used);
  fit.dof = used - static_cast<int>(std::count(free.begin(), free.end(), true));
  if (cfg.max_fit_excess > 0 && fit.dof > 0 &&
      !(fit.chi2 <= fit.dof + cfg.max_fit_excess * std::sqrt(2.0 * fit.dof))) {
    fit.poor_fit = true;
    fit.converged = false;
  }

  // Observed information by central differences of the analytic gradient.
  std::vector<int> idx;
  for (int i = 0; i < kRoiParams; ++i)
    if (free[i])
      idx.push_back(i);
  const int m = static_cast<int>(idx.size());
  Eigen::MatrixXd H(m, m);
  for (int a = 0; a < m; ++a) {
    const int j = idx[a];
    const double h = (j == kRoiPhotons || j == kRoiBackground) ? 1e-5 * std::max(t[j], 1.0) : 1e-2;
    RoiTheta tp = t, tm = t, gp, gm;
    tp[j] += h;
    tm[j] -= h;
    obj.gradient(tp, gp);
    obj.gradient(tm, gm);
    for (int b = 0; b < m; ++b)
      H(b, a) = (gp[idx[b]] - gm[idx[b]]) / (2.0 * h);
  }
  H = 0.5 * (H + H.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success || !H.allFinite())
    return fit;
  const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(m, m));
  std::array<double, kRoiParams> sig;
  sig.fill(0.0);
  for (int a = 0; a < m; ++a) {
    if (!(cov(a, a) > 0) || !std::isfinite(cov(a, a)))
      return fit;
    sig[idx[a]] = std::sqrt(cov(a, a));
  }
  fit.hessian_pd = true;
  fit.sig_x = sig[kRoiX];
  fit.sig_y = sig[kRoiY];
  fit.sig_z = sig[kRoiZ];
  fit.sig_photons = sig[kRoiPhotons];
  fit.sig_background = sig[kRoiBackground];
  return fit;
}

std::vector<RoiFit> localize_frame(const ImageD& frame, const PixelGrid& grid, int frame_index, const PsfModel& psf,
                                   const NoiseModel& noise, const LocalizerConfig& cfg)
{
  const auto candidates = detect_candidates(frame, cfg, noise.baseline(), frame_index);
  std::vector<RoiFit> fits;
  fits.reserve(candidates.size());
  const double crowd = 0.5 * cfg.roi_size;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    std::vector<Candidate> others;
    for (std::size_t j = 0; j < candidates.size(); ++j)
      if (j != i && std::abs(candidates[i].u - candidates[j].u) <= cfg.roi_size &&
          std::abs(candidates[i].v - candidates[j].v) <= cfg.roi_size)
        others.push_back(candidates[j]);
    RoiFit f = fit_roi(frame, grid, candidates[i], psf, noise, cfg, others);
    for (const Candidate& o : others)
      if (std::hypot(candidates[i].u - o.u, candidates[i].v - o.v) < crowd)
        f.crowded = true;
    fits.push_back(f);
  }
  return fits;
}

LocalizationTable localize_stack(const FrameStack& stack, const PsfModel& psf, const Camera& camera,
                                 const LocalizerConfig& cfg)
{
  cfg.validate();
  validate(psf);
  validate(camera);
  const NoiseModel noise(camera);
  const PixelGrid grid = stack.grid();
  std::vector<LocalizationTable> per_frame(static_cast<std::size_t>(stack.n_frames()));
  parallel_for(per_frame.size(), [&](std::size_t k) {
    const int t = static_cast<int>(k);
    for (const RoiFit& f : localize_frame(stack.frame(t), grid, t, psf, noise, cfg)) {
      if (!f.converged)
        continue;
      Localization row;
      row.frame = t;
      row.x = f.x;
      row.y = f.y;
      row.z = f.z;
      row.photons = f.photons;
      row.prob = 1.0;
      row.sig_x = f.sig_x;
      row.sig_y = f.sig_y;
      row.sig_z = f.sig_z;
      per_frame[k].push_back(row);
    }
  });
  LocalizationTable table;
  for (auto& rows : per_frame)
    table.insert(table.end(), rows.begin(), rows.end());
  return table;
}

} // namespace smlm
