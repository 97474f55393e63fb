#include "smlm/calibration.hpp"
#include "smlm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

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

bool shape_ok(const ParametricPsf& p)
{
  try {
    validate(p);
  } catch (const std::invalid_argument&) {
    return false;
  }
  return true;
}

// Local parameter slots of one (bead, frame) work item.
constexpr int kLocX = 0, kLocY = 1, kLocShape = 2, kLocBright = 6, kLocBackground = 7, kLocParams = 8;

struct ItemAccum
{
  double f = 0.0;
  Eigen::Matrix<double, kLocParams, 1> g = Eigen::Matrix<double, kLocParams, 1>::Zero();
  Eigen::Matrix<double, kLocParams, kLocParams> info = Eigen::Matrix<double, kLocParams, kLocParams>::Zero();
  std::vector<std::pair<std::size_t, double>> map_grad;
  std::vector<std::pair<std::size_t, double>> map_info;
};

} // namespace

void BeadStack::validate() const
{
  frames.validate();
  if (!(dz != 0.0) || !std::isfinite(dz) || !std::isfinite(z0))
    throw std::invalid_argument("bead stack: dz must be finite and non-zero");
  if (frames.n_frames() < 3)
    throw std::invalid_argument("bead stack: at least 3 frames required");
  smlm::validate(camera);
  if (const auto* s = std::get_if<CameraScmos>(&camera))
    if (s->var_map.width() != frames.width || s->var_map.height() != frames.height)
      throw std::invalid_argument("bead stack: sCMOS variance map does not match the frames");
}

std::vector<Point2> detect_beads(const BeadStack& stack, const BeadDetectConfig& cfg)
{
  stack.validate();
  const int w = stack.frames.width, h = stack.frames.height;
  ImageD sum(w, h, 0.0);
  for (const auto& f : stack.frames.frames)
    for (std::size_t i = 0; i < sum.size(); ++i)
      sum.data()[i] += f.data()[i];

  const double level = median_of(sum.data());
  for (double& v : sum.data())
    v -= level;
  std::vector<double> dev(sum.size());
  for (std::size_t i = 0; i < sum.size(); ++i)
    dev[i] = std::abs(sum.data()[i]);
  const double noise = std::max(1.4826 * median_of(dev), 1e-12);
  const double threshold = cfg.threshold_k * noise;

  std::vector<Point2> out;
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const double c = sum(u, v);
      if (!(c > threshold))
        continue;
      bool peak = true;
      for (int dv = -1; dv <= 1 && peak; ++dv)
        for (int du = -1; du <= 1; ++du) {
          if ((du == 0 && dv == 0) || !sum.contains(u + du, v + dv))
            continue;
          const double n = sum(u + du, v + dv);
          const bool earlier = dv < 0 || (dv == 0 && du < 0);
          if (earlier ? n >= c : n > c) {
            peak = false;
            break;
          }
        }
      if (!peak)
        continue;
      double m = 0, mx = 0, my = 0;
      for (int dv = -2; dv <= 2; ++dv)
        for (int du = -2; du <= 2; ++du) {
          if (!sum.contains(u + du, v + dv))
            continue;
          const double wgt = std::max(sum(u + du, v + dv), 0.0);
          m += wgt;
          mx += wgt * (u + du + 0.5);
          my += wgt * (v + dv + 0.5);
        }
      out.push_back({mx / m * stack.frames.pixel_size, my / m * stack.frames.pixel_size});
    }
  return out;
}

std::vector<PixelAnchor> anchors_for(const std::vector<Point2>& beads, double pixel_size)
{
  std::vector<PixelAnchor> out;
  out.reserve(beads.size());
  for (const auto& b : beads)
    out.push_back({static_cast<int>(std::floor(b.x / pixel_size)), static_cast<int>(std::floor(b.y / pixel_size))});
  return out;
}

BeadObjective::BeadObjective(const BeadStack& stack, std::vector<PixelAnchor> anchors, int window, PsfKind kind,
                             std::optional<PixelMap3D> pixmap, bool fit_pixmap, double pixmap_weight)
  : stack_(stack),
    anchors_(std::move(anchors)),
    window_(window),
    kind_(kind),
    pixmap_(std::move(pixmap)),
    fit_pixmap_(fit_pixmap),
    pixmap_weight_(pixmap_weight),
    n_frames_(stack.n_frames()),
    noise_(stack.camera)
{
  stack_.validate();
  if (window_ < 1 || window_ % 2 == 0)
    throw std::invalid_argument("bead objective: window must be a positive odd number");
  if (anchors_.empty())
    throw std::invalid_argument("bead objective: no beads");
  if (fit_pixmap_ && !pixmap_)
    throw std::invalid_argument("bead objective: pixel-map fitting needs a map geometry");
  if (pixmap_)
    pixmap_->validate();
  if (fit_pixmap_ && !(pixmap_weight_ > 0))
    throw std::invalid_argument("bead objective: pixel-map weight must be positive");
  for (std::size_t a = 0; a < anchors_.size(); ++a)
    for (std::size_t b = a + 1; b < anchors_.size(); ++b)
      if (std::abs(anchors_[a][0] - anchors_[b][0]) < window_ && std::abs(anchors_[a][1] - anchors_[b][1]) < window_)
        throw std::invalid_argument("bead objective: bead windows overlap");
}

Eigen::VectorXd BeadObjective::pack(const BeadParams& p) const
{
  if (static_cast<int>(p.beads.size()) != n_beads() ||
      p.brightness.size() != static_cast<std::size_t>(n_beads()) * static_cast<std::size_t>(n_frames_))
    throw std::invalid_argument("bead objective: parameter sizes do not match");
  if (p.psf.kind() != kind_)
    throw std::invalid_argument("bead objective: PSF kind mismatch");
  Eigen::VectorXd t(size());
  for (int b = 0; b < n_beads(); ++b) {
    t[ix(b)] = p.beads[b].x;
    t[iy(b)] = p.beads[b].y;
  }
  const ShapeVector s = shape_vector(p.psf.parametric);
  for (int i = 0; i < kShapeParams; ++i)
    t[ishape(i)] = s[i];
  for (int b = 0; b < n_beads(); ++b)
    for (int k = 0; k < n_frames_; ++k)
      t[ibright(b, k)] = p.brightness[static_cast<std::size_t>(b) * n_frames_ + k];
  t[ibackground()] = p.background;
  if (fit_pixmap_) {
    const PixelMap3D& src = p.psf.pixmap ? *p.psf.pixmap : *pixmap_;
    if (src.node_count() != pixmap_->node_count())
      throw std::invalid_argument("bead objective: pixel-map geometry mismatch");
    for (std::size_t n = 0; n < src.node_count(); ++n)
      t[ipixmap(n)] = src.values[n];
  }
  return t;
}

BeadParams BeadObjective::unpack(const Eigen::VectorXd& t) const
{
  if (t.size() != size())
    throw std::invalid_argument("bead objective: parameter vector has the wrong length");
  BeadParams p;
  p.beads.resize(n_beads());
  for (int b = 0; b < n_beads(); ++b)
    p.beads[b] = {t[ix(b)], t[iy(b)]};
  ShapeVector s{};
  for (int i = 0; i < kShapeParams; ++i)
    s[i] = t[ishape(i)];
  p.psf.parametric = make_parametric(kind_, s);
  p.psf.pixmap = pixmap_;
  if (fit_pixmap_)
    for (std::size_t n = 0; n < pixmap_->node_count(); ++n)
      p.psf.pixmap->values[n] = t[ipixmap(n)];
  p.brightness.resize(static_cast<std::size_t>(n_beads()) * n_frames_);
  for (int b = 0; b < n_beads(); ++b)
    for (int k = 0; k < n_frames_; ++k)
      p.brightness[static_cast<std::size_t>(b) * n_frames_ + k] = t[ibright(b, k)];
  p.background = t[ibackground()];
  return p;
}

double BeadObjective::evaluate(const Eigen::VectorXd& theta, Mode mode, Eigen::VectorXd* grad,
                               Eigen::MatrixXd* dense, Eigen::VectorXd* pixmap_diag) const
{
  const BeadParams p = unpack(theta);
  if (grad)
    grad->setZero(size());
  if (dense)
    dense->setZero(dense_size(), dense_size());
  if (pixmap_diag)
    pixmap_diag->setZero(pixmap_size());
  for (int i = 0; i < theta.size(); ++i)
    if (!std::isfinite(theta[i]))
      return kInf;
  if (!shape_ok(p.psf.parametric))
    return kInf;

  const int half = window_ / 2;
  const PixelGrid grid = stack_.frames.grid();
  const bool want_grad = mode != Mode::Value;
  const bool want_info = mode == Mode::Information;
  const std::size_t items = static_cast<std::size_t>(n_beads()) * static_cast<std::size_t>(n_frames_);
  std::vector<ItemAccum> acc(items);

  parallel_for(items, [&](std::size_t item) {
    const int b = static_cast<int>(item / n_frames_);
    const int k = static_cast<int>(item % n_frames_);
    ItemAccum& a = acc[item];
    const ImageF& frame = stack_.frames.frames[static_cast<std::size_t>(k)];
    const double amp = p.brightness[item];
    const double z = stack_.z_at(k);
    for (int v = anchors_[b][1] - half; v <= anchors_[b][1] + half; ++v)
      for (int u = anchors_[b][0] - half; u <= anchors_[b][0] + half; ++u) {
        if (!frame.contains(u, v))
          continue;
        const std::size_t pix = frame.index(u, v);
        const double obs = frame.data()[pix];
        const double dx = grid.center_x(u) - p.beads[b].x;
        const double dy = grid.center_y(v) - p.beads[b].y;
        if (!want_grad) {
          const double mu = p.background + amp * eval_psf(p.psf, dx, dy, -z);
          a.f += noise_.nll(obs, mu, pix);
          continue;
        }
        const PsfGradient pg = eval_psf_gradient(p.psf, dx, dy, -z);
        const double mu = p.background + amp * pg.value;
        const NoiseModel::Term t = noise_.term(obs, mu, pix);
        a.f += t.nll;
        Eigen::Matrix<double, kLocParams, 1> j;
        j[kLocX] = -amp * pg.d[kSlotDx];
        j[kLocY] = -amp * pg.d[kSlotDy];
        for (int i = 0; i < kShapeParams; ++i)
          j[kLocShape + i] = amp * pg.d[kSlotShape0 + i];
        j[kLocBright] = pg.value;
        j[kLocBackground] = 1.0;
        a.g += t.d_mean * j;
        if (want_info)
          a.info.selfadjointView<Eigen::Lower>().rankUpdate(j, t.fisher);
        if (fit_pixmap_ && !pg.clamped && pg.pixmap.inside)
          for (int n = 0; n < 8; ++n) {
            const double wn = pg.pixmap.weights[n];
            if (wn == 0.0)
              continue;
            a.map_grad.emplace_back(pg.pixmap.nodes[n], t.d_mean * amp * wn);
            if (want_info)
              a.map_info.emplace_back(pg.pixmap.nodes[n], t.fisher * amp * amp * wn * wn);
          }
      }
  });

  double f = 0.0;
  for (std::size_t item = 0; item < items; ++item) {
    const ItemAccum& a = acc[item];
    f += a.f;
    if (!want_grad)
      continue;
    const int b = static_cast<int>(item / n_frames_);
    const int k = static_cast<int>(item % n_frames_);
    std::array<int, kLocParams> gi{};
    gi[kLocX] = ix(b);
    gi[kLocY] = iy(b);
    for (int i = 0; i < kShapeParams; ++i)
      gi[kLocShape + i] = ishape(i);
    gi[kLocBright] = ibright(b, k);
    gi[kLocBackground] = ibackground();
    for (int r = 0; r < kLocParams; ++r) {
      (*grad)[gi[r]] += a.g[r];
      if (want_info)
        for (int c = 0; c <= r; ++c) {
          const double v = a.info(r, c);
          (*dense)(gi[r], gi[c]) += v;
          if (gi[r] != gi[c])
            (*dense)(gi[c], gi[r]) += v;
        }
    }
    for (const auto& [n, v] : a.map_grad)
      (*grad)[ipixmap(n)] += v;
    if (want_info)
      for (const auto& [n, v] : a.map_info)
        (*pixmap_diag)[static_cast<Eigen::Index>(n)] += v;
  }
  if (!std::isfinite(f))
    return kInf;

  if (fit_pixmap_) {
    for (std::size_t n = 0; n < pixmap_->node_count(); ++n) {
      const double v = theta[ipixmap(n)];
      f += pixmap_weight_ * v * v;
      if (want_grad)
        (*grad)[ipixmap(n)] += 2.0 * pixmap_weight_ * v;
      if (want_info)
        (*pixmap_diag)[static_cast<Eigen::Index>(n)] += 2.0 * pixmap_weight_;
    }
  }
  return f;
}

double BeadObjective::value(const Eigen::VectorXd& theta) const
{
  return evaluate(theta, Mode::Value, nullptr, nullptr, nullptr);
}

double BeadObjective::gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const
{
  return evaluate(theta, Mode::Gradient, &grad, nullptr, nullptr);
}

double BeadObjective::information(const Eigen::VectorXd& theta, Eigen::VectorXd& grad, Eigen::MatrixXd& dense,
                                  Eigen::VectorXd& pixmap_diag) const
{
  return evaluate(theta, Mode::Information, &grad, &dense, &pixmap_diag);
}

std::vector<double> BeadObjective::residual_rms(const Eigen::VectorXd& theta) const
{
  const BeadParams p = unpack(theta);
  const int half = window_ / 2;
  const PixelGrid grid = stack_.frames.grid();
  const double baseline = noise_.baseline();
  std::vector<double> out(static_cast<std::size_t>(n_beads()), 0.0);
  parallel_for(out.size(), [&](std::size_t b) {
    double ss = 0.0;
    std::size_t n = 0;
    for (int k = 0; k < n_frames_; ++k) {
      const ImageF& frame = stack_.frames.frames[static_cast<std::size_t>(k)];
      const double amp = p.brightness[b * n_frames_ + k];
      for (int v = anchors_[b][1] - half; v <= anchors_[b][1] + half; ++v)
        for (int u = anchors_[b][0] - half; u <= anchors_[b][0] + half; ++u) {
          if (!frame.contains(u, v))
            continue;
          const std::size_t pix = frame.index(u, v);
          const double mu = p.background + amp * eval_psf(p.psf, grid.center_x(u) - p.beads[b].x,
                                                            grid.center_y(v) - p.beads[b].y, -stack_.z_at(k));
          const double r = (frame.data()[pix] - baseline - mu) / std::sqrt(noise_.variance(mu, pix));
          ss += r * r;
          ++n;
        }
    }
    out[b] = n ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
  });
  return out;
}

double bead_negloglik(const BeadStack& stack, const BeadParams& params, int window,
                      const std::vector<PixelAnchor>& anchors)
{
  std::vector<PixelAnchor> a = anchors.empty() ? anchors_for(params.beads, stack.frames.pixel_size) : anchors;
  BeadObjective obj(stack, std::move(a), window, params.psf.kind(), params.psf.pixmap, false);
  return obj.value(obj.pack(params));
}

BeadFitResult fit_psf(const BeadStack& stack, const PsfModel& init, const BeadFitOptions& opts,
                      const std::vector<Point2>& beads_in)
{
  stack.validate();
  validate(init);
  if (opts.max_iterations < 0 || !(opts.tolerance >= 0))
    throw std::invalid_argument("fit_psf: invalid iteration settings");

  const std::vector<Point2> beads = beads_in.empty() ? detect_beads(stack, opts.detect) : beads_in;
  if (beads.empty())
    throw std::invalid_argument("fit_psf: no beads found");

  std::optional<PixelMap3D> pixmap = init.pixmap;
  if (opts.fit_pixmap && !pixmap)
    pixmap = opts.pixmap_geometry ? *opts.pixmap_geometry : PixelMap3D::zeros(stack.frames.pixel_size);

  const BeadObjective obj(stack, anchors_for(beads, stack.frames.pixel_size), opts.window, init.kind(), pixmap,
                          opts.fit_pixmap, opts.pixmap_weight);
  const int half = opts.window / 2;
  const PixelGrid grid = stack.frames.grid();
  const double baseline = camera_baseline(stack.camera);
  const int nk = stack.n_frames();

  // Starting values: background from the window rims, brightness from the
  // background-subtracted window sum.
  BeadParams p0;
  p0.beads = beads;
  p0.psf = init;
  p0.psf.pixmap = pixmap;
  std::vector<double> rim;
  for (const auto& a : obj.anchors())
    for (const auto& frame : stack.frames.frames)
      for (int v = a[1] - half; v <= a[1] + half; ++v)
        for (int u = a[0] - half; u <= a[0] + half; ++u)
          if (frame.contains(u, v) && (std::abs(u - a[0]) == half || std::abs(v - a[1]) == half))
            rim.push_back(frame(u, v) - baseline);
  p0.background = std::max(median_of(rim), 1e-3);
  p0.brightness.resize(beads.size() * static_cast<std::size_t>(nk));
  for (std::size_t b = 0; b < beads.size(); ++b)
    for (int k = 0; k < nk; ++k) {
      const ImageF& frame = stack.frames.frames[static_cast<std::size_t>(k)];
      const auto& a = obj.anchors()[b];
      double excess = 0, model = 0;
      for (int v = a[1] - half; v <= a[1] + half; ++v)
        for (int u = a[0] - half; u <= a[0] + half; ++u)
          if (frame.contains(u, v)) {
            excess += frame(u, v) - baseline - p0.background;
            model += eval_psf(p0.psf, grid.center_x(u) - beads[b].x, grid.center_y(v) - beads[b].y, -stack.z_at(k));
          }
      p0.brightness[b * nk + k] = (model > 0 && excess > 0) ? excess / model : 1.0;
    }

  Eigen::VectorXd theta = obj.pack(p0);
  Eigen::VectorXd g;
  Eigen::MatrixXd info;
  Eigen::VectorXd map_diag;
  double f = obj.information(theta, g, info, map_diag);
  if (!std::isfinite(f))
    throw std::invalid_argument("fit_psf: initial model has zero likelihood");

  BeadFitResult res;
  res.objective_trace.push_back(f);
  const int nd = obj.dense_size();
  double lambda = 1e-3;
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    // Jacobi-scaled, damped Fisher system on the dense block; diagonal
    // scaling for the map nodes.
    Eigen::VectorXd scale(nd);
    for (int i = 0; i < nd; ++i)
      scale[i] = 1.0 / std::sqrt(std::max(info(i, i), 1e-300));
    Eigen::MatrixXd a = scale.asDiagonal() * info * scale.asDiagonal();
    a.diagonal().array() += lambda;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    Eigen::VectorXd step(obj.size());
    step.head(nd) = -(scale.asDiagonal() * ldlt.solve(scale.asDiagonal() * g.head(nd)));
    for (int n = 0; n < obj.pixmap_size(); ++n)
      step[nd + n] = -g[nd + n] / (map_diag[n] * (1.0 + lambda));

    const double slope = g.dot(step);
    if (ldlt.info() != Eigen::Success || !step.allFinite() || !(slope < 0)) {
      lambda *= 10.0;
      if (lambda > 1e12)
        break;
      continue;
    }

    double t = 1.0;
    double ft = kInf;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      ft = obj.value(theta + t * step);
      if (std::isfinite(ft) && ft <= f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      lambda *= 10.0;
      if (lambda > 1e12) {
        res.converged = true;
        break;
      }
      continue;
    }

    theta += t * step;
    const double rel = (f - ft) / std::max(1.0, std::abs(f));
    f = obj.information(theta, g, info, map_diag);
    res.objective_trace.push_back(f);
    lambda = std::max(lambda * (t == 1.0 ? 0.1 : 1.0), 1e-9);
    if (rel < opts.tolerance) {
      res.converged = true;
      ++it;
      break;
    }
  }

  const BeadParams fit = obj.unpack(theta);
  res.beads = fit.beads;
  res.psf = fit.psf;
  res.brightness = fit.brightness;
  res.background = fit.background;
  res.negloglik = f;
  res.iterations = it;
  res.bead_residual_rms = obj.residual_rms(theta);
  return res;
}

} // namespace smlm
