#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "smlm/localizer.hpp"
#include "smlm/metrics.hpp"
#include "smlm/parallel.hpp"
#include "support/scenes.hpp"

#include <cmath>
#include <numeric>

using namespace smlm;
using namespace smlm::testing;

namespace {

PsfModel astigmatic()
{
  PsfModel m;
  m.parametric = PsfAsParams{};
  return m;
}

PixelGrid field(int n) { return PixelGrid{n, n, 100.0, 0.0, 0.0, 1}; }

struct Spread
{
  double mean_err, std, mean_sigma;
};

Spread spread(const std::vector<double>& est, double truth, const std::vector<double>& sig)
{
  const double n = static_cast<double>(est.size());
  const double m = std::accumulate(est.begin(), est.end(), 0.0) / n;
  double v = 0.0;
  for (double e : est)
    v += (e - m) * (e - m);
  return {m - truth, std::sqrt(v / (n - 1.0)), std::accumulate(sig.begin(), sig.end(), 0.0) / n};
}

// Repeated single-emitter fits; returns x estimates and reported sig_x.
void monte_carlo(const Emitter& e, int reps, std::uint64_t seed, std::vector<double>& xs, std::vector<double>& sx,
                 std::vector<double>* zs = nullptr, std::vector<double>* sz = nullptr, double background = 20.0)
{
  const PsfModel psf = astigmatic();
  CameraEmccd cam = desk_camera();
  cam.background = background;
  const NoiseModel noise(cam);
  const PixelGrid grid = field(21);
  LocalizerConfig cfg;
  // With almost no background the Pearson statistic is far from chi-square.
  if (background < 1.0)
    cfg.max_fit_excess = 0.0;
  for (int r = 0; r < reps; ++r) {
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(r));
    const ImageD frame = noisy_frame(psf, cam, grid, {e}, rng);
    const Candidate c{0, static_cast<int>(e.x / 100.0), static_cast<int>(e.y / 100.0), 0.0};
    const RoiFit f = fit_roi(frame, grid, c, psf, noise, cfg);
    REQUIRE(f.converged);
    REQUIRE(f.hessian_pd);
    xs.push_back(f.x);
    sx.push_back(f.sig_x);
    if (zs) {
      zs->push_back(f.z);
      sz->push_back(f.sig_z);
    }
  }
}

} // namespace

TEST_CASE("no candidates on pure background")
{
  const Camera cams[] = {desk_camera(), CameraEmccd{}};
  LocalizerConfig cfg;
  cfg.threshold_k = 6.0;
  for (const Camera& cam : cams) {
    int empty = 0;
    for (int t = 0; t < 100; ++t) {
      Rng rng = make_stream(40, static_cast<std::uint64_t>(t));
      const ImageD frame = noisy_frame(astigmatic(), cam, field(64), {}, rng);
      empty += detect_candidates(frame, cfg, camera_baseline(cam)).empty();
    }
    CHECK(empty >= 99);
  }
}

namespace {

// Candidates within one pixel (Chebyshev) of a position in nm.
int near(const std::vector<Candidate>& c, double x, double y)
{
  int n = 0;
  for (const auto& q : c)
    n += std::abs(q.u - std::floor(x / 100.0)) <= 1 && std::abs(q.v - std::floor(y / 100.0)) <= 1;
  return n;
}

} // namespace

TEST_CASE("one bright emitter gives one candidate at its pixel")
{
  for (int t = 0; t < 50; ++t) {
    Rng rng = make_stream(41, static_cast<std::uint64_t>(t));
    std::uniform_real_distribution<double> pos(1500.0, 4900.0), z(-500.0, 500.0);
    const Emitter e{pos(rng), pos(rng), z(rng), 5000.0};
    const ImageD frame = noisy_frame(astigmatic(), desk_camera(), field(64), {e}, rng);
    const auto c = detect_candidates(frame, LocalizerConfig{}, 100.0);
    CHECK(near(c, e.x, e.y) == 1);
  }
}

TEST_CASE("two emitters twelve pixels apart give two candidates")
{
  for (int t = 0; t < 20; ++t) {
    Rng rng = make_stream(42, static_cast<std::uint64_t>(t));
    const std::vector<Emitter> es{{2050, 3250, 0, 5000}, {3250, 3250, 0, 5000}};
    const ImageD frame = noisy_frame(astigmatic(), desk_camera(), field(64), es, rng);
    const auto c = detect_candidates(frame, LocalizerConfig{}, 100.0);
    CHECK(near(c, es[0].x, es[0].y) == 1);
    CHECK(near(c, es[1].x, es[1].y) == 1);
  }
}

TEST_CASE("detection tie-break keeps one pixel of a plateau")
{
  ImageD img(9, 9);
  for (auto& v : img.data())
    v = 100.0;
  img(4, 4) = img(5, 4) = 200.0;
  LocalizerConfig cfg;
  cfg.smoothing_sigma = 0.0;
  const auto c = detect_candidates(img, cfg);
  REQUIRE(c.size() == 1);
  CHECK(c[0].u == 4);
}

TEST_CASE("high-SNR fit is accurate and its sigma is calibrated")
{
  const Emitter e{1030.0, 1070.0, 0.0, 5000.0};
  std::vector<double> xs, sx, zs, sz;
  monte_carlo(e, 200, 50, xs, sx, &zs, &sz);
  for (double x : xs)
    CHECK(std::abs(x - e.x) < 10.0);
  const Spread s = spread(xs, e.x, sx);
  const Spread sz_spread = spread(zs, e.z, sz);
  MESSAGE("x: std " << s.std << " mean sigma " << s.mean_sigma << "; z: std " << sz_spread.std << " mean sigma "
                    << sz_spread.mean_sigma);
  CHECK(s.std / s.mean_sigma > 0.75);
  CHECK(s.std / s.mean_sigma < 1.25);
  CHECK(sz_spread.std / sz_spread.mean_sigma > 0.75);
  CHECK(sz_spread.std / sz_spread.mean_sigma < 1.25);
}

TEST_CASE("four times the photons halves the spread")
{
  std::vector<double> xa, sa, xb, sb;
  // Nearly background-free, so the spread follows photon statistics alone.
  monte_carlo({1030.0, 1070.0, 0.0, 2000.0}, 300, 60, xa, sa, nullptr, nullptr, 0.5);
  monte_carlo({1030.0, 1070.0, 0.0, 8000.0}, 300, 61, xb, sb, nullptr, nullptr, 0.5);
  const double ratio = spread(xa, 1030.0, sa).std / spread(xb, 1030.0, sb).std;
  MESSAGE("std ratio " << ratio);
  CHECK(ratio > 2.0 * 0.85);
  CHECK(ratio < 2.0 * 1.15);
}

TEST_CASE("fit started at the truth does not get worse")
{
  const PsfModel psf = astigmatic();
  const Camera cam = desk_camera();
  const NoiseModel noise(cam);
  const PixelGrid grid = field(21);
  Rng rng = make_stream(70, 0);
  const Emitter e{1010.0, 1040.0, 150.0, 5000.0};
  const ImageD frame = noisy_frame(psf, cam, grid, {e}, rng);
  LocalizerConfig cfg;
  cfg.z_starts = {e.z};
  const RoiFit f = fit_roi(frame, grid, Candidate{0, 10, 10, 0.0}, psf, noise, cfg);
  const RoiObjective obj(frame, grid, psf, noise, f.roi_u0, f.roi_v0, f.roi_w, f.roi_h);
  const double at_truth = obj.value(RoiTheta{e.x, e.y, e.z, e.photons, 20.0});
  CHECK(f.converged);
  CHECK(f.negloglik <= at_truth);
  CHECK(f.negloglik == doctest::Approx(obj.value(RoiTheta{f.x, f.y, f.z, f.photons, f.background})));
}

TEST_CASE("roi objective gradient matches finite differences")
{
  const PsfModel psf = astigmatic();
  const Camera cam = desk_camera();
  const NoiseModel noise(cam);
  const PixelGrid grid = field(21);
  Rng rng = make_stream(71, 0);
  const ImageD frame = noisy_frame(psf, cam, grid, {{1010.0, 1040.0, 150.0, 5000.0}}, rng);
  const RoiObjective obj(frame, grid, psf, noise, 4, 4, 13, 13);
  const RoiTheta t{1020.0, 1030.0, 100.0, 4500.0, 22.0};
  RoiTheta g;
  obj.gradient(t, g);
  const double steps[kRoiParams] = {1e-3, 1e-3, 1e-3, 1e-3, 1e-5};
  for (int i = 0; i < kRoiParams; ++i) {
    RoiTheta p = t, m = t;
    p[i] += steps[i];
    m[i] -= steps[i];
    const double fd = (obj.value(p) - obj.value(m)) / (2 * steps[i]);
    CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("shifting the emitter by one pixel shifts the fit by one pixel")
{
  const PsfModel psf = astigmatic();
  const Camera cam = desk_camera();
  const NoiseModel noise(cam);
  const PixelGrid grid = field(25);
  for (int t = 0; t < 10; ++t) {
    const Emitter e{1130.0 + 7 * t, 1160.0, 100.0, 5000.0};
    Emitter shifted = e;
    shifted.x += 100.0;
    Rng ra = make_stream(80, t), rb = make_stream(80, t);
    const ImageD fa = noisy_frame(psf, cam, grid, {e}, ra);
    const ImageD fb = noisy_frame(psf, cam, grid, {shifted}, rb);
    const RoiFit a = fit_roi(fa, grid, Candidate{0, 11, 11, 0}, psf, noise, LocalizerConfig{});
    const RoiFit b = fit_roi(fb, grid, Candidate{0, 12, 11, 0}, psf, noise, LocalizerConfig{});
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    CHECK(std::abs((b.x - a.x) - 100.0) < 2.0 * std::hypot(a.sig_x, b.sig_x));
    CHECK(std::abs(b.y - a.y) < 2.0 * std::hypot(a.sig_y, b.sig_y));
  }
}

TEST_CASE("border ROIs are shrunk and flagged")
{
  const PsfModel psf = astigmatic();
  const Camera cam = desk_camera();
  const PixelGrid grid = field(32);
  Rng rng = make_stream(90, 0);
  const ImageD frame = noisy_frame(psf, cam, grid, {{250.0, 1650.0, 0.0, 5000.0}}, rng);
  const RoiFit f = fit_roi(frame, grid, Candidate{0, 2, 16, 0}, psf, NoiseModel(cam), LocalizerConfig{});
  CHECK(f.shrunk);
  CHECK(f.roi_u0 == 0);
  CHECK(f.roi_w == 9);
  CHECK(f.converged);
  CHECK(std::abs(f.x - 250.0) < 15.0);
}

TEST_CASE("close candidates are flagged as crowded")
{
  const PsfModel psf = astigmatic();
  const Camera cam = desk_camera();
  Rng rng = make_stream(91, 0);
  const std::vector<Emitter> es{{2050, 2050, 0, 5000}, {2450, 2050, 0, 5000}, {5050, 5050, 0, 5000}};
  const ImageD frame = noisy_frame(psf, cam, field(64), es, rng);
  const auto fits = localize_frame(frame, field(64), 0, psf, NoiseModel(cam), LocalizerConfig{});
  REQUIRE(fits.size() == 3);
  CHECK(fits[0].crowded);
  CHECK(fits[1].crowded);
  CHECK_FALSE(fits[2].crowded);
}

TEST_CASE("two emitters in one blob fail the fit-quality test")
{
  const PsfModel psf = astigmatic();
  const Camera cam = desk_camera();
  Rng rng = make_stream(93, 0);
  const PixelGrid grid = field(25);
  const ImageD frame = noisy_frame(psf, cam, grid, {{1150, 1250, 0, 5000}, {1370, 1250, 0, 5000}}, rng);
  const RoiFit f = fit_roi(frame, grid, Candidate{0, 12, 12, 0}, psf, NoiseModel(cam), LocalizerConfig{});
  CHECK(f.poor_fit);
  CHECK_FALSE(f.converged);

  LocalizerConfig lenient;
  lenient.max_fit_excess = 0.0;
  const RoiFit g = fit_roi(frame, grid, Candidate{0, 12, 12, 0}, psf, NoiseModel(cam), lenient);
  CHECK_FALSE(g.poor_fit);
  CHECK(g.chi2 > 2.0 * g.dof);

  Rng rng2 = make_stream(93, 1);
  const ImageD single = noisy_frame(psf, cam, grid, {{1250, 1250, 0, 5000}}, rng2);
  const RoiFit h = fit_roi(single, grid, Candidate{0, 12, 12, 0}, psf, NoiseModel(cam), LocalizerConfig{});
  CHECK(h.converged);
  CHECK(h.dof == 169 - 5);
  CHECK(std::abs(h.chi2 - h.dof) < 5.0 * std::sqrt(2.0 * h.dof));
}

TEST_CASE("pixels nearer another candidate are left out")
{
  const PsfModel psf = astigmatic();
  const Camera cam = desk_camera();
  const PixelGrid grid = field(32);
  int better = 0;
  for (int t = 0; t < 10; ++t) {
    Rng rng = make_stream(94, t);
    const Emitter e{1050.0, 1650.0, 0.0, 5000.0};
    const ImageD frame = noisy_frame(psf, cam, grid, {e, {1650.0, 1650.0, -400.0, 5000.0}}, rng);
    LocalizerConfig cfg;
    cfg.max_fit_excess = 0.0;
    const Candidate c{0, 10, 16, 0};
    const RoiFit plain = fit_roi(frame, grid, c, psf, NoiseModel(cam), cfg);
    const RoiFit masked = fit_roi(frame, grid, c, psf, NoiseModel(cam), cfg, {Candidate{0, 16, 16, 0}});
    better += std::abs(masked.x - e.x) < std::abs(plain.x - e.x);
    CHECK(masked.dof < plain.dof);
  }
  CHECK(better >= 8);
}

TEST_CASE("2D model fits keep z at zero")
{
  PsfModel psf;
  psf.parametric = Psf2DParams{0.5, 0.5, 1e-4, 1e-4};
  const Camera cam = desk_camera();
  Rng rng = make_stream(92, 0);
  const ImageD frame = noisy_frame(psf, cam, field(21), {{1030, 1060, 0, 5000}}, rng);
  const RoiFit f = fit_roi(frame, field(21), Candidate{0, 10, 10, 0}, psf, NoiseModel(cam), LocalizerConfig{});
  CHECK(f.converged);
  CHECK(f.z == 0.0);
  CHECK(f.sig_z == 0.0);
  CHECK(std::abs(f.x - 1030.0) < 10.0);
}

TEST_CASE("localize_stack on empty and sparse stacks")
{
  FrameStack empty;
  empty.width = empty.height = 16;
  CHECK(localize_stack(empty, astigmatic(), desk_camera(), LocalizerConfig{}).empty());

  const SimulationConfig scene = sparse_scene(200);
  const auto sim = simulate_stack(scene, 5);
  set_thread_count(1);
  const auto a = localize_stack(sim.stack, scene.psf, scene.camera, sparse_localizer());
  set_thread_count(4);
  const auto b = localize_stack(sim.stack, scene.psf, scene.camera, sparse_localizer());
  set_thread_count(0);
  CHECK(a == b);
  for (const auto& r : a) {
    CHECK(std::isfinite(r.x));
    CHECK(std::isfinite(r.y));
    CHECK(std::isfinite(r.z));
    CHECK(r.prob == 1.0);
    CHECK_FALSE(std::isnan(r.sig_x));
  }
  const auto m = match_localizations(a, sim.truth, 250.0);
  MESSAGE("jaccard " << jaccard(m) << " rmse " << rmse(m, ErrorMode::Lateral).value_or(-1) << " rows " << a.size()
                     << " truth " << sim.truth.size());
  CHECK(jaccard(m) > 90.0);
}
