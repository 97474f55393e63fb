#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "smlm/calibration.hpp"
#include "smlm/rng.hpp"
#include "support/scenes.hpp"

#include <cmath>
#include <random>

using namespace smlm;
using smlm::testing::desk_camera;

namespace {

struct BeadScene
{
  BeadSimulation sim;
  BeadStack stack;
  PsfModel psf;
};

BeadScene bead_scene(const PsfModel& psf, std::vector<Point2> beads, double brightness, std::uint64_t seed,
                     int width = 48)
{
  BeadScene s;
  s.psf = psf;
  s.sim.beads = std::move(beads);
  s.sim.brightness.assign(s.sim.beads.size(), brightness);
  s.sim.width = s.sim.height = width;
  s.stack.frames = simulate_bead_stack(s.sim, psf, desk_camera(), seed);
  s.stack.z0 = s.sim.z0;
  s.stack.dz = s.sim.dz;
  s.stack.camera = desk_camera();
  return s;
}

BeadParams truth_params(const BeadScene& s)
{
  BeadParams p;
  p.beads = s.sim.beads;
  p.psf = s.psf;
  p.brightness.assign(s.sim.beads.size() * static_cast<std::size_t>(s.sim.n_frames), s.sim.brightness.front());
  p.background = desk_camera().background;
  return p;
}

std::vector<Point2> four_beads()
{
  return {{1230, 1170}, {3440, 1260}, {1310, 3520}, {3570, 3380}};
}

double rel_err(double a, double b)
{
  return std::abs(a - b) / std::abs(b);
}

} // namespace

TEST_CASE("detect_beads finds isolated beads near their true position")
{
  PsfModel psf;
  const BeadScene one = bead_scene(psf, {{2420, 2380}}, 3000, 1);
  const auto found = detect_beads(one.stack);
  REQUIRE(found.size() == 1);
  CHECK(std::abs(found[0].x - 2420) < 50);
  CHECK(std::abs(found[0].y - 2380) < 50);

  const BeadScene two = bead_scene(psf, {{1850, 2450}, {2850, 2450}}, 3000, 2);
  const auto pair = detect_beads(two.stack);
  REQUIRE(pair.size() == 2);
  CHECK(std::abs(pair[0].x - 1850) < 50);
  CHECK(std::abs(pair[1].x - 2850) < 50);
}

TEST_CASE("detect_beads returns nothing on a bead-free stack")
{
  const BeadScene blank = bead_scene(PsfModel{}, {}, 0, 3);
  CHECK(detect_beads(blank.stack).empty());
}

TEST_CASE("bead stack validation")
{
  BeadScene s = bead_scene(PsfModel{}, {{2400, 2400}}, 3000, 4);
  s.stack.dz = 0;
  CHECK_THROWS_AS(s.stack.validate(), std::invalid_argument);
  s.stack.dz = 50;
  s.stack.frames.frames.resize(2);
  CHECK_THROWS_AS(s.stack.validate(), std::invalid_argument);
}

TEST_CASE("perturbing any parameter of the generating model raises the NLL")
{
  const BeadScene s = bead_scene(PsfModel{}, four_beads(), 4000, 5);
  const BeadParams truth = truth_params(s);
  const double base = bead_negloglik(s.stack, truth);
  REQUIRE(std::isfinite(base));

  for (int i = 0; i < kShapeParams; ++i) {
    BeadParams p = truth;
    ShapeVector v = shape_vector(p.psf.parametric);
    v[i] *= 1.1;
    p.psf.parametric = make_parametric(PsfKind::Astigmatic, v);
    CAPTURE(i);
    CHECK(bead_negloglik(s.stack, p) > base);
  }
  BeadParams p = truth;
  p.background *= 1.1;
  CHECK(bead_negloglik(s.stack, p) > base);
  p = truth;
  for (double& b : p.brightness)
    b *= 1.1;
  CHECK(bead_negloglik(s.stack, p) > base);
  p = truth;
  p.beads[0].x += 10;
  CHECK(bead_negloglik(s.stack, p) > base);
}

TEST_CASE("two identical bead windows give twice the single-window NLL")
{
  BeadScene s = bead_scene(PsfModel{}, {{1250, 1250}}, 3000, 6);
  // Copy the 13x13 window around pixel (12, 12) to around pixel (34, 30).
  for (auto& f : s.stack.frames.frames)
    for (int dv = -6; dv <= 6; ++dv)
      for (int du = -6; du <= 6; ++du)
        f(34 + du, 30 + dv) = f(12 + du, 12 + dv);
  BeadParams one = truth_params(s);
  BeadParams two = one;
  two.beads.push_back({one.beads[0].x + 2200, one.beads[0].y + 1800});
  two.brightness.insert(two.brightness.end(), one.brightness.begin(), one.brightness.end());
  const double single = bead_negloglik(s.stack, one);
  const double doubled = bead_negloglik(s.stack, two);
  CHECK(doubled == doctest::Approx(2 * single).epsilon(1e-12));
}

TEST_CASE("overlapping windows are rejected")
{
  const BeadScene s = bead_scene(PsfModel{}, {{1250, 1250}, {1950, 1250}}, 3000, 7);
  CHECK_THROWS_AS(bead_negloglik(s.stack, truth_params(s)), std::invalid_argument);
}

TEST_CASE("objective gradient matches finite differences")
{
  const BeadScene s = bead_scene(PsfModel{}, {{1250, 1230}, {3430, 3380}}, 3000, 8);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);

  for (bool with_map : {false, true}) {
    std::optional<PixelMap3D> map;
    if (with_map)
      map = PixelMap3D::zeros(100.0, 26, 26, 1500.0, 100.0);
    const BeadObjective obj(s.stack, anchors_for(s.sim.beads, 100.0), 13, PsfKind::Astigmatic, map, with_map);
    BeadParams base = truth_params(s);
    for (int trial = 0; trial < 10; ++trial) {
      BeadParams p = base;
      for (auto& b : p.beads) {
        b.x += 20 * jitter(rng);
        b.y += 20 * jitter(rng);
      }
      ShapeVector v = shape_vector(p.psf.parametric);
      for (double& x : v)
        x *= 1.0 + 0.05 * jitter(rng);
      p.psf.parametric = make_parametric(PsfKind::Astigmatic, v);
      for (double& b : p.brightness)
        b *= 1.0 + 0.1 * jitter(rng);
      p.background *= 1.0 + 0.1 * jitter(rng);
      Eigen::VectorXd theta = obj.pack(p);
      if (with_map)
        for (int n = 0; n < obj.pixmap_size(); ++n)
          theta[obj.ipixmap(n)] = 0.01 * jitter(rng);

      Eigen::VectorXd g;
      obj.gradient(theta, g);
      // Spot-check a spread of coordinates including every shape slot.
      std::vector<int> coords = {obj.ix(0), obj.iy(1), obj.ibright(0, 3), obj.ibright(1, 20), obj.ibackground()};
      for (int i = 0; i < kShapeParams; ++i)
        coords.push_back(obj.ishape(i));
      if (with_map) {
        // Nodes near the lateral centre at z = 0 are inside every window.
        const PixelMap3D& m = *map;
        coords.push_back(obj.ipixmap(m.node_index(12, 13, 15)));
        coords.push_back(obj.ipixmap(m.node_index(13, 12, 10)));
      }
      for (int c : coords) {
        const double h = 1e-6 * std::max(1.0, std::abs(theta[c]));
        Eigen::VectorXd tp = theta, tm = theta;
        tp[c] += h;
        tm[c] -= h;
        const double fd = (obj.value(tp) - obj.value(tm)) / (2 * h);
        CAPTURE(with_map);
        CAPTURE(c);
        CHECK(std::abs(fd - g[c]) <= 1e-4 * std::max(1.0, std::abs(g[c])));
      }
    }
  }
}

TEST_CASE("astigmatic calibration recovers the generating parameters")
{
  PsfModel truth;
  const BeadScene s = bead_scene(truth, four_beads(), 5000, 11);
  PsfModel init;
  init.parametric = PsfAsParams{8.0, -250.0, 350.0, 1.2e5};
  const BeadFitResult r = fit_psf(s.stack, init);
  CHECK(r.converged);
  REQUIRE(r.beads.size() == 4);
  for (std::size_t b = 0; b < 4; ++b) {
    // Detection order is raster order; match by proximity.
    double best = 1e9;
    for (const auto& t : s.sim.beads)
      best = std::min(best, std::hypot(r.beads[b].x - t.x, r.beads[b].y - t.y));
    CHECK(best < 1.0);
  }
  const ShapeVector got = shape_vector(r.psf.parametric);
  const ShapeVector want = shape_vector(truth.parametric);
  for (int i = 0; i < kShapeParams; ++i) {
    CAPTURE(i);
    CHECK(rel_err(got[i], want[i]) < 0.02);
  }
  for (double rms : r.bead_residual_rms)
    CHECK(rms == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("objective trace is monotone and the fit never ends above its start")
{
  const BeadScene s = bead_scene(PsfModel{}, four_beads(), 3000, 12);
  PsfModel init;
  init.parametric = PsfAsParams{11.0, -200.0, 250.0, 0.8e5};
  const BeadFitResult r = fit_psf(s.stack, init, {}, s.sim.beads);
  REQUIRE(r.objective_trace.size() >= 2);
  for (std::size_t i = 1; i < r.objective_trace.size(); ++i)
    CHECK(r.objective_trace[i] <= r.objective_trace[i - 1]);
  CHECK(r.negloglik == r.objective_trace.back());
}

TEST_CASE("starting at the generating model converges quickly")
{
  PsfModel truth;
  const BeadScene s = bead_scene(truth, four_beads(), 4000, 13);
  const BeadFitResult r = fit_psf(s.stack, truth, {}, s.sim.beads);
  CHECK(r.converged);
  CHECK(r.iterations <= 10);
  CHECK(r.objective_trace.back() <= r.objective_trace.front());
}

TEST_CASE("double-helix calibration recovers the lobe separation")
{
  PsfModel truth;
  truth.parametric = PsfDhParams{};
  const BeadScene s = bead_scene(truth, four_beads(), 5000, 14);
  PsfModel init;
  init.parametric = PsfDhParams{1.2e-4, 3.0e-3, 0.1, 270.0};
  const BeadFitResult r = fit_psf(s.stack, init, {}, s.sim.beads);
  CHECK(r.converged);
  const auto& dh = std::get<PsfDhParams>(r.psf.parametric);
  CHECK(rel_err(dh.d, 300.0) < 0.02);
}

TEST_CASE("shape error shrinks with bead brightness")
{
  PsfModel truth;
  const ShapeVector want = shape_vector(truth.parametric);
  PsfModel init;
  init.parametric = PsfAsParams{9.0, -280.0, 320.0, 1.1e5};
  std::vector<double> errors;
  for (double brightness : {300.0, 1500.0, 7500.0}) {
    double err = 0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const BeadScene s = bead_scene(truth, four_beads(), brightness, 100 + seed);
      const BeadFitResult r = fit_psf(s.stack, init, {}, s.sim.beads);
      const ShapeVector got = shape_vector(r.psf.parametric);
      for (int i = 0; i < kShapeParams; ++i)
        err += rel_err(got[i], want[i]);
    }
    errors.push_back(err);
  }
  CHECK(errors[1] < errors[0]);
  CHECK(errors[2] < errors[1]);
}

TEST_CASE("fitting a pixel map lowers the NLL when the parametric model is wrong")
{
  // Beads imaged with a slightly elongated model, fitted with the default.
  PsfModel truth;
  truth.parametric = PsfAsParams{9.5, -300.0, 300.0, 1e5};
  PixelMap3D bump = PixelMap3D::zeros(100.0, 26, 26, 1500.0, 100.0);
  for (int k = 0; k < bump.nz; ++k)
    for (int j = 12; j <= 13; ++j)
      for (int i = 14; i <= 15; ++i)
        bump.values[bump.node_index(i, j, k)] = 0.15;
  truth.pixmap = bump;
  const BeadScene s = bead_scene(truth, four_beads(), 4000, 15);

  PsfModel init;
  const BeadFitResult plain = fit_psf(s.stack, init, {}, s.sim.beads);
  BeadFitOptions opts;
  opts.fit_pixmap = true;
  const BeadFitResult mapped = fit_psf(s.stack, init, opts, s.sim.beads);
  REQUIRE(mapped.psf.pixmap.has_value());
  CHECK(mapped.negloglik < plain.negloglik);
}

TEST_CASE("fit_psf input validation")
{
  const BeadScene blank = bead_scene(PsfModel{}, {}, 0, 16);
  CHECK_THROWS_AS(fit_psf(blank.stack, PsfModel{}), std::invalid_argument);
  const BeadScene s = bead_scene(PsfModel{}, {{2400, 2400}}, 3000, 17);
  BeadFitOptions opts;
  opts.window = 12;
  CHECK_THROWS_AS(fit_psf(s.stack, PsfModel{}, opts), std::invalid_argument);
}
