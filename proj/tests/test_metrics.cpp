#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "smlm/metrics.hpp"
#include "smlm/renderer.hpp"
#include "support/oracles.hpp"

#include <cmath>
#include <random>

using namespace smlm;
using namespace smlm::testing;

namespace {

Localization at(int frame, double x, double y, double z = 0.0)
{
  Localization r;
  r.frame = frame;
  r.x = x;
  r.y = y;
  r.z = z;
  return r;
}

ImageD white_noise(int n, std::mt19937_64& rng)
{
  std::normal_distribution<double> g(0.0, 1.0);
  ImageD img(n, n);
  for (auto& v : img.data())
    v = g(rng);
  return img;
}

} // namespace

TEST_CASE("matching examples")
{
  LocalizationTable t{at(0, 10, 10), at(0, 500, 500), at(1, 10, 10)};
  auto m = match_localizations(t, t, 250.0);
  CHECK(m.tp == 3);
  CHECK(m.fp == 0);
  CHECK(m.fn == 0);

  m = match_localizations({at(0, 300, 0)}, {at(0, 0, 0)}, 250.0);
  CHECK(m.tp == 0);
  CHECK(m.fp == 1);
  CHECK(m.fn == 1);

  // Same place, other frame.
  m = match_localizations({at(1, 0, 0)}, {at(0, 0, 0)}, 250.0);
  CHECK(m.tp == 0);

  // Greedy nearest pairing would leave one truth unmatched.
  m = match_localizations({at(0, 0, 0), at(0, 100, 0)}, {at(0, 60, 0), at(0, -100, 0)}, 110.0);
  CHECK(m.tp == 2);
}

TEST_CASE("matching in volume mode tests the 3D distance")
{
  const LocalizationTable p{at(0, 0, 0, 200)}, t{at(0, 100, 0, 0)};
  CHECK(match_localizations(p, t, 150.0, MatchMode::Lateral).tp == 1);
  CHECK(match_localizations(p, t, 150.0, MatchMode::Volume).tp == 0);
  CHECK(match_localizations(p, t, 250.0, MatchMode::Volume).tp == 1);
}

TEST_CASE("matching equals exhaustive enumeration on small configurations")
{
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> count(0, 6);
  std::uniform_real_distribution<double> pos(0.0, 600.0);
  for (int trial = 0; trial < 1000; ++trial) {
    LocalizationTable p, t;
    const int np = count(rng), nt = count(rng);
    for (int i = 0; i < np; ++i)
      p.push_back(at(0, pos(rng), pos(rng)));
    for (int i = 0; i < nt; ++i)
      t.push_back(at(0, pos(rng), pos(rng)));
    const auto m = match_localizations(p, t, 250.0);
    const auto ref = exhaustive_match(p, t, 250.0);
    REQUIRE(m.tp == ref.tp);
    double total = 0.0;
    for (const auto& pr : m.pairs) {
      CHECK(pr.distance <= 250.0);
      total += pr.distance;
    }
    CHECK(total == doctest::Approx(ref.total_distance).epsilon(1e-9));
    CHECK(m.tp + m.fp == p.size());
    CHECK(m.tp + m.fn == t.size());

    const auto swapped = match_localizations(t, p, 250.0);
    CHECK(swapped.tp == m.tp);
    CHECK(swapped.fp == m.fn);
    CHECK(swapped.fn == m.fp);
  }
}

TEST_CASE("min_cost_assignment on a known matrix")
{
  const std::vector<std::vector<double>> c{{4, 1, 3}, {2, 0, 5}, {3, 2, 2}};
  const auto a = min_cost_assignment(c);
  CHECK(c[0][a[0]] + c[1][a[1]] + c[2][a[2]] == 5.0);
  const std::vector<std::vector<double>> wide{{1, 0, 9}};
  CHECK(min_cost_assignment(wide) == std::vector<int>{1});
}

TEST_CASE("jaccard, rmse and efficiency by hand")
{
  MatchResult m;
  m.tp = 1;
  CHECK(jaccard(m) == 100.0);
  m.fp = 1;
  CHECK(jaccard(m) == 50.0);
  m.tp = 2;
  m.fn = 1;
  CHECK(jaccard(m) == 50.0);
  CHECK(jaccard(MatchResult{}) == 100.0);

  CHECK_FALSE(rmse(MatchResult{}, ErrorMode::Lateral).has_value());

  auto one = match_localizations({at(0, 3, 4, 0)}, {at(0, 0, 0, 0)}, 250.0);
  CHECK(*rmse(one, ErrorMode::Lateral) == 5.0);
  CHECK(*rmse(one, ErrorMode::Axial) == 0.0);
  CHECK(*rmse(one, ErrorMode::Volume) == 5.0);

  auto two = match_localizations({at(0, 0, 0), at(0, 1000, 10)}, {at(0, 0, 0), at(0, 1000, 0)}, 250.0);
  CHECK(*rmse(two, ErrorMode::Lateral) == doctest::Approx(std::sqrt(50.0)).epsilon(1e-15));

  auto same = match_localizations({at(0, 1, 2, 3)}, {at(0, 1, 2, 3)}, 250.0);
  CHECK(*rmse(same, ErrorMode::Volume) == 0.0);

  CHECK(efficiency(100, 0, 0.5) == 100.0);
  CHECK(efficiency(100, 20, 0.5) == 90.0);
  CHECK(efficiency(0, 0, 0.5) == 0.0);
  CHECK(efficiency_3d(100, 20, 10) == doctest::Approx(0.5 * (90.0 + 90.0)));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> j(0, 100), r(0, 200);
  for (int i = 0; i < 1000; ++i)
    CHECK(efficiency(j(rng), r(rng), 0.5) < 100.0);
}

TEST_CASE("split_even_odd_blocks")
{
  LocalizationTable t{at(0, 0, 0), at(1, 1, 0), at(2, 2, 0), at(3, 3, 0)};
  auto [a, b] = split_even_odd_blocks(t, 1);
  CHECK(a == LocalizationTable{t[0], t[2]});
  CHECK(b == LocalizationTable{t[1], t[3]});
  std::tie(a, b) = split_even_odd_blocks(t, 4);
  CHECK(a == t);
  CHECK(b.empty());
  std::tie(a, b) = split_even_odd_blocks(t, 3);
  CHECK(a.size() + b.size() == t.size());
  CHECK(b == LocalizationTable{t[3]});
  CHECK_THROWS_AS(split_even_odd_blocks(t, 0), std::invalid_argument);
}

TEST_CASE("frc of identical and rescaled images")
{
  std::mt19937_64 rng(7);
  const ImageD a = white_noise(100, rng);
  ImageD b = a;
  for (auto& v : b.data())
    v *= 2.0;
  const auto same = frc_curve(a, a, 10.0);
  const auto scaled = frc_curve(a, b, 10.0);
  CHECK(same.padded_size == 128);
  CHECK(same.correlation.size() == 65);
  for (std::size_t r = 0; r < same.correlation.size(); ++r) {
    CHECK(std::abs(same.correlation[r] - 1.0) < 1e-9);
    CHECK(std::abs(scaled.correlation[r] - 1.0) < 1e-9);
  }
  for (std::size_t r = 1; r < same.frequency.size(); ++r)
    CHECK(same.frequency[r] > same.frequency[r - 1]);
  CHECK(same.frequency.back() == doctest::Approx(1.0 / 20.0));

  const ImageD c = white_noise(100, rng);
  ImageD c3 = c;
  for (auto& v : c3.data())
    v *= 3.0;
  const auto k1 = frc_curve(a, c, 10.0), k3 = frc_curve(a, c3, 10.0);
  for (std::size_t r = 0; r < k1.correlation.size(); ++r)
    CHECK(k3.correlation[r] == doctest::Approx(k1.correlation[r]).epsilon(1e-12));

  CHECK_THROWS_AS(frc_curve(ImageD(4, 4), ImageD(4, 5), 10.0), std::invalid_argument);
}

TEST_CASE("frc ring sample counts cover the half plane")
{
  const auto c = frc_curve(ImageD(8, 8), ImageD(8, 8), 1.0);
  CHECK(c.bins[0] == 1);
  CHECK(c.bins[1] == 8);
  CHECK(c.samples[1] == 4.0);
  CHECK(c.correlation[0] == 0.0);
}

TEST_CASE("frc of independent noise stays near zero")
{
  std::mt19937_64 rng(21);
  std::size_t rings = 0, quiet = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const auto c = frc_curve(white_noise(256, rng), white_noise(256, rng), 1.0);
    for (std::size_t r = 0; r < c.correlation.size(); ++r) {
      if (c.samples[r] < 100)
        continue;
      ++rings;
      quiet += std::abs(c.correlation[r]) < 0.1;
    }
  }
  MESSAGE("quiet rings: " << quiet << " / " << rings);
  CHECK(static_cast<double>(quiet) >= 0.95 * static_cast<double>(rings));
}

TEST_CASE("frc_resolution crossing rules")
{
  FrcCurve c;
  for (int r = 0; r < 10; ++r) {
    c.frequency.push_back(r * 0.01);
    c.correlation.push_back(1.0);
  }
  auto res = frc_resolution(c);
  CHECK_FALSE(res.crossed);
  CHECK(res.frequency == 0.09);
  CHECK(res.resolution == doctest::Approx(1.0 / 0.09));

  for (int r = 4; r < 10; ++r)
    c.correlation[r] = 0.0;
  res = frc_resolution(c);
  CHECK(res.crossed);
  const double q = 0.03 + (1.0 - 0.143) * 0.01;
  CHECK(res.frequency == doctest::Approx(q).epsilon(1e-14));
  CHECK(res.resolution == doctest::Approx(1.0 / q).epsilon(1e-14));
}

TEST_CASE("frc_resolution is monotone in the curve")
{
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    FrcCurve hi, lo;
    double level = 1.0;
    for (int r = 0; r < 20; ++r) {
      level = std::max(-0.2, level - 0.15 * u(rng));
      hi.frequency.push_back(r * 0.001);
      hi.correlation.push_back(level);
    }
    lo = hi;
    for (auto& v : lo.correlation)
      v -= 0.1 * u(rng);
    CHECK(frc_resolution(lo).resolution >= frc_resolution(hi).resolution);
  }
}

TEST_CASE("frc resolution worsens with localization jitter")
{
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> pos(0.0, 5000.0);
  LocalizationTable truth;
  for (int i = 0; i < 20000; ++i)
    truth.push_back(at(0, pos(rng), pos(rng)));

  RenderSpec spec;
  spec.bounds = Bounds3{0, 5120, 0, 5120, 0, 0};
  auto resolution = [&](double sigma) {
    std::normal_distribution<double> g(0.0, sigma);
    LocalizationTable a = truth, b = truth;
    for (auto& r : a) {
      r.x += g(rng);
      r.y += g(rng);
    }
    for (auto& r : b) {
      r.x += g(rng);
      r.y += g(rng);
    }
    return frc_resolution(frc_curve(render_2d(a, spec), render_2d(b, spec), spec.pixel_size));
  };
  const auto fine = resolution(5.0), coarse = resolution(20.0);
  MESSAGE("resolution 5 nm jitter: " << fine.resolution << ", 20 nm jitter: " << coarse.resolution);
  CHECK(fine.crossed);
  CHECK(coarse.crossed);
  CHECK(coarse.resolution > fine.resolution);
}
