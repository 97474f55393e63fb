#pragma once

#include "smlm/loss.hpp"

#include <random>
#include <vector>

namespace smlm::testing {

inline std::vector<double> flatten(const OutputMaps& m)
{
  std::vector<double> v;
  for (const auto& c : m.channels)
    v.insert(v.end(), c.data().begin(), c.data().end());
  return v;
}

inline OutputMaps unflatten(const std::vector<double>& v, const OutputMaps& shape)
{
  OutputMaps m = shape;
  std::size_t i = 0;
  for (auto& c : m.channels)
    for (double& x : c.data())
      x = v[i++];
  return m;
}

/// Random maps with p in (0.05, 0.95), offsets within half a pixel and
/// sigmas between 20 and 80 nm.
inline OutputMaps random_maps(int w, int h, double pitch, std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> prob(0.05, 0.95), off(-0.5 * pitch, 0.5 * pitch), depth(-300.0, 300.0),
    sig(20.0, 80.0), bright(500.0, 3000.0), sig_b(100.0, 400.0);
  OutputMaps m(w, h, pitch);
  for (std::size_t k = 0; k < m.pixels(); ++k) {
    m[Channel::P].data()[k] = prob(rng);
    m[Channel::Alpha].data()[k] = bright(rng);
    m[Channel::Dx].data()[k] = off(rng);
    m[Channel::Dy].data()[k] = off(rng);
    m[Channel::Dz].data()[k] = depth(rng);
    m[Channel::SigAlpha].data()[k] = sig_b(rng);
    m[Channel::SigX].data()[k] = sig(rng);
    m[Channel::SigY].data()[k] = sig(rng);
    m[Channel::SigZ].data()[k] = sig(rng) * 2.0;
  }
  return m;
}

/// Emitters placed near random pixel centers so that mixture terms are not
/// vanishingly small.
inline GroundTruthSet random_truth(int w, int h, double pitch, int n, std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> ux(0.0, w * pitch), uy(0.0, h * pitch), depth(-300.0, 300.0),
    bright(500.0, 3000.0);
  GroundTruthSet t;
  for (int i = 0; i < n; ++i)
    t.emitters.push_back({ux(rng), uy(rng), depth(rng), bright(rng)});
  return t;
}

inline ImageD random_indicators(int w, int h, double fill, std::mt19937_64& rng)
{
  std::bernoulli_distribution on(fill);
  ImageD s(w, h, 0.0);
  for (double& v : s.data())
    v = on(rng) ? 1.0 : 0.0;
  return s;
}

} // namespace smlm::testing
