#pragma once

#include <cstdint>
#include <random>

namespace smlm {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream). Frame k of a simulation uses
/// stream k + 1 so that frames can be produced in any order.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream)
{
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x5eedu};
  return Rng(seq);
}

} // namespace smlm
