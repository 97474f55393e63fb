#pragma once

#include <cmath>
#include <vector>

namespace smlm {

/// One inferred (or ground-truth) emitter position in one frame.
struct Localization
{
  int frame = 0;
  double x = 0.0, y = 0.0, z = 0.0; // nm
  double photons = 0.0;
  double prob = 1.0;
  double sig_x = 0.0, sig_y = 0.0, sig_z = 0.0; // nm
  long id = -1; // ground-truth emitter id, -1 when unknown

  /// sqrt(sig_x^2 + sig_y^2 + sig_z^2), used to rank localizations by quality.
  double var_tot() const { return std::sqrt(sig_x * sig_x + sig_y * sig_y + sig_z * sig_z); }

  friend bool operator==(const Localization&, const Localization&) = default;
};

/// Rows sorted by frame.
using LocalizationTable = std::vector<Localization>;

} // namespace smlm
