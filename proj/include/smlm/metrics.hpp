#pragma once

#include "smlm/image.hpp"
#include "smlm/localization.hpp"

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

namespace smlm {

struct MatchedPair
{
  std::size_t pred = 0;
  std::size_t truth = 0;
  double distance = 0.0; ///< distance used for the radius test
};

struct MatchResult
{
  std::vector<MatchedPair> pairs; ///< sorted by (pred, truth)
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::vector<std::pair<double, double>> lateral_axial; ///< per pair: lateral distance, |dz|
};

enum class MatchMode
{
  Lateral, ///< radius tested on the xy distance
  Volume   ///< radius tested on the xyz distance
};

/// Per-frame one-to-one matching with maximum cardinality and, among those,
/// minimum total distance.
MatchResult match_localizations(const LocalizationTable& pred, const LocalizationTable& truth, double radius,
                                MatchMode mode = MatchMode::Lateral);

/// Minimum-cost assignment of every row to a distinct column (rows <= cols).
/// Returns the column chosen for each row.
std::vector<int> min_cost_assignment(const std::vector<std::vector<double>>& cost);

/// 100 * TP / (TP + FP + FN); 100 when both sets are empty.
double jaccard(const MatchResult& m);

enum class ErrorMode
{
  Lateral,
  Axial,
  Volume
};

/// Empty when nothing matched.
std::optional<double> rmse(const MatchResult& m, ErrorMode mode);

double efficiency(double jaccard_index, double rmse_nm, double alpha);

/// Mean of the lateral (alpha 0.5) and axial (alpha 1.0) efficiencies.
double efficiency_3d(double jaccard_index, double rmse_lateral, double rmse_axial);

/// Consecutive blocks of block_size rows (in frame order); even blocks go to
/// the first table and odd ones to the second.
std::pair<LocalizationTable, LocalizationTable> split_even_odd_blocks(const LocalizationTable& table,
                                                                      std::size_t block_size);

struct FrcCurve
{
  std::vector<double> frequency;   ///< nm^-1, ring r at r / (N * pixel_size)
  std::vector<double> correlation; ///< per ring, 0 where either image has no power
  std::vector<double> samples;     ///< independent Fourier samples per ring (Hermitian pairs counted once)
  std::vector<std::size_t> bins;   ///< all DFT bins falling into the ring
  int padded_size = 0;
  double pixel_size = 1.0;
};

/// Both images are zero-padded to the same power-of-two square. Rings have
/// unit width in reciprocal pixels and run from 0 up to the Nyquist ring.
FrcCurve frc_curve(const ImageD& a, const ImageD& b, double pixel_size);

struct FrcResolution
{
  double resolution = 0.0; ///< nm
  double frequency = 0.0;  ///< nm^-1 at the crossing (or Nyquist)
  bool crossed = false;    ///< false: curve never fell below threshold, resolution is Nyquist-limited
};

FrcResolution frc_resolution(const FrcCurve& curve, double threshold = 0.143);

} // namespace smlm
