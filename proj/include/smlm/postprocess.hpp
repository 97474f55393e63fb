#pragma once

#include "smlm/image.hpp"
#include "smlm/localization.hpp"
#include "smlm/loss.hpp"

#include <vector>

namespace smlm {

struct NmsConfig
{
  double peak_threshold = 0.3;
  double aggregate_threshold = 0.7;
};

struct Detection
{
  int u = 0;
  int v = 0;
  double aggregate = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Candidates are pixels with p > peak_threshold that exceed all 8
/// neighbours (plateaus give no candidate). Each candidate's probability plus
/// that of its 4 edge neighbours must exceed aggregate_threshold. Neighbour
/// mass is only read, so adjacent candidates may share it. Raster order.
std::vector<Detection> nms_detect(const ImageD& p, const NmsConfig& cfg = {});

/// One row per detection: x = pixel center + dx, y = pixel center + dy,
/// z = dz, photons = alpha, prob = min(aggregate, 1), sigmas from the maps.
LocalizationTable maps_to_table(const OutputMaps& maps, const std::vector<Detection>& detections, int frame);

struct DebiasResult
{
  LocalizationTable table;
  int passthrough_bins = 0; ///< bins left unchanged for having too few rows
};

/// Splits rows into n_bins equal-count bins by var_tot and, within each bin,
/// replaces the lateral in-pixel offsets by (F(offset) - 0.5) * pixel_size,
/// F being the bin's empirical (mid-rank) CDF. Row order and all other
/// columns are preserved.
DebiasResult cdf_debias(const LocalizationTable& table, int n_bins, double pixel_size, int min_bin_rows = 10);

/// Drops the ceil(drop_fraction * n) rows with the largest var_tot.
LocalizationTable filter_by_sigma(const LocalizationTable& table, double drop_fraction);

/// Links localizations in consecutive frames that lie within `radius`
/// (lateral, nm) of each other, greedily by distance, and merges every chain
/// into one row: inverse-variance weighted position, summed photons, combined
/// sigma (sum sigma^-2)^-1/2 and the chain's first frame. Linking is repeated
/// on the merged rows until nothing changes.
LocalizationTable group_localizations(const LocalizationTable& table, double radius);

} // namespace smlm
