#include "smlm/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace smlm {

std::vector<Detection> nms_detect(const ImageD& p, const NmsConfig& cfg)
{
  std::vector<Detection> out;
  for (int v = 0; v < p.height(); ++v) {
    for (int u = 0; u < p.width(); ++u) {
      const double c = p(u, v);
      if (!(c > cfg.peak_threshold))
        continue;
      bool peak = true;
      for (int dv = -1; dv <= 1 && peak; ++dv)
        for (int du = -1; du <= 1; ++du) {
          if ((du == 0 && dv == 0) || !p.contains(u + du, v + dv))
            continue;
          if (!(c > p(u + du, v + dv))) {
            peak = false;
            break;
          }
        }
      if (!peak)
        continue;
      double agg = c;
      constexpr int cross[4][2] = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};
      for (const auto& d : cross)
        if (p.contains(u + d[0], v + d[1]))
          agg += p(u + d[0], v + d[1]);
      if (agg > cfg.aggregate_threshold)
        out.push_back({u, v, agg});
    }
  }
  return out;
}

LocalizationTable maps_to_table(const OutputMaps& maps, const std::vector<Detection>& detections, int frame)
{
  LocalizationTable table;
  table.reserve(detections.size());
  for (const auto& d : detections) {
    Localization row;
    row.frame = frame;
    row.x = maps.center_x(d.u) + maps[Channel::Dx](d.u, d.v);
    row.y = maps.center_y(d.v) + maps[Channel::Dy](d.u, d.v);
    row.z = maps[Channel::Dz](d.u, d.v);
    row.photons = maps[Channel::Alpha](d.u, d.v);
    row.prob = std::min(d.aggregate, 1.0);
    row.sig_x = maps[Channel::SigX](d.u, d.v);
    row.sig_y = maps[Channel::SigY](d.u, d.v);
    row.sig_z = maps[Channel::SigZ](d.u, d.v);
    table.push_back(row);
  }
  return table;
}

namespace {

double in_pixel_offset(double x, double pitch)
{
  return x - (std::floor(x / pitch) + 0.5) * pitch;
}

// Mid-rank empirical CDF of `values` evaluated at each of them.
std::vector<double> mid_cdf(const std::vector<double>& values)
{
  const std::size_t m = values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> cdf(m);
  std::size_t i = 0;
  while (i < m) {
    std::size_t j = i;
    while (j < m && values[order[j]] == values[order[i]])
      ++j;
    // i values are strictly smaller, j are <= this one.
    const double f = 0.5 * static_cast<double>(i + j) / static_cast<double>(m);
    for (std::size_t k = i; k < j; ++k)
      cdf[order[k]] = f;
    i = j;
  }
  return cdf;
}

} // namespace

DebiasResult cdf_debias(const LocalizationTable& table, int n_bins, double pixel_size, int min_bin_rows)
{
  if (n_bins < 1)
    throw std::invalid_argument("cdf_debias: n_bins must be >= 1");
  if (!(pixel_size > 0))
    throw std::invalid_argument("cdf_debias: pixel_size must be > 0");

  DebiasResult out;
  out.table = table;
  const std::size_t n = table.size();
  if (n == 0)
    return out;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return table[a].var_tot() < table[b].var_tot(); });

  const std::size_t bins = static_cast<std::size_t>(n_bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t lo = b * n / bins;
    const std::size_t hi = (b + 1) * n / bins;
    if (hi <= lo)
      continue;
    if (hi - lo < static_cast<std::size_t>(min_bin_rows)) {
      ++out.passthrough_bins;
      continue;
    }
    std::vector<double> ox, oy;
    for (std::size_t i = lo; i < hi; ++i) {
      ox.push_back(in_pixel_offset(table[order[i]].x, pixel_size));
      oy.push_back(in_pixel_offset(table[order[i]].y, pixel_size));
    }
    const std::vector<double> fx = mid_cdf(ox), fy = mid_cdf(oy);
    for (std::size_t i = lo; i < hi; ++i) {
      Localization& row = out.table[order[i]];
      const std::size_t k = i - lo;
      row.x = row.x - ox[k] + (fx[k] - 0.5) * pixel_size;
      row.y = row.y - oy[k] + (fy[k] - 0.5) * pixel_size;
    }
  }
  return out;
}

LocalizationTable filter_by_sigma(const LocalizationTable& table, double drop_fraction)
{
  if (!(drop_fraction >= 0 && drop_fraction < 1))
    throw std::invalid_argument("filter_by_sigma: drop_fraction must lie in [0, 1)");
  const std::size_t n = table.size();
  const auto drop = static_cast<std::size_t>(std::ceil(drop_fraction * static_cast<double>(n) - 1e-9));
  if (drop == 0)
    return table;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return table[a].var_tot() > table[b].var_tot(); });
  std::vector<bool> keep(n, true);
  for (std::size_t i = 0; i < drop && i < n; ++i)
    keep[order[i]] = false;

  LocalizationTable out;
  out.reserve(n - drop);
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i])
      out.push_back(table[i]);
  return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct AxisMerge
{
  double mean, sigma;
};

// Inverse-variance combination along one axis. Zero sigmas dominate, infinite
// sigmas carry no weight.
AxisMerge merge_axis(const std::vector<double>& values, const std::vector<double>& sigmas)
{
  const std::size_t n = values.size();
  std::size_t exact = 0;
  double exact_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (sigmas[i] == 0.0) {
      ++exact;
      exact_sum += values[i];
    }
  if (exact > 0)
    return {exact_sum / static_cast<double>(exact), 0.0};

  double wsum = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(sigmas[i]))
      continue;
    const double w = 1.0 / (sigmas[i] * sigmas[i]);
    wsum += w;
    acc += w * values[i];
  }
  if (wsum == 0.0) {
    double plain = 0.0;
    for (double v : values)
      plain += v;
    return {plain / static_cast<double>(n), kInf};
  }
  return {acc / wsum, 1.0 / std::sqrt(wsum)};
}

Localization merge_chain(const LocalizationTable& rows, const std::vector<std::size_t>& chain)
{
  if (chain.size() == 1)
    return rows[chain.front()];
  Localization out = rows[chain.front()];
  std::vector<double> vx, vy, vz, sx, sy, sz;
  out.photons = 0.0;
  out.prob = 0.0;
  for (std::size_t i : chain) {
    const Localization& r = rows[i];
    vx.push_back(r.x);
    vy.push_back(r.y);
    vz.push_back(r.z);
    sx.push_back(r.sig_x);
    sy.push_back(r.sig_y);
    sz.push_back(r.sig_z);
    out.photons += r.photons;
    out.prob = std::max(out.prob, r.prob);
  }
  const AxisMerge mx = merge_axis(vx, sx), my = merge_axis(vy, sy), mz = merge_axis(vz, sz);
  out.x = mx.mean;
  out.y = my.mean;
  out.z = mz.mean;
  out.sig_x = mx.sigma;
  out.sig_y = my.sigma;
  out.sig_z = mz.sigma;
  return out;
}

// One linking pass over frame-sorted rows. Returns true if anything merged.
bool group_pass(const LocalizationTable& rows, double radius, LocalizationTable& out)
{
  std::vector<std::vector<std::size_t>> chains;
  std::vector<std::size_t> open; // chains whose last row is in the previous frame
  bool merged = false;

  std::size_t i = 0;
  while (i < rows.size()) {
    const int frame = rows[i].frame;
    std::size_t j = i;
    while (j < rows.size() && rows[j].frame == frame)
      ++j;

    std::vector<std::size_t> still_open;
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs; // distance, chain, row
    for (std::size_t c : open) {
      const Localization& last = rows[chains[c].back()];
      if (last.frame != frame - 1)
        continue;
      for (std::size_t r = i; r < j; ++r) {
        const double d = std::hypot(rows[r].x - last.x, rows[r].y - last.y);
        if (d <= radius)
          pairs.emplace_back(d, c, r);
      }
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<bool> chain_taken(chains.size(), false), row_taken(j - i, false);
    for (const auto& [d, c, r] : pairs) {
      if (chain_taken[c] || row_taken[r - i])
        continue;
      chain_taken[c] = true;
      row_taken[r - i] = true;
      chains[c].push_back(r);
      still_open.push_back(c);
      merged = true;
    }
    for (std::size_t r = i; r < j; ++r) {
      if (row_taken[r - i])
        continue;
      chains.push_back({r});
      still_open.push_back(chains.size() - 1);
    }
    open = std::move(still_open);
    i = j;
  }

  // Chains are created in (first frame, row) order already.
  std::vector<std::size_t> order(chains.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return chains[a].front() < chains[b].front(); });
  out.clear();
  out.reserve(chains.size());
  for (std::size_t c : order)
    out.push_back(merge_chain(rows, chains[c]));
  return merged;
}

} // namespace

LocalizationTable group_localizations(const LocalizationTable& table, double radius)
{
  if (!(radius > 0))
    throw std::invalid_argument("group_localizations: radius must be > 0");
  LocalizationTable rows = table;
  std::stable_sort(rows.begin(), rows.end(), [](const Localization& a, const Localization& b) { return a.frame < b.frame; });
  LocalizationTable next;
  while (group_pass(rows, radius, next))
    rows.swap(next);
  return next;
}

} // namespace smlm
