#include "smlm/metrics.hpp"
#include "smlm/parallel.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <tuple>

namespace smlm {

std::vector<int> min_cost_assignment(const std::vector<std::vector<double>>& cost)
{
  const int n = static_cast<int>(cost.size());
  if (n == 0)
    return {};
  const int m = static_cast<int>(cost.front().size());
  if (n > m)
    throw std::invalid_argument("min_cost_assignment: more rows than columns");

  // Shortest augmenting paths with potentials, 1-based.
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j])
          continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0)
      assignment[p[j] - 1] = j - 1;
  return assignment;
}

namespace {

double pair_distance(const Localization& a, const Localization& b, MatchMode mode)
{
  const double dx = a.x - b.x, dy = a.y - b.y;
  if (mode == MatchMode::Lateral)
    return std::hypot(dx, dy);
  return std::sqrt(dx * dx + dy * dy + (a.z - b.z) * (a.z - b.z));
}

struct DisjointSets
{
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i)
  {
    while (parent[i] != i)
      i = parent[i] = parent[parent[i]];
    return i;
  }
  void join(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

// Optimal matching between the given pred and truth rows of one frame.
std::vector<MatchedPair> match_frame(const LocalizationTable& pred, const LocalizationTable& truth,
                                     const std::vector<std::size_t>& pi, const std::vector<std::size_t>& ti,
                                     double radius, MatchMode mode)
{
  const std::size_t np = pi.size(), nt = ti.size();
  std::vector<MatchedPair> out;
  if (np == 0 || nt == 0)
    return out;

  std::vector<std::vector<std::pair<std::size_t, double>>> edges(np);
  DisjointSets sets(np + nt);
  for (std::size_t a = 0; a < np; ++a)
    for (std::size_t b = 0; b < nt; ++b) {
      const double d = pair_distance(pred[pi[a]], truth[ti[b]], mode);
      if (d <= radius) {
        edges[a].emplace_back(b, d);
        sets.join(a, np + b);
      }
    }

  std::map<std::size_t, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> components;
  for (std::size_t a = 0; a < np; ++a)
    if (!edges[a].empty())
      components[sets.find(a)].first.push_back(a);
  for (std::size_t b = 0; b < nt; ++b) {
    const std::size_t root = sets.find(np + b);
    auto it = components.find(root);
    if (it != components.end())
      it->second.second.push_back(b);
  }

  for (const auto& [root, members] : components) {
    const auto& rows = members.first;
    const auto& cols = members.second;
    if (rows.size() == 1 && cols.size() == 1) {
      out.push_back({pi[rows[0]], ti[cols[0]], edges[rows[0]].front().second});
      continue;
    }
    // Cost d - K on admissible pairs, 0 otherwise: with K above any sum of
    // distances this maximizes the number of admissible pairs first.
    const bool transpose = rows.size() > cols.size();
    const auto& r = transpose ? cols : rows;
    const auto& c = transpose ? rows : cols;
    const double big = (static_cast<double>(r.size()) + 1.0) * (radius + 1.0);
    std::vector<std::vector<double>> cost(r.size(), std::vector<double>(c.size(), 0.0));
    std::vector<std::vector<double>> dist(r.size(), std::vector<double>(c.size(), -1.0));
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (const auto& [b, d] : edges[rows[k]]) {
        const auto pos = std::find(cols.begin(), cols.end(), b) - cols.begin();
        const std::size_t ri = transpose ? static_cast<std::size_t>(pos) : k;
        const std::size_t ci = transpose ? k : static_cast<std::size_t>(pos);
        cost[ri][ci] = d - big;
        dist[ri][ci] = d;
      }
    const std::vector<int> assign = min_cost_assignment(cost);
    for (std::size_t k = 0; k < r.size(); ++k) {
      const int j = assign[k];
      if (j < 0 || dist[k][j] < 0)
        continue;
      const std::size_t a = transpose ? c[j] : r[k];
      const std::size_t b = transpose ? r[k] : c[j];
      out.push_back({pi[a], ti[b], dist[k][j]});
    }
  }
  return out;
}

} // namespace

MatchResult match_localizations(const LocalizationTable& pred, const LocalizationTable& truth, double radius,
                                MatchMode mode)
{
  if (!(radius > 0))
    throw std::invalid_argument("match_localizations: radius must be > 0");

  std::map<int, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> frames;
  for (std::size_t i = 0; i < pred.size(); ++i)
    frames[pred[i].frame].first.push_back(i);
  for (std::size_t i = 0; i < truth.size(); ++i)
    frames[truth[i].frame].second.push_back(i);

  std::vector<const std::pair<std::vector<std::size_t>, std::vector<std::size_t>>*> work;
  for (const auto& [f, rows] : frames)
    work.push_back(&rows);
  std::vector<std::vector<MatchedPair>> per_frame(work.size());
  parallel_for(work.size(), [&](std::size_t k) {
    per_frame[k] = match_frame(pred, truth, work[k]->first, work[k]->second, radius, mode);
  });

  MatchResult result;
  for (auto& v : per_frame)
    result.pairs.insert(result.pairs.end(), v.begin(), v.end());
  std::sort(result.pairs.begin(), result.pairs.end(),
            [](const MatchedPair& a, const MatchedPair& b) { return std::tie(a.pred, a.truth) < std::tie(b.pred, b.truth); });
  for (const auto& pr : result.pairs) {
    const Localization& a = pred[pr.pred];
    const Localization& b = truth[pr.truth];
    result.lateral_axial.emplace_back(std::hypot(a.x - b.x, a.y - b.y), std::abs(a.z - b.z));
  }
  result.tp = result.pairs.size();
  result.fp = pred.size() - result.tp;
  result.fn = truth.size() - result.tp;
  return result;
}

double jaccard(const MatchResult& m)
{
  const std::size_t total = m.tp + m.fp + m.fn;
  if (total == 0)
    return 100.0;
  return 100.0 * static_cast<double>(m.tp) / static_cast<double>(total);
}

std::optional<double> rmse(const MatchResult& m, ErrorMode mode)
{
  if (m.lateral_axial.empty())
    return std::nullopt;
  double acc = 0.0;
  for (const auto& [lat, ax] : m.lateral_axial) {
    switch (mode) {
    case ErrorMode::Lateral: acc += lat * lat; break;
    case ErrorMode::Axial: acc += ax * ax; break;
    case ErrorMode::Volume: acc += lat * lat + ax * ax; break;
    }
  }
  return std::sqrt(acc / static_cast<double>(m.lateral_axial.size()));
}

double efficiency(double jaccard_index, double rmse_nm, double alpha)
{
  const double dj = 100.0 - jaccard_index;
  return 100.0 - std::sqrt(dj * dj + alpha * alpha * rmse_nm * rmse_nm);
}

double efficiency_3d(double jaccard_index, double rmse_lateral, double rmse_axial)
{
  return 0.5 * (efficiency(jaccard_index, rmse_lateral, 0.5) + efficiency(jaccard_index, rmse_axial, 1.0));
}

std::pair<LocalizationTable, LocalizationTable> split_even_odd_blocks(const LocalizationTable& table,
                                                                      std::size_t block_size)
{
  if (block_size == 0)
    throw std::invalid_argument("split_even_odd_blocks: block_size must be >= 1");
  LocalizationTable rows = table;
  std::stable_sort(rows.begin(), rows.end(), [](const Localization& a, const Localization& b) { return a.frame < b.frame; });
  std::pair<LocalizationTable, LocalizationTable> out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    ((i / block_size) % 2 == 0 ? out.first : out.second).push_back(rows[i]);
  return out;
}

namespace {

std::mutex& fftw_planner_mutex()
{
  static std::mutex m;
  return m;
}

// Forward r2c transform of `img` zero-padded to n x n; returns n x (n/2+1).
std::vector<std::complex<double>> padded_spectrum(const ImageD& img, int n)
{
  const int nc = n / 2 + 1;
  double* in = fftw_alloc_real(static_cast<std::size_t>(n) * n);
  fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(n) * nc);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_2d(n, n, in, out, FFTW_ESTIMATE);
  }
  std::fill(in, in + static_cast<std::size_t>(n) * n, 0.0);
  for (int v = 0; v < img.height(); ++v)
    for (int u = 0; u < img.width(); ++u)
      in[static_cast<std::size_t>(v) * n + u] = img(u, v);
  fftw_execute(plan);
  std::vector<std::complex<double>> spec(static_cast<std::size_t>(n) * nc);
  for (std::size_t i = 0; i < spec.size(); ++i)
    spec[i] = {out[i][0], out[i][1]};
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return spec;
}

} // namespace

FrcCurve frc_curve(const ImageD& a, const ImageD& b, double pixel_size)
{
  if (!a.same_shape(b))
    throw std::invalid_argument("frc_curve: images differ in size");
  if (a.width() == 0 || a.height() == 0)
    throw std::invalid_argument("frc_curve: empty image");
  if (!(pixel_size > 0))
    throw std::invalid_argument("frc_curve: pixel_size must be > 0");

  int n = 1;
  while (n < std::max(a.width(), a.height()))
    n *= 2;
  n = std::max(n, 2);
  const int nc = n / 2 + 1;
  const auto fa = padded_spectrum(a, n);
  const auto fb = padded_spectrum(b, n);

  const int rings = n / 2 + 1;
  std::vector<double> num(rings, 0.0), pa(rings, 0.0), pb(rings, 0.0), samples(rings, 0.0);
  std::vector<std::size_t> bins(rings, 0);
  for (int row = 0; row < n; ++row) {
    const int ky = row <= n / 2 ? row : row - n;
    for (int kx = 0; kx < nc; ++kx) {
      const int r = static_cast<int>(std::lround(std::hypot(static_cast<double>(kx), static_cast<double>(ky))));
      if (r >= rings)
        continue;
      // Columns strictly inside the half plane stand for themselves and
      // their Hermitian mirror.
      const bool edge = (kx == 0 || kx == n / 2);
      const double w = edge ? 1.0 : 2.0;
      const auto& x = fa[static_cast<std::size_t>(row) * nc + kx];
      const auto& y = fb[static_cast<std::size_t>(row) * nc + kx];
      num[r] += w * (x * std::conj(y)).real();
      pa[r] += w * std::norm(x);
      pb[r] += w * std::norm(y);
      bins[r] += edge ? 1 : 2;
      samples[r] += 0.5 * w;
    }
  }

  FrcCurve curve;
  curve.padded_size = n;
  curve.pixel_size = pixel_size;
  for (int r = 0; r < rings; ++r) {
    curve.frequency.push_back(r / (n * pixel_size));
    const double denom = std::sqrt(pa[r] * pb[r]);
    curve.correlation.push_back(denom > 0 ? num[r] / denom : 0.0);
    curve.samples.push_back(samples[r]);
    curve.bins.push_back(bins[r]);
  }
  return curve;
}

FrcResolution frc_resolution(const FrcCurve& curve, double threshold)
{
  const auto& f = curve.frequency;
  const auto& c = curve.correlation;
  if (f.empty() || f.size() != c.size())
    throw std::invalid_argument("frc_resolution: empty or malformed curve");
  for (std::size_t i = 1; i < c.size(); ++i) {
    if (!(c[i] < threshold))
      continue;
    const double drop = c[i - 1] - c[i];
    const double t = drop > 0 ? std::clamp((c[i - 1] - threshold) / drop, 0.0, 1.0) : 0.0;
    const double q = f[i - 1] + t * (f[i] - f[i - 1]);
    return {q > 0 ? 1.0 / q : std::numeric_limits<double>::infinity(), q, true};
  }
  const double nyquist = f.back();
  return {nyquist > 0 ? 1.0 / nyquist : std::numeric_limits<double>::infinity(), nyquist, false};
}

} // namespace smlm
