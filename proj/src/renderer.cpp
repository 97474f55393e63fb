#include "smlm/renderer.hpp"
#include "smlm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace smlm {

namespace {

constexpr double kTruncation = 4.0;
constexpr int kBand = 16;

// Mass of N(mu, s) over the cells [o + i*w, o + (i+1)*w) within mu +- 4s.
struct Weights1D
{
  int first = 0;
  std::vector<double> w;
};

Weights1D axis_weights(double mu, double s, double origin, double width, int n)
{
  Weights1D out;
  const double lo = mu - kTruncation * s, hi = mu + kTruncation * s;
  const int i0 = std::max(0, static_cast<int>(std::floor((lo - origin) / width)));
  const int i1 = std::min(n - 1, static_cast<int>(std::floor((hi - origin) / width)));
  if (i1 < i0)
    return out;
  out.first = i0;
  const double k = 1.0 / (s * std::sqrt(2.0));
  auto cdf = [&](double x) { return 0.5 * std::erf((std::clamp(x, lo, hi) - mu) * k); };
  for (int i = i0; i <= i1; ++i) {
    const double a = origin + i * width, b = a + width;
    out.w.push_back(cdf(b) - cdf(a));
  }
  return out;
}

double sigma_x(const Localization& r, const RenderSpec& spec) { return spec.per_row_sigma ? r.sig_x : spec.sigma; }
double sigma_y(const Localization& r, const RenderSpec& spec) { return spec.per_row_sigma ? r.sig_y : spec.sigma; }

bool usable_sigma(double s) { return std::isfinite(s) && s > 0; }

Bounds3 data_bounds(const LocalizationTable& table, const RenderSpec& spec, bool with_z)
{
  Bounds3 b;
  if (table.empty())
    return {0, spec.pixel_size, 0, spec.pixel_size, 0, spec.voxel_z};
  b.x0 = b.y0 = b.z0 = std::numeric_limits<double>::infinity();
  b.x1 = b.y1 = b.z1 = -std::numeric_limits<double>::infinity();
  for (const auto& r : table) {
    const double sx = kTruncation * sigma_x(r, spec), sy = kTruncation * sigma_y(r, spec);
    const double sz = with_z ? kTruncation * r.sig_z : 0.0;
    b.x0 = std::min(b.x0, r.x - sx);
    b.x1 = std::max(b.x1, r.x + sx);
    b.y0 = std::min(b.y0, r.y - sy);
    b.y1 = std::max(b.y1, r.y + sy);
    b.z0 = std::min(b.z0, r.z - sz);
    b.z1 = std::max(b.z1, r.z + sz);
  }
  return b;
}

int cells(double lo, double hi, double width)
{
  return std::max(1, static_cast<int>(std::ceil((hi - lo) / width)));
}

// Rows whose splat touches each band of `band_height` cells along y.
std::vector<std::vector<std::size_t>> bucket_rows(const LocalizationTable& table, const std::vector<Weights1D>& wy,
                                                  int ny)
{
  const int n_bands = (ny + kBand - 1) / kBand;
  std::vector<std::vector<std::size_t>> bands(static_cast<std::size_t>(n_bands));
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (wy[i].w.empty())
      continue;
    const int b0 = wy[i].first / kBand;
    const int b1 = (wy[i].first + static_cast<int>(wy[i].w.size()) - 1) / kBand;
    for (int b = b0; b <= b1; ++b)
      bands[static_cast<std::size_t>(b)].push_back(i);
  }
  return bands;
}

} // namespace

void RenderSpec::validate() const
{
  if (!(pixel_size > 0) || !(sigma > 0) || !(voxel_x > 0) || !(voxel_y > 0) || !(voxel_z > 0))
    throw std::invalid_argument("render spec: sizes must be > 0");
  if (!(clip > 0))
    throw std::invalid_argument("render spec: clip must be > 0");
  if (!(percentile > 0 && percentile <= 100))
    throw std::invalid_argument("render spec: percentile must lie in (0, 100]");
  if (bounds && !(bounds->x1 > bounds->x0 && bounds->y1 > bounds->y0 && bounds->z1 >= bounds->z0))
    throw std::invalid_argument("render spec: empty bounds");
}

ImageD Volume::slice(int k) const
{
  ImageD img(nx, ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      img(i, j) = at(i, j, k);
  return img;
}

Volume Volume::from_image(const ImageD& img)
{
  Volume v;
  v.nx = img.width();
  v.ny = img.height();
  v.nz = 1;
  v.data = img.data();
  return v;
}

Bounds3 render_bounds_2d(const LocalizationTable& table, const RenderSpec& spec)
{
  spec.validate();
  return data_bounds(table, spec, false);
}

ImageD render_2d(const LocalizationTable& table, const RenderSpec& spec)
{
  spec.validate();
  if (spec.per_row_sigma)
    for (const auto& r : table)
      if (!usable_sigma(r.sig_x) || !usable_sigma(r.sig_y))
        throw std::invalid_argument("render_2d: row without usable sig_x/sig_y");

  const Bounds3 b = spec.bounds ? *spec.bounds : data_bounds(table, spec, false);
  const int nx = cells(b.x0, b.x1, spec.pixel_size);
  const int ny = cells(b.y0, b.y1, spec.pixel_size);
  ImageD img(nx, ny);

  std::vector<Weights1D> wx(table.size()), wy(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    wx[i] = axis_weights(table[i].x, sigma_x(table[i], spec), b.x0, spec.pixel_size, nx);
    wy[i] = axis_weights(table[i].y, sigma_y(table[i], spec), b.y0, spec.pixel_size, ny);
  }
  const auto bands = bucket_rows(table, wy, ny);

  // Each band is written by one task, rows in table order: the sum does not
  // depend on scheduling.
  parallel_for(bands.size(), [&](std::size_t band) {
    const int v_lo = static_cast<int>(band) * kBand, v_hi = std::min(ny, v_lo + kBand);
    for (std::size_t i : bands[band]) {
      const auto& X = wx[i];
      const auto& Y = wy[i];
      for (std::size_t jy = 0; jy < Y.w.size(); ++jy) {
        const int v = Y.first + static_cast<int>(jy);
        if (v < v_lo || v >= v_hi)
          continue;
        for (std::size_t jx = 0; jx < X.w.size(); ++jx)
          img(X.first + static_cast<int>(jx), v) += X.w[jx] * Y.w[jy];
      }
    }
  });
  return img;
}

Volume render_3d(const LocalizationTable& table, const RenderSpec& spec)
{
  spec.validate();
  for (const auto& r : table)
    if (!usable_sigma(r.sig_x) || !usable_sigma(r.sig_y) || !usable_sigma(r.sig_z))
      throw std::invalid_argument("render_3d: row without usable sig_x/sig_y/sig_z");

  RenderSpec per_row = spec;
  per_row.per_row_sigma = true;
  Bounds3 b = spec.bounds ? *spec.bounds : data_bounds(table, per_row, true);
  Volume vol;
  vol.nx = cells(b.x0, b.x1, spec.voxel_x);
  vol.ny = cells(b.y0, b.y1, spec.voxel_y);
  vol.nz = cells(b.z0, b.z1, spec.voxel_z);
  vol.x0 = b.x0;
  vol.y0 = b.y0;
  vol.z0 = b.z0;
  vol.data.assign(static_cast<std::size_t>(vol.nx) * vol.ny * vol.nz, 0.0);

  std::vector<Weights1D> wx(table.size()), wy(table.size()), wz(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    wx[i] = axis_weights(table[i].x, table[i].sig_x, b.x0, spec.voxel_x, vol.nx);
    wy[i] = axis_weights(table[i].y, table[i].sig_y, b.y0, spec.voxel_y, vol.ny);
    wz[i] = axis_weights(table[i].z, table[i].sig_z, b.z0, spec.voxel_z, vol.nz);
  }
  const auto bands = bucket_rows(table, wy, vol.ny);

  parallel_for(bands.size(), [&](std::size_t band) {
    const int v_lo = static_cast<int>(band) * kBand, v_hi = std::min(vol.ny, v_lo + kBand);
    for (std::size_t i : bands[band]) {
      const auto& X = wx[i];
      const auto& Y = wy[i];
      const auto& Z = wz[i];
      for (std::size_t jz = 0; jz < Z.w.size(); ++jz)
        for (std::size_t jy = 0; jy < Y.w.size(); ++jy) {
          const int v = Y.first + static_cast<int>(jy);
          if (v < v_lo || v >= v_hi)
            continue;
          const double wyz = Y.w[jy] * Z.w[jz];
          for (std::size_t jx = 0; jx < X.w.size(); ++jx)
            vol.at(X.first + static_cast<int>(jx), v, Z.first + static_cast<int>(jz)) += X.w[jx] * wyz;
        }
    }
  });
  return vol;
}

ImageD max_project(const Volume& volume, const RenderSpec& spec)
{
  spec.validate();
  if (volume.nx <= 0 || volume.ny <= 0 || volume.nz <= 0)
    throw std::invalid_argument("max_project: empty volume");
  ImageD img(volume.nx, volume.ny);
  for (int j = 0; j < volume.ny; ++j)
    for (int i = 0; i < volume.nx; ++i) {
      double m = 0.0;
      for (int k = 0; k < volume.nz; ++k)
        m = std::max(m, std::min(volume.at(i, j, k), spec.clip));
      img(i, j) = m;
    }

  std::vector<double> sorted = img.data();
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  const auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(spec.percentile / 100.0 * n - 1e-9)));
  double scale = sorted[rank - 1];
  if (!(scale > 0))
    scale = sorted.back();
  if (!(scale > 0))
    return img;
  for (std::size_t i = 0; i < img.size(); ++i)
    img.data()[i] = std::min(1.0, img.data()[i] / scale);
  return img;
}

void write_pgm16(const std::string& path, const ImageD& img, double full_scale)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot open " + path);
  out << "P5\n" << img.width() << ' ' << img.height() << "\n65535\n";
  const double k = full_scale > 0 ? 65535.0 / full_scale : 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img.data()[i] * k, 0.0, 65535.0);
    const auto q = static_cast<unsigned>(std::lround(v));
    const char bytes[2] = {static_cast<char>((q >> 8) & 0xff), static_cast<char>(q & 0xff)};
    out.write(bytes, 2);
  }
  if (!out)
    throw std::runtime_error("write failed: " + path);
}

} // namespace smlm
