#pragma once

#include "smlm/image.hpp"
#include "smlm/localization.hpp"

#include <optional>
#include <string>
#include <vector>

namespace smlm {

struct Bounds3
{
  double x0 = 0, x1 = 0;
  double y0 = 0, y1 = 0;
  double z0 = 0, z1 = 0;
};

struct RenderSpec
{
  double pixel_size = 10.0;      ///< 2D pixel, nm
  double sigma = 5.0;            ///< fixed splat width, nm
  bool per_row_sigma = false;    ///< use each row's sig_x/sig_y instead of `sigma`
  double voxel_x = 10.0;
  double voxel_y = 10.0;
  double voxel_z = 20.0;
  double clip = 2.5;
  double percentile = 99.5;
  std::optional<Bounds3> bounds; ///< derived from the data when absent

  void validate() const;
};

struct Volume
{
  int nx = 0, ny = 0, nz = 0;
  double x0 = 0, y0 = 0, z0 = 0; ///< corner of voxel (0,0,0), nm
  std::vector<double> data;      ///< x fastest, then y, then z

  double& at(int i, int j, int k) { return data[(static_cast<std::size_t>(k) * ny + j) * nx + i]; }
  double at(int i, int j, int k) const { return data[(static_cast<std::size_t>(k) * ny + j) * nx + i]; }
  ImageD slice(int k) const;
  static Volume from_image(const ImageD& img);
};

/// Extent render_2d uses when spec.bounds is unset: every splat's support.
Bounds3 render_bounds_2d(const LocalizationTable& table, const RenderSpec& spec);

/// Each row adds a unit-mass Gaussian integrated over pixels and truncated at
/// 4 sigma. Image pixel (u, v) covers [x0 + u*ps, x0 + (u+1)*ps).
ImageD render_2d(const LocalizationTable& table, const RenderSpec& spec);

/// Anisotropic splats from each row's (sig_x, sig_y, sig_z); throws if any
/// sigma is missing (non-finite or not positive).
Volume render_3d(const LocalizationTable& table, const RenderSpec& spec);

/// Clips voxels at spec.clip, takes the maximum along z and scales so the
/// spec.percentile-th value (nearest rank) becomes 1; larger values saturate.
ImageD max_project(const Volume& volume, const RenderSpec& spec);

/// 16-bit binary PGM; values are scaled by 65535 / `full_scale` and clamped.
void write_pgm16(const std::string& path, const ImageD& img, double full_scale);

} // namespace smlm
