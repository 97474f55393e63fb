#pragma once

#include "smlm/dual.hpp"
#include "smlm/image.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace smlm {

/// Sum of two circular Gaussians whose width grows with (1 + |z|).
struct Psf2DParams
{
  double a1 = 0.5, a2 = 0.5;
  double b1 = 5e-5, b2 = 5e-5;
};

/// Astigmatic elliptical Gaussian with per-axis focal offsets.
struct PsfAsParams
{
  double a = 9.5;
  double b_x = -300.0, b_y = 300.0;
  double c = 1e5;
};

/// Double helix: two Gaussian lobes at radius d rotating with z.
struct PsfDhParams
{
  double a = 1e-4;
  double b = 3.141592653589793 / 1000.0;
  double c = 0.0;
  double d = 300.0;
};

using ParametricPsf = std::variant<Psf2DParams, PsfAsParams, PsfDhParams>;

enum class PsfKind { TwoD, Astigmatic, DoubleHelix };

/// Number of shape parameters; identical for all three kinds.
inline constexpr int kShapeParams = 4;
using ShapeVector = std::array<double, kShapeParams>;

PsfKind kind_of(const ParametricPsf& p);
std::string kind_name(PsfKind kind);
PsfKind parse_kind(const std::string& name);

/// Flat (p0..p3) view of the parametric component, in declaration order.
ShapeVector shape_vector(const ParametricPsf& p);
ParametricPsf make_parametric(PsfKind kind, const ShapeVector& shape);

/// Throws std::invalid_argument when the parameters violate their invariants.
void validate(const ParametricPsf& p);

/// Regular 3D grid of additive PSF corrections, trilinearly interpolated.
/// Node (i, j, k) sits at origin + ((i - (nx-1)/2) * pixel_size_xy,
/// (j - (ny-1)/2) * pixel_size_xy, (k - (nz-1)/2) * z_spacing).
struct PixelMap3D
{
  int nx = 0, ny = 0, nz = 0;
  double pixel_size_xy = 100.0;
  double z_spacing = 100.0;
  Point3 origin{};
  std::vector<double> values; // x fastest, then y, then z

  /// All-zero map, 26 x 26 pixels laterally and z in [-1500, 1500] nm.
  static PixelMap3D zeros(double pixel_size_xy, int nx = 26, int ny = 26, double z_half_range = 1500.0,
                          double z_spacing = 100.0);

  std::size_t node_index(int i, int j, int k) const
  {
    return (static_cast<std::size_t>(k) * ny + j) * nx + i;
  }
  std::size_t node_count() const { return values.size(); }
  void validate() const;
  /// Largest lateral distance from (0, 0) at which the map is non-zero.
  double lateral_extent() const;
};

/// Trilinear sample with its spatial derivatives and the 8 contributing nodes.
struct PixmapSample
{
  double value = 0.0;
  double d_dx = 0.0, d_dy = 0.0, d_dz = 0.0;
  bool inside = false;
  std::array<std::size_t, 8> nodes{};
  std::array<double, 8> weights{};
};

PixmapSample sample_pixmap(const PixelMap3D& map, double dx, double dy, double dz);

struct PsfModel
{
  ParametricPsf parametric = PsfAsParams{};
  std::optional<PixelMap3D> pixmap;

  PsfKind kind() const { return kind_of(parametric); }
};

void validate(const PsfModel& model);

// Closed-form kernels, generic over double and Dual<N>. `p` is the shape vector.
namespace kernel {

template <typename T>
T psf_2d(const std::array<T, 4>& p, T dx, T dy, T dz)
{
  using std::abs;
  using std::exp;
  const T r2 = dx * dx + dy * dy;
  const T s = 1.0 + abs(dz);
  const T s2 = s * s;
  return p[0] * exp(-(p[2] * r2) / s2) + p[1] * exp(-(p[3] * r2) / s2);
}

template <typename T>
T psf_as(const std::array<T, 4>& p, T dx, T dy, T dz)
{
  using std::exp;
  const T ex = dz - p[1];
  const T ey = dz - p[2];
  return exp(-(p[0] * dx * dx) / (ex * ex + p[3])) * exp(-(p[0] * dy * dy) / (ey * ey + p[3]));
}

/// Both lobes use negative-definite exponents.
template <typename T>
T psf_dh(const std::array<T, 4>& p, T dx, T dy, T dz)
{
  using std::cos;
  using std::exp;
  using std::sin;
  const T phase = p[1] * dz + p[2];
  const T sx = p[3] * cos(phase);
  const T sy = p[3] * sin(phase);
  const T ux = dx - sx, uy = dy - sy;
  const T vx = dx + sx, vy = dy + sy;
  return exp(-(p[0] * ux * ux) - p[0] * uy * uy) + exp(-(p[0] * vx * vx) - p[0] * vy * vy);
}

template <typename T>
T parametric(PsfKind kind, const std::array<T, 4>& p, T dx, T dy, T dz)
{
  switch (kind) {
  case PsfKind::TwoD: return psf_2d(p, dx, dy, dz);
  case PsfKind::Astigmatic: return psf_as(p, dx, dy, dz);
  case PsfKind::DoubleHelix: return psf_dh(p, dx, dy, dz);
  }
  return T(0.0);
}

} // namespace kernel

double eval_parametric(const PsfModel& model, double dx, double dy, double dz);
double eval_pixmap(const PixelMap3D& map, double dx, double dy, double dz);
/// Parametric plus pixel map, clamped at 0 from below.
double eval_psf(const PsfModel& model, double dx, double dy, double dz);

/// Derivative slots in PsfGradient::d.
enum PsfSlot : int { kSlotDx = 0, kSlotDy = 1, kSlotDz = 2, kSlotShape0 = 3 };
inline constexpr int kPsfSlots = 3 + kShapeParams;

/// eval_psf together with its derivatives w.r.t. (dx, dy, dz, shape...).
/// When the clamp is active the value and all derivatives are zero.
struct PsfGradient
{
  double value = 0.0;
  std::array<double, kPsfSlots> d{};
  bool clamped = false;
  PixmapSample pixmap;
};

PsfGradient eval_psf_gradient(const PsfModel& model, double dx, double dy, double dz);

/// Lateral radius (nm) outside which the model is treated as zero when an
/// emitter at depth z is rendered.
double support_radius(const PsfModel& model, double z);

/// Adds photons * PSF(center - x, center - y, -z) to every pixel of `target`
/// inside the support window. `target` must match grid.width x grid.height.
void add_emitter(ImageD& target, const PixelGrid& grid, const PsfModel& model, double x, double y, double z,
                 double photons);

/// Single-emitter image on `grid` (zero outside the support window).
ImageD render_patch(const PsfModel& model, double x, double y, double z, double photons, const PixelGrid& grid);

} // namespace smlm
