#include "smlm/psf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace smlm {

namespace {

template <class... Ts>
struct overloaded : Ts...
{
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool finite_all(const ShapeVector& s)
{
  return std::all_of(s.begin(), s.end(), [](double v) { return std::isfinite(v); });
}

} // namespace

PsfKind kind_of(const ParametricPsf& p)
{
  return std::visit(overloaded{[](const Psf2DParams&) { return PsfKind::TwoD; },
                               [](const PsfAsParams&) { return PsfKind::Astigmatic; },
                               [](const PsfDhParams&) { return PsfKind::DoubleHelix; }},
                    p);
}

std::string kind_name(PsfKind kind)
{
  switch (kind) {
  case PsfKind::TwoD: return "2d";
  case PsfKind::Astigmatic: return "as";
  case PsfKind::DoubleHelix: return "dh";
  }
  return "?";
}

PsfKind parse_kind(const std::string& name)
{
  if (name == "2d")
    return PsfKind::TwoD;
  if (name == "as")
    return PsfKind::Astigmatic;
  if (name == "dh")
    return PsfKind::DoubleHelix;
  throw std::invalid_argument("unknown PSF kind '" + name + "'");
}

ShapeVector shape_vector(const ParametricPsf& p)
{
  return std::visit(overloaded{[](const Psf2DParams& q) { return ShapeVector{q.a1, q.a2, q.b1, q.b2}; },
                               [](const PsfAsParams& q) { return ShapeVector{q.a, q.b_x, q.b_y, q.c}; },
                               [](const PsfDhParams& q) { return ShapeVector{q.a, q.b, q.c, q.d}; }},
                    p);
}

ParametricPsf make_parametric(PsfKind kind, const ShapeVector& s)
{
  switch (kind) {
  case PsfKind::TwoD: return Psf2DParams{s[0], s[1], s[2], s[3]};
  case PsfKind::Astigmatic: return PsfAsParams{s[0], s[1], s[2], s[3]};
  case PsfKind::DoubleHelix: return PsfDhParams{s[0], s[1], s[2], s[3]};
  }
  throw std::invalid_argument("make_parametric: bad kind");
}

void validate(const ParametricPsf& p)
{
  if (!finite_all(shape_vector(p)))
    throw std::invalid_argument("PSF parameters must be finite");
  std::visit(overloaded{[](const Psf2DParams& q) {
                          if (!(q.b1 > 0 && q.b2 > 0))
                            throw std::invalid_argument("2d PSF: b1, b2 must be > 0");
                          if (!(q.a1 + q.a2 > 0))
                            throw std::invalid_argument("2d PSF: a1 + a2 must be > 0");
                        },
                        [](const PsfAsParams& q) {
                          if (!(q.a > 0 && q.c > 0))
                            throw std::invalid_argument("as PSF: a and c must be > 0");
                        },
                        [](const PsfDhParams& q) {
                          if (!(q.a > 0 && q.d > 0))
                            throw std::invalid_argument("dh PSF: a and d must be > 0");
                        }},
             p);
}

PixelMap3D PixelMap3D::zeros(double pixel_size_xy, int nx, int ny, double z_half_range, double z_spacing)
{
  PixelMap3D map;
  map.nx = nx;
  map.ny = ny;
  map.nz = static_cast<int>(std::lround(2.0 * z_half_range / z_spacing)) + 1;
  map.pixel_size_xy = pixel_size_xy;
  map.z_spacing = z_spacing;
  map.values.assign(static_cast<std::size_t>(map.nx) * map.ny * map.nz, 0.0);
  return map;
}

void PixelMap3D::validate() const
{
  if (nx < 2 || ny < 2 || nz < 2)
    throw std::invalid_argument("pixel map needs at least 2 nodes per axis");
  if (!(pixel_size_xy > 0) || !(z_spacing > 0))
    throw std::invalid_argument("pixel map spacing must be > 0");
  if (values.size() != static_cast<std::size_t>(nx) * ny * nz)
    throw std::invalid_argument("pixel map value count does not match dims");
}

double PixelMap3D::lateral_extent() const
{
  const double hx = 0.5 * (nx - 1) * pixel_size_xy;
  const double hy = 0.5 * (ny - 1) * pixel_size_xy;
  return std::hypot(std::abs(origin.x) + hx, std::abs(origin.y) + hy);
}

PixmapSample sample_pixmap(const PixelMap3D& map, double dx, double dy, double dz)
{
  PixmapSample s;
  const double fx = (dx - map.origin.x) / map.pixel_size_xy + 0.5 * (map.nx - 1);
  const double fy = (dy - map.origin.y) / map.pixel_size_xy + 0.5 * (map.ny - 1);
  const double fz = (dz - map.origin.z) / map.z_spacing + 0.5 * (map.nz - 1);
  if (!(fx >= 0 && fy >= 0 && fz >= 0 && fx <= map.nx - 1 && fy <= map.ny - 1 && fz <= map.nz - 1))
    return s;

  const int i0 = std::min(static_cast<int>(fx), map.nx - 2);
  const int j0 = std::min(static_cast<int>(fy), map.ny - 2);
  const int k0 = std::min(static_cast<int>(fz), map.nz - 2);
  const double tx = fx - i0, ty = fy - j0, tz = fz - k0;

  s.inside = true;
  int n = 0;
  double gx = 0, gy = 0, gz = 0;
  for (int dk = 0; dk < 2; ++dk) {
    const double wz = dk ? tz : 1.0 - tz;
    const double sz = dk ? 1.0 : -1.0;
    for (int dj = 0; dj < 2; ++dj) {
      const double wy = dj ? ty : 1.0 - ty;
      const double sy = dj ? 1.0 : -1.0;
      for (int di = 0; di < 2; ++di, ++n) {
        const double wx = di ? tx : 1.0 - tx;
        const double sx = di ? 1.0 : -1.0;
        const std::size_t node = map.node_index(i0 + di, j0 + dj, k0 + dk);
        const double v = map.values[node];
        s.nodes[n] = node;
        s.weights[n] = wx * wy * wz;
        s.value += s.weights[n] * v;
        gx += sx * wy * wz * v;
        gy += wx * sy * wz * v;
        gz += wx * wy * sz * v;
      }
    }
  }
  s.d_dx = gx / map.pixel_size_xy;
  s.d_dy = gy / map.pixel_size_xy;
  s.d_dz = gz / map.z_spacing;
  return s;
}

double eval_parametric(const PsfModel& model, double dx, double dy, double dz)
{
  return kernel::parametric(model.kind(), shape_vector(model.parametric), dx, dy, dz);
}

double eval_pixmap(const PixelMap3D& map, double dx, double dy, double dz)
{
  return sample_pixmap(map, dx, dy, dz).value;
}

double eval_psf(const PsfModel& model, double dx, double dy, double dz)
{
  double v = eval_parametric(model, dx, dy, dz);
  if (model.pixmap)
    v += eval_pixmap(*model.pixmap, dx, dy, dz);
  return std::max(v, 0.0);
}

PsfGradient eval_psf_gradient(const PsfModel& model, double dx, double dy, double dz)
{
  using D = Dual<kPsfSlots>;
  const ShapeVector shape = shape_vector(model.parametric);
  std::array<D, 4> p;
  for (int i = 0; i < kShapeParams; ++i)
    p[i] = D::variable(shape[i], kSlotShape0 + i);
  const D value = kernel::parametric(model.kind(), p, D::variable(dx, kSlotDx), D::variable(dy, kSlotDy),
                                     D::variable(dz, kSlotDz));

  PsfGradient g;
  g.value = value.v;
  g.d = value.d;
  if (model.pixmap) {
    g.pixmap = sample_pixmap(*model.pixmap, dx, dy, dz);
    g.value += g.pixmap.value;
    g.d[kSlotDx] += g.pixmap.d_dx;
    g.d[kSlotDy] += g.pixmap.d_dy;
    g.d[kSlotDz] += g.pixmap.d_dz;
  }
  if (g.value < 0.0) {
    g.value = 0.0;
    g.d.fill(0.0);
    g.clamped = true;
  }
  return g;
}

double support_radius(const PsfModel& model, double z)
{
  constexpr double kSigmas = 6.0;
  const double dz = -z;
  double r = std::visit(
    overloaded{[&](const Psf2DParams& q) {
                 const double s = 1.0 + std::abs(dz);
                 double sigma = 0.0;
                 if (q.a1 != 0)
                   sigma = std::max(sigma, s / std::sqrt(2.0 * q.b1));
                 if (q.a2 != 0)
                   sigma = std::max(sigma, s / std::sqrt(2.0 * q.b2));
                 return kSigmas * sigma;
               },
               [&](const PsfAsParams& q) {
                 const double vx = ((dz - q.b_x) * (dz - q.b_x) + q.c) / (2.0 * q.a);
                 const double vy = ((dz - q.b_y) * (dz - q.b_y) + q.c) / (2.0 * q.a);
                 return kSigmas * std::sqrt(std::max(vx, vy));
               },
               [&](const PsfDhParams& q) { return std::abs(q.d) + kSigmas / std::sqrt(2.0 * q.a); }},
    model.parametric);
  if (model.pixmap)
    r = std::max(r, model.pixmap->lateral_extent());
  return r;
}

void add_emitter(ImageD& target, const PixelGrid& grid, const PsfModel& model, double x, double y, double z,
                 double photons)
{
  if (target.width() != grid.width || target.height() != grid.height)
    throw std::invalid_argument("add_emitter: target does not match grid");
  if (!(grid.pixel_size > 0) || grid.oversample < 1)
    throw std::invalid_argument("add_emitter: invalid grid");
  if (photons == 0.0 || grid.width == 0 || grid.height == 0)
    return;

  const double radius = support_radius(model, z) + grid.pixel_size;
  const auto lo = [&](double c, double origin) {
    return static_cast<long>(std::floor((c - radius - origin) / grid.pixel_size));
  };
  const auto hi = [&](double c, double origin) {
    return static_cast<long>(std::ceil((c + radius - origin) / grid.pixel_size));
  };
  const long u0 = std::max(0L, lo(x, grid.origin_x));
  const long u1 = std::min<long>(grid.width - 1, hi(x, grid.origin_x));
  const long v0 = std::max(0L, lo(y, grid.origin_y));
  const long v1 = std::min<long>(grid.height - 1, hi(y, grid.origin_y));

  const int k = grid.oversample;
  const double sub = grid.pixel_size / k;
  const double norm = photons / (static_cast<double>(k) * k);
  for (long v = v0; v <= v1; ++v) {
    for (long u = u0; u <= u1; ++u) {
      double acc = 0.0;
      if (k == 1) {
        acc = eval_psf(model, grid.center_x(static_cast<int>(u)) - x, grid.center_y(static_cast<int>(v)) - y, -z);
      } else {
        const double left = grid.origin_x + u * grid.pixel_size;
        const double top = grid.origin_y + v * grid.pixel_size;
        for (int sv = 0; sv < k; ++sv)
          for (int su = 0; su < k; ++su)
            acc += eval_psf(model, left + (su + 0.5) * sub - x, top + (sv + 0.5) * sub - y, -z);
      }
      target(static_cast<int>(u), static_cast<int>(v)) += norm * acc;
    }
  }
}

ImageD render_patch(const PsfModel& model, double x, double y, double z, double photons, const PixelGrid& grid)
{
  ImageD patch(grid.width, grid.height, 0.0);
  add_emitter(patch, grid, model, x, y, z, photons);
  return patch;
}

void validate(const PsfModel& model)
{
  validate(model.parametric);
  if (model.pixmap)
    model.pixmap->validate();
}

} // namespace smlm
