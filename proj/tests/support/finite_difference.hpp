#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace smlm::testing {

/// Five-point central difference of f along coordinate i.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x, std::size_t i, double h)
{
  const double x0 = x[i];
  auto at = [&](double offset) {
    x[i] = x0 + offset;
    return f(x);
  };
  return (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
}

struct GradientCheck
{
  double max_rel_error = 0.0;
  std::size_t worst = 0;
};

/// Largest |analytic - fd| / max(|analytic|, |fd|, floor) over all coordinates,
/// floor = rel_floor * max(1, |f(x)|) so that exactly-zero partials are judged
/// against the roundoff level of f. Steps scale with each coordinate.
inline GradientCheck check_gradient(const std::function<double(const std::vector<double>&)>& f,
                                    const std::vector<double>& x, const std::vector<double>& analytic,
                                    double rel_step = 1e-3, double rel_floor = 1e-7)
{
  GradientCheck out;
  const double floor = rel_floor * std::max(1.0, std::abs(f(x)));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = rel_step * std::max(1.0, std::abs(x[i]));
    const double fd = central_difference(f, x, i, h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(fd), floor});
    const double err = std::abs(analytic[i] - fd) / denom;
    if (err > out.max_rel_error) {
      out.max_rel_error = err;
      out.worst = i;
    }
  }
  return out;
}

} // namespace smlm::testing
