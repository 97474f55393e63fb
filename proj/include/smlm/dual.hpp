#pragma once

#include <array>
#include <cmath>

namespace smlm {

/// Forward-mode dual number carrying N partial derivatives.
template <int N>
struct Dual
{
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {} // NOLINT: implicit lift of constants

  static Dual variable(double value, int slot)
  {
    Dual r(value);
    r.d[slot] = 1.0;
    return r;
  }

  Dual& operator+=(const Dual& o)
  {
    v += o.v;
    for (int i = 0; i < N; ++i)
      d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o)
  {
    v -= o.v;
    for (int i = 0; i < N; ++i)
      d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o)
  {
    for (int i = 0; i < N; ++i)
      d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o)
  {
    const double inv = 1.0 / o.v;
    for (int i = 0; i < N; ++i)
      d[i] = (d[i] - v * inv * o.d[i]) * inv;
    v *= inv;
    return *this;
  }
};

template <int N> Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <int N> Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <int N> Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <int N> Dual<N> operator/(Dual<N> a, const Dual<N>& b) { return a /= b; }
template <int N> Dual<N> operator+(Dual<N> a, double b) { a.v += b; return a; }
template <int N> Dual<N> operator+(double a, Dual<N> b) { b.v += a; return b; }
template <int N> Dual<N> operator-(Dual<N> a, double b) { a.v -= b; return a; }
template <int N> Dual<N> operator-(double a, const Dual<N>& b) { return Dual<N>(a) - b; }
template <int N>
Dual<N> operator*(Dual<N> a, double b)
{
  a.v *= b;
  for (auto& x : a.d)
    x *= b;
  return a;
}
template <int N> Dual<N> operator*(double a, const Dual<N>& b) { return b * a; }
template <int N> Dual<N> operator/(const Dual<N>& a, double b) { return a * (1.0 / b); }
template <int N> Dual<N> operator/(double a, const Dual<N>& b) { return Dual<N>(a) / b; }
template <int N> Dual<N> operator-(const Dual<N>& a) { return a * -1.0; }

template <int N>
Dual<N> chain(const Dual<N>& a, double value, double derivative)
{
  Dual<N> r(value);
  for (int i = 0; i < N; ++i)
    r.d[i] = derivative * a.d[i];
  return r;
}

template <int N>
Dual<N> exp(const Dual<N>& a)
{
  const double e = std::exp(a.v);
  return chain(a, e, e);
}
template <int N> Dual<N> log(const Dual<N>& a) { return chain(a, std::log(a.v), 1.0 / a.v); }
template <int N> Dual<N> sin(const Dual<N>& a) { return chain(a, std::sin(a.v), std::cos(a.v)); }
template <int N> Dual<N> cos(const Dual<N>& a) { return chain(a, std::cos(a.v), -std::sin(a.v)); }
template <int N>
Dual<N> sqrt(const Dual<N>& a)
{
  const double s = std::sqrt(a.v);
  return chain(a, s, 0.5 / s);
}
/// Derivative of |x| at 0 is taken as 0.
template <int N>
Dual<N> abs(const Dual<N>& a)
{
  return chain(a, std::abs(a.v), a.v > 0 ? 1.0 : (a.v < 0 ? -1.0 : 0.0));
}

inline double value_of(double x) { return x; }
template <int N> double value_of(const Dual<N>& x) { return x.v; }

} // namespace smlm
