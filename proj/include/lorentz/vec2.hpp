#pragma once

#include <cmath>

namespace lorentz {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 &operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr Vec2 &operator-=(Vec2 o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  constexpr Vec2 &operator*=(double s) {
    x *= s;
    y *= s;
    return *this;
  }
};

constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
constexpr Vec2 operator-(Vec2 a) { return {-a.x, -a.y}; }
constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
constexpr Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
/// z-component of a x b; positive when b is counterclockwise of a.
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline Vec2 unit_from_angle(double angle) { return {std::cos(angle), std::sin(angle)}; }

/// Maps each coordinate into [0, 1).
inline Vec2 wrap_torus(Vec2 p) {
  p.x -= std::floor(p.x);
  p.y -= std::floor(p.y);
  if (p.x >= 1.0) p.x = 0.0;
  if (p.y >= 1.0) p.y = 0.0;
  return p;
}

/// Shortest representative of a lattice displacement, each coordinate in [-0.5, 0.5].
inline Vec2 minimum_image(Vec2 d) { return {d.x - std::round(d.x), d.y - std::round(d.y)}; }

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * M_PI;
  a = std::remainder(a, two_pi);
  if (a <= -M_PI) a += two_pi;
  return a;
}

}  // namespace lorentz
