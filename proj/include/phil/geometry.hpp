#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace phil::env {

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // rad, counter-clockwise from +x
  double v = 0.0;        // m/s, never negative
  double length = 4.5;
  double width = 1.8;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline std::array<Point, 4> corners(const VehicleState& s) {
  const double c = std::cos(s.heading);
  const double sn = std::sin(s.heading);
  const double hl = 0.5 * s.length;
  const double hw = 0.5 * s.width;
  return {Point{s.x + c * hl - sn * hw, s.y + sn * hl + c * hw}, Point{s.x + c * hl + sn * hw, s.y + sn * hl - c * hw},
          Point{s.x - c * hl + sn * hw, s.y - sn * hl - c * hw}, Point{s.x - c * hl - sn * hw, s.y - sn * hl + c * hw}};
}

/// Separating-axis test for two oriented rectangles; `margin` inflates both
/// by that many metres on every side.
inline bool overlap(const VehicleState& a, const VehicleState& b, double margin = 0.0) {
  VehicleState ia = a, ib = b;
  ia.length += 2 * margin;
  ia.width += 2 * margin;
  ib.length += 2 * margin;
  ib.width += 2 * margin;
  // Cheap bounding-circle rejection first.
  const double ra = 0.5 * std::hypot(ia.length, ia.width);
  const double rb = 0.5 * std::hypot(ib.length, ib.width);
  if (std::hypot(a.x - b.x, a.y - b.y) > ra + rb) return false;
  const auto ca = corners(ia);
  const auto cb = corners(ib);
  const std::array<double, 4> angles{a.heading, a.heading + std::numbers::pi / 2, b.heading,
                                     b.heading + std::numbers::pi / 2};
  for (double ang : angles) {
    const double ax = std::cos(ang), ay = std::sin(ang);
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (const auto& p : ca) {
      const double d = p.x * ax + p.y * ay;
      amin = std::min(amin, d);
      amax = std::max(amax, d);
    }
    for (const auto& p : cb) {
      const double d = p.x * ax + p.y * ay;
      bmin = std::min(bmin, d);
      bmax = std::max(bmax, d);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

inline double wrap_angle(double a) {
  while (a > std::numbers::pi) a -= 2 * std::numbers::pi;
  while (a < -std::numbers::pi) a += 2 * std::numbers::pi;
  return a;
}

}  // namespace phil::env
