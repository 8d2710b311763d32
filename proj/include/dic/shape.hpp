#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

#include "dic/params.hpp"

namespace dic {

inline constexpr int param_count(ShapeKind k) {
  switch (k) {
    case ShapeKind::RIGID: return 2;
    case ShapeKind::AFFINE: return 6;
    case ShapeKind::QUADRATIC: return 12;
  }
  return 0;
}

/// Shape-function parameters p0..p11. Entries beyond param_count(kind) are zero.
///   xi_x = p0 + (1 + p2) x + p3 y + p6 x^2 + p7 x y + p8 y^2
///   xi_y = p1 + p4 x + (1 + p5) y + p9 x^2 + p10 x y + p11 y^2
struct ShapeParams {
  ShapeKind kind = ShapeKind::AFFINE;
  std::array<double, 12> p{};

  ShapeParams() = default;
  explicit ShapeParams(ShapeKind k) : kind(k) {}
  static ShapeParams translation(ShapeKind k, double u, double v) {
    ShapeParams s(k);
    s.p[0] = u;
    s.p[1] = v;
    return s;
  }

  int size() const noexcept { return param_count(kind); }
  double u() const noexcept { return p[0]; }
  double v() const noexcept { return p[1]; }

  bool finite() const {
    for (int i = 0; i < size(); ++i)
      if (!std::isfinite(p[i])) return false;
    return true;
  }

  /// Same deformation re-expressed about a center shifted by (dx, dy).
  ShapeParams recentered(double dx, double dy) const {
    ShapeParams s = *this;
    const auto& q = p;
    s.p[0] = q[0] + q[2] * dx + q[3] * dy + q[6] * dx * dx + q[7] * dx * dy + q[8] * dy * dy;
    s.p[1] = q[1] + q[4] * dx + q[5] * dy + q[9] * dx * dx + q[10] * dx * dy + q[11] * dy * dy;
    s.p[2] = q[2] + 2 * q[6] * dx + q[7] * dy;
    s.p[3] = q[3] + q[7] * dx + 2 * q[8] * dy;
    s.p[4] = q[4] + 2 * q[9] * dx + q[10] * dy;
    s.p[5] = q[5] + q[10] * dx + 2 * q[11] * dy;
    return s;
  }

  /// Converts to another kind, dropping or zero-filling higher-order terms.
  ShapeParams as(ShapeKind k) const {
    ShapeParams s(k);
    for (int i = 0; i < std::min(size(), s.size()); ++i) s.p[i] = p[i];
    return s;
  }
};

struct Warped {
  double x = 0.0;
  double y = 0.0;
};

/// Maps local subset coordinates into the deformed configuration.
inline Warped warp(const ShapeParams& s, double x, double y) noexcept {
  const auto& p = s.p;
  Warped w{p[0] + x, p[1] + y};
  if (s.kind == ShapeKind::RIGID) return w;
  w.x += p[2] * x + p[3] * y;
  w.y += p[4] * x + p[5] * y;
  if (s.kind == ShapeKind::AFFINE) return w;
  const double xx = x * x, xy = x * y, yy = y * y;
  w.x += p[6] * xx + p[7] * xy + p[8] * yy;
  w.y += p[9] * xx + p[10] * xy + p[11] * yy;
  return w;
}

/// d(xi_x)/dp and d(xi_y)/dp for local coordinate (x, y); only the first
/// param_count(kind) entries are written.
inline void warp_jacobian(ShapeKind kind, double x, double y, double* dxi_x, double* dxi_y) noexcept {
  dxi_x[0] = 1;
  dxi_y[0] = 0;
  dxi_x[1] = 0;
  dxi_y[1] = 1;
  if (kind == ShapeKind::RIGID) return;
  dxi_x[2] = x;
  dxi_y[2] = 0;
  dxi_x[3] = y;
  dxi_y[3] = 0;
  dxi_x[4] = 0;
  dxi_y[4] = x;
  dxi_x[5] = 0;
  dxi_y[5] = y;
  if (kind == ShapeKind::AFFINE) return;
  const double xx = x * x, xy = x * y, yy = y * y;
  dxi_x[6] = xx;
  dxi_x[7] = xy;
  dxi_x[8] = yy;
  dxi_x[9] = dxi_x[10] = dxi_x[11] = 0;
  dxi_y[6] = dxi_y[7] = dxi_y[8] = 0;
  dxi_y[9] = xx;
  dxi_y[10] = xy;
  dxi_y[11] = yy;
}

}  // namespace dic
