#ifndef SWIFTREG_AFFINE_HPP
#define SWIFTREG_AFFINE_HPP

#include <array>
#include <cmath>
#include <string>

#include "error.hpp"

namespace swiftreg {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Planar affine map (x, y) -> (a11 x + a12 y + tx, a21 x + a22 y + ty).
struct AffineTransform {
  double a11 = 1.0, a12 = 0.0, a21 = 0.0, a22 = 1.0;
  double tx = 0.0, ty = 0.0;

  static AffineTransform identity() { return {}; }
  static AffineTransform translation(double x, double y) { return {1.0, 0.0, 0.0, 1.0, x, y}; }
  /// Rotation (radians) and uniform scale about `center`, then translation.
  static AffineTransform similarity(double angle, double scale, Point2 center, double x = 0.0, double y = 0.0) {
    const double c = scale * std::cos(angle), s = scale * std::sin(angle);
    return {c, -s, s, c, center.x - c * center.x + s * center.y + x, center.y - s * center.x - c * center.y + y};
  }

  Point2 apply(Point2 p) const { return {a11 * p.x + a12 * p.y + tx, a21 * p.x + a22 * p.y + ty}; }
  Point2 operator()(double x, double y) const { return apply({x, y}); }
  double det() const { return a11 * a22 - a12 * a21; }

  /// Parameters in field order {a11, a12, a21, a22, tx, ty}.
  std::array<double, 6> params() const { return {a11, a12, a21, a22, tx, ty}; }
  static AffineTransform from_params(const std::array<double, 6>& p) {
    return {p[0], p[1], p[2], p[3], p[4], p[5]};
  }

  friend bool operator==(const AffineTransform&, const AffineTransform&) = default;
};

inline constexpr double kMinAbsDet = 1e-6;

/// compose(a, b) applies b first, then a.
inline AffineTransform compose(const AffineTransform& a, const AffineTransform& b) {
  return {a.a11 * b.a11 + a.a12 * b.a21, a.a11 * b.a12 + a.a12 * b.a22,
          a.a21 * b.a11 + a.a22 * b.a21, a.a21 * b.a12 + a.a22 * b.a22,
          a.a11 * b.tx + a.a12 * b.ty + a.tx, a.a21 * b.tx + a.a22 * b.ty + a.ty};
}

inline AffineTransform invert(const AffineTransform& a) {
  const double d = a.det();
  if (!(std::abs(d) > kMinAbsDet)) throw Error("invert: singular affine transform (det " + std::to_string(d) + ")");
  const double i11 = a.a22 / d, i12 = -a.a12 / d, i21 = -a.a21 / d, i22 = a.a11 / d;
  return {i11, i12, i21, i22, -(i11 * a.tx + i12 * a.ty), -(i21 * a.tx + i22 * a.ty)};
}

/// Re-expresses a transform defined on a grid reduced by `factor` in the
/// coordinates of the finer grid.  With pixel centers at integer coordinates,
/// fine = factor * coarse + (factor - 1) / 2, so the linear part is unchanged
/// and t' = factor * t + (I - L) h with h = ((factor - 1) / 2, (factor - 1) / 2).
inline AffineTransform upscale(const AffineTransform& a, int factor) {
  const double h = (factor - 1) / 2.0;
  AffineTransform out = a;
  out.tx = factor * a.tx + (1.0 - a.a11) * h - a.a12 * h;
  out.ty = factor * a.ty - a.a21 * h + (1.0 - a.a22) * h;
  return out;
}

/// Inverse of upscale: the same map expressed on a grid reduced by `factor`.
inline AffineTransform downscale_transform(const AffineTransform& a, int factor) {
  const double h = (factor - 1) / 2.0;
  AffineTransform out = a;
  out.tx = (a.tx - (1.0 - a.a11) * h + a.a12 * h) / factor;
  out.ty = (a.ty + a.a21 * h - (1.0 - a.a22) * h) / factor;
  return out;
}

}  // namespace swiftreg

#endif  // SWIFTREG_AFFINE_HPP
