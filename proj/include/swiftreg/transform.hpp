#ifndef SWIFTREG_TRANSFORM_HPP
#define SWIFTREG_TRANSFORM_HPP

// Affine estimation from match points, locally affine triangle meshes,
// texture-mapped rendering and spline bridging of failed section spans.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "affine.hpp"
#include "correlate.hpp"
#include "error.hpp"
#include "image.hpp"
#include "parallel.hpp"

namespace swiftreg {

enum class Weighting { none, snr };

struct AffineFit {
  AffineTransform transform;
  std::vector<double> residuals;  ///< |A(src) - dst| per used point, in input order
  double rms = 0.0;
  int used = 0;
};

inline constexpr double kMaxConditionNumber = 1e8;

/// Weighted linear least squares affine mapping center -> center + offset
/// over the valid points.  Coordinates are centered and scaled before the
/// normal equations are formed, so the condition check reflects point
/// geometry rather than the image size.
inline AffineFit solve_affine(std::span<const MatchPoint> points, Weighting weighting = Weighting::none) {
  struct Obs {
    double x, y, u, v, w;
  };
  std::vector<Obs> obs;
  obs.reserve(points.size());
  for (const auto& p : points) {
    if (!p.valid) continue;
    const double w = weighting == Weighting::snr ? p.snr : 1.0;
    if (!(w > 0.0) || !std::isfinite(w)) continue;
    obs.push_back({p.cx, p.cy, p.cx + p.dx, p.cy + p.dy, w});
  }
  if (obs.size() < 3) {
    throw Error("solve_affine: need at least 3 valid points, have " + std::to_string(obs.size()));
  }
  double sw = 0.0, mx = 0.0, my = 0.0;
  for (const auto& o : obs) {
    sw += o.w;
    mx += o.w * o.x;
    my += o.w * o.y;
  }
  mx /= sw;
  my /= sw;
  double spread = 0.0;
  for (const auto& o : obs) spread += o.w * ((o.x - mx) * (o.x - mx) + (o.y - my) * (o.y - my));
  const double scale = std::sqrt(spread / sw);
  if (!(scale > 0.0)) throw Error("solve_affine: coincident points");

  Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
  Eigen::Vector3d rhs_u = Eigen::Vector3d::Zero(), rhs_v = Eigen::Vector3d::Zero();
  for (const auto& o : obs) {
    const Eigen::Vector3d r((o.x - mx) / scale, (o.y - my) / scale, 1.0);
    normal.noalias() += o.w * r * r.transpose();
    rhs_u += o.w * o.u * r;
    rhs_v += o.w * o.v * r;
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(normal, Eigen::EigenvaluesOnly);
  const double lmin = eig.eigenvalues().minCoeff(), lmax = eig.eigenvalues().maxCoeff();
  if (!(lmin > 0.0) || lmax / lmin > kMaxConditionNumber) {
    throw Error("solve_affine: collinear or ill-conditioned point configuration");
  }
  const auto ldlt = normal.ldlt();
  const Eigen::Vector3d pu = ldlt.solve(rhs_u);
  const Eigen::Vector3d pv = ldlt.solve(rhs_v);

  AffineFit fit;
  auto& t = fit.transform;
  t.a11 = pu[0] / scale;
  t.a12 = pu[1] / scale;
  t.tx = pu[2] - t.a11 * mx - t.a12 * my;
  t.a21 = pv[0] / scale;
  t.a22 = pv[1] / scale;
  t.ty = pv[2] - t.a21 * mx - t.a22 * my;
  fit.used = static_cast<int>(obs.size());
  double ss = 0.0;
  fit.residuals.reserve(obs.size());
  for (const auto& o : obs) {
    const Point2 q = t(o.x, o.y);
    const double e = std::hypot(q.x - o.u, q.y - o.v);
    fit.residuals.push_back(e);
    ss += e * e;
  }
  fit.rms = std::sqrt(ss / static_cast<double>(obs.size()));
  return fit;
}

struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double width = 0.0;
  double height = 0.0;

  /// Rectangle spanning the pixel centers of a width x height image.
  static Rect of_image(int width, int height) { return {0.0, 0.0, width - 1.0, height - 1.0}; }
};

/// Regular grid triangulation with one affine per triangle.
///
/// Cell (r, c) is split along its upper-left to lower-right diagonal into
/// triangle 2*(r*cols + c) (upper-right half: TL, TR, BR) and
/// 2*(r*cols + c) + 1 (lower-left half: TL, BR, BL).  The grid lives in the
/// output frame; each affine maps source coordinates to output coordinates.
class TriangleMesh {
 public:
  TriangleMesh() = default;
  TriangleMesh(Rect rect, int rows, int cols, std::vector<AffineTransform> affines)
      : rect_(rect), rows_(rows), cols_(cols), affines_(std::move(affines)) {
    if (rows < 1 || cols < 1) throw Error("mesh needs at least one row and column");
    if (!(rect.width > 0.0 && rect.height > 0.0)) throw Error("mesh rectangle is empty");
    if (affines_.size() != static_cast<std::size_t>(2 * rows * cols)) throw Error("mesh affine count mismatch");
    fallback_.assign(affines_.size(), false);
  }

  static TriangleMesh uniform(Rect rect, int rows, int cols, const AffineTransform& a) {
    return TriangleMesh(rect, rows, cols, std::vector<AffineTransform>(static_cast<std::size_t>(2 * rows * cols), a));
  }

  const Rect& rect() const noexcept { return rect_; }
  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  int triangle_count() const noexcept { return static_cast<int>(affines_.size()); }
  const std::vector<AffineTransform>& affines() const noexcept { return affines_; }
  std::vector<AffineTransform>& affines() noexcept { return affines_; }
  /// Triangles whose affine came from the whole-section fallback.
  const std::vector<bool>& fallback() const noexcept { return fallback_; }
  std::vector<bool>& fallback() noexcept { return fallback_; }

  Point2 control_point(int r, int c) const {
    return {rect_.x0 + rect_.width * c / cols_, rect_.y0 + rect_.height * r / rows_};
  }

  /// Vertex (row, col) indices of triangle t.
  std::array<std::pair<int, int>, 3> vertices(int t) const {
    const int cell = t / 2, r = cell / cols_, c = cell % cols_;
    if (t % 2 == 0) return {{{r, c}, {r, c + 1}, {r + 1, c + 1}}};
    return {{{r, c}, {r + 1, c + 1}, {r + 1, c}}};
  }

  /// Triangle containing (x, y) by sign test, edge ties to the lower index;
  /// nullopt outside the rectangle.
  std::optional<int> locate(double x, double y) const {
    const double gx = (x - rect_.x0) / rect_.width * cols_;
    const double gy = (y - rect_.y0) / rect_.height * rows_;
    if (!(gx >= 0.0 && gx <= cols_ && gy >= 0.0 && gy <= rows_)) return std::nullopt;
    const int c = std::min(static_cast<int>(gx), cols_ - 1);
    const int r = std::min(static_cast<int>(gy), rows_ - 1);
    std::optional<int> best;
    for (int rr = r - (gy == r && r > 0 ? 1 : 0); rr <= r; ++rr) {
      for (int cc = c - (gx == c && c > 0 ? 1 : 0); cc <= c; ++cc) {
        const double u = gx - cc, v = gy - rr;
        if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) continue;
        const int base = 2 * (rr * cols_ + cc);
        const int t = u >= v ? base : base + 1;
        if (!best || t < *best) best = t;
      }
    }
    return best;
  }

  /// The six triangles forming the support band of t: the (up to) three
  /// sharing an edge with it, plus the (up to) three obtained by reflecting
  /// t through each of its vertices.  The relation is symmetric.
  std::vector<int> neighbors(int t) const {
    std::vector<int> out;
    const auto vt = vertices(t);
    auto contains = [](const std::array<std::pair<int, int>, 3>& vs, std::pair<int, int> p) {
      return std::find(vs.begin(), vs.end(), p) != vs.end();
    };
    const int cell = t / 2, r0 = cell / cols_, c0 = cell % cols_;
    for (int r = std::max(0, r0 - 1); r <= std::min(rows_ - 1, r0 + 1); ++r) {
      for (int c = std::max(0, c0 - 1); c <= std::min(cols_ - 1, c0 + 1); ++c) {
        for (int k = 0; k < 2; ++k) {
          const int u = 2 * (r * cols_ + c) + k;
          if (u == t) continue;
          const auto vu = vertices(u);
          int shared = 0;
          for (const auto& p : vu) shared += contains(vt, p) ? 1 : 0;
          bool take = shared == 2;
          if (shared == 1) {
            // reflection of t through the shared vertex
            std::pair<int, int> pivot{};
            for (const auto& p : vu) {
              if (contains(vt, p)) pivot = p;
            }
            take = true;
            for (const auto& p : vt) {
              if (!contains(vu, {2 * pivot.first - p.first, 2 * pivot.second - p.second})) take = false;
            }
          }
          if (take) out.push_back(u);
        }
      }
    }
    return out;
  }

  /// Every affine non-singular with positive determinant (no fold-overs).
  bool orientation_preserving() const {
    return std::all_of(affines_.begin(), affines_.end(), [](const AffineTransform& a) { return a.det() > kMinAbsDet; });
  }

  /// Same grid with every triangle's affine inverted.
  TriangleMesh inverted() const {
    TriangleMesh m = *this;
    for (auto& a : m.affines_) a = invert(a);
    return m;
  }

  /// Same grid, affine a_t o inner for every triangle.
  TriangleMesh composed_with(const AffineTransform& inner) const {
    TriangleMesh m = *this;
    for (auto& a : m.affines_) a = compose(a, inner);
    return m;
  }

 private:
  Rect rect_;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<AffineTransform> affines_;
  std::vector<bool> fallback_;
};

struct MeshBuild {
  TriangleMesh mesh;
  AffineFit global;     ///< whole-section fit over all valid points
  int fallback_count = 0;
};

/// Per-triangle least squares over each triangle's support band (its own
/// points plus those in its six neighbors); under-supported triangles inherit
/// the whole-section fit.
inline MeshBuild build_mesh(Rect rect, int rows, int cols, std::span<const MatchPoint> points,
                            Weighting weighting = Weighting::none) {
  MeshBuild out{TriangleMesh::uniform(rect, rows, cols, AffineTransform::identity()), solve_affine(points, weighting), 0};
  TriangleMesh& mesh = out.mesh;
  std::vector<std::vector<MatchPoint>> by_triangle(static_cast<std::size_t>(mesh.triangle_count()));
  for (const auto& p : points) {
    if (!p.valid) continue;
    if (auto t = mesh.locate(p.cx, p.cy)) by_triangle[static_cast<std::size_t>(*t)].push_back(p);
  }
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    std::vector<MatchPoint> support = by_triangle[static_cast<std::size_t>(t)];
    for (int u : mesh.neighbors(t)) {
      const auto& pts = by_triangle[static_cast<std::size_t>(u)];
      support.insert(support.end(), pts.begin(), pts.end());
    }
    auto& slot = mesh.affines()[static_cast<std::size_t>(t)];
    try {
      if (support.size() < 3) throw Error("under-supported triangle");
      slot = solve_affine(support, weighting).transform;
    } catch (const Error&) {
      slot = out.global.transform;
      mesh.fallback()[static_cast<std::size_t>(t)] = true;
      ++out.fallback_count;
    }
  }
  return out;
}

using Warp = std::variant<AffineTransform, TriangleMesh>;

namespace detail {

/// Bilinear sample at (sx, sy); false if the location is outside the pixel
/// centers.  Exact at integer locations.
inline bool sample_bilinear(const Image& src, double sx, double sy, double& value) {
  const int w = src.width(), h = src.height();
  if (!(sx >= 0.0 && sy >= 0.0 && sx <= w - 1 && sy <= h - 1)) return false;
  const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
  const double fx = sx - x0, fy = sy - y0;
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double top = fx == 0.0 ? src.at(x0, y0) : (1.0 - fx) * src.at(x0, y0) + fx * src.at(x1, y0);
  if (fy == 0.0) {
    value = top;
    return true;
  }
  const double bot = fx == 0.0 ? src.at(x0, y1) : (1.0 - fx) * src.at(x0, y1) + fx * src.at(x1, y1);
  value = (1.0 - fy) * top + fy * bot;
  return true;
}

}  // namespace detail

/// Texture-maps src through the warp into an out_width x out_height frame.
/// Each output pixel pulls from the inverse-mapped source location; pixels
/// that land outside the source are 0 with their coverage bit cleared.
inline Image render(const Image& src, const Warp& warp, int out_width, int out_height, int workers = 1) {
  Image out(out_width, out_height);
  std::vector<std::uint8_t> mask(out.size(), 0);
  std::vector<AffineTransform> inverses;
  const TriangleMesh* mesh = std::get_if<TriangleMesh>(&warp);
  if (mesh) {
    if (!mesh->orientation_preserving()) throw Error("render: mesh has degenerate or folded triangles");
    for (const auto& a : mesh->affines()) inverses.push_back(invert(a));
  } else {
    inverses.push_back(invert(std::get<AffineTransform>(warp)));
  }
  parallel_for(out_height, workers, [&](int y) {
    for (int x = 0; x < out_width; ++x) {
      const AffineTransform* inv = &inverses[0];
      if (mesh) {
        const auto t = mesh->locate(x, y);
        if (!t) continue;
        inv = &inverses[static_cast<std::size_t>(*t)];
      }
      const Point2 s = inv->apply({static_cast<double>(x), static_cast<double>(y)});
      double v = 0.0;
      if (detail::sample_bilinear(src, s.x, s.y, v) && (!src.has_mask() || src.covered(static_cast<int>(s.x), static_cast<int>(s.y)))) {
        out.at(x, y) = v;
        mask[static_cast<std::size_t>(y) * out_width + x] = 1;
      }
    }
  });
  out.set_mask(std::move(mask));
  out.meta() = src.meta();
  return out;
}

/// Replaces chain[first..last] by per-parameter cubic interpolation between
/// anchors first-1 and last+1.  The cubic is the Bezier whose end tangents are
/// the finite-difference derivatives of the four anchors first-2, first-1,
/// last+1, last+2, i.e. the cubic through all four, evaluated here in
/// Lagrange form.  Falls back to linear interpolation when only the inner
/// anchors are usable.  `usable` marks sections that may serve as anchors
/// (empty = all outside the range).
inline std::vector<AffineTransform> bridge_gap(std::vector<AffineTransform> chain, int first, int last,
                                               const std::vector<bool>& usable = {}) {
  const int n = static_cast<int>(chain.size());
  if (first < 0 || last >= n || first > last) throw Error("bridge_gap: invalid range");
  auto ok = [&](int k) {
    return k >= 0 && k < n && (k < first || k > last) && (usable.empty() || usable[static_cast<std::size_t>(k)]);
  };
  if (!ok(first - 1) || !ok(last + 1)) {
    throw Error("bridge_gap: no valid anchor on both sides of sections " + std::to_string(first) + ".." +
                std::to_string(last));
  }
  std::vector<int> anchors;
  if (ok(first - 2) && ok(last + 2)) {
    anchors = {first - 2, first - 1, last + 1, last + 2};
  } else {
    anchors = {first - 1, last + 1};
  }
  std::vector<std::array<double, 6>> values;
  for (int a : anchors) values.push_back(chain[static_cast<std::size_t>(a)].params());
  for (int k = first; k <= last; ++k) {
    std::array<double, 6> p{};
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      double l = 1.0;
      for (std::size_t j = 0; j < anchors.size(); ++j) {
        if (j != i) l *= static_cast<double>(k - anchors[j]) / (anchors[i] - anchors[j]);
      }
      for (int q = 0; q < 6; ++q) p[q] += l * values[i][q];
    }
    chain[static_cast<std::size_t>(k)] = AffineTransform::from_params(p);
  }
  return chain;
}

}  // namespace swiftreg

#endif  // SWIFTREG_TRANSFORM_HPP
