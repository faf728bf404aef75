#ifndef SWIFTREG_CORRELATE_HPP
#define SWIFTREG_CORRELATE_HPP

// Apodized, spectrally whitened FFT correlation with Z-score peak detection.
//
// Offset convention: a positive (dx, dy) means the content of the second
// image (target) sits at +x/+y relative to the first (model), i.e.
// target(p + d) ~ model(p).  The correlation map is
//     map(s) = sum_p a'(p) b'(p + s)
// (cyclic, a' and b' apodized) evaluated through the FFT as
// IFFT(whiten(conj(A) * B)), then quadrant-swapped so s = 0 sits at index
// (width/2, height/2).  Whitening the cross-power product with exponent w is
// equivalent to whitening each input spectrum with w/2 before multiplying.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "error.hpp"
#include "fft.hpp"
#include "image.hpp"
#include "parallel.hpp"
#include "stats.hpp"

namespace swiftreg {

/// Amplitude exponent for the cross-power spectrum: 0 keeps the original
/// amplitudes (plain correlation), 1 flattens them (phase-only correlation).
struct WhiteningParams {
  double w = 0.7;
  double eps_frac = 1e-6;  ///< coefficients below eps_frac * max|c| are zeroed
};

/// Correlation surface with zero offset at (width/2, height/2).
struct CorrelationMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  /// Value at signed offset (dx, dy), wrapping cyclically.
  double at_offset(int dx, int dy) const {
    const int x = ((dx + width / 2) % width + width) % width;
    const int y = ((dy + height / 2) % height + height) % height;
    return at(x, y);
  }
};

struct MatchResult {
  double dx = 0.0;
  double dy = 0.0;
  double snr = 0.0;         ///< peak height in background standard deviations
  double peak_value = 0.0;
  double whitening_used = 0.0;
  bool valid = false;
};

/// One lattice cell of a grid match.  (cx, cy) is the patch center in image
/// coordinates; (dx, dy) where that content was found in the target.
struct MatchPoint {
  double cx = 0.0;
  double cy = 0.0;
  double dx = 0.0;
  double dy = 0.0;
  double snr = 0.0;
  bool valid = false;
};

inline constexpr double kDefaultTaperFrac = 0.125;
inline constexpr int kDefaultExclusionRadius = 8;

namespace detail {

/// Raised-cosine taper along one axis of length n with border bands of
/// taper_frac * n; exactly 1 outside the bands.
inline std::vector<double> taper_window(int n, double taper_frac) {
  std::vector<double> w(static_cast<std::size_t>(n), 1.0);
  const double band = taper_frac * n;
  if (band <= 0.0) return w;
  for (int i = 0; i < n; ++i) {
    const double d = std::min(i, n - 1 - i);
    if (d < band) w[static_cast<std::size_t>(i)] = 0.5 * (1.0 - std::cos(std::numbers::pi * d / band));
  }
  return w;
}

/// Mean-subtracted, optionally tapered copy of the pixels (taper_frac 0 = no taper).
inline std::vector<double> apodized_pixels(const Image& patch, double taper_frac) {
  const double mean = mean_std(patch.pixels()).mean;
  const auto wx = taper_window(patch.width(), taper_frac);
  const auto wy = taper_window(patch.height(), taper_frac);
  std::vector<double> out(patch.size());
  for (int y = 0; y < patch.height(); ++y) {
    const auto row = patch.row(y);
    double* dst = &out[static_cast<std::size_t>(y) * patch.width()];
    for (int x = 0; x < patch.width(); ++x) {
      dst[x] = (row[static_cast<std::size_t>(x)] - mean) * (wx[static_cast<std::size_t>(x)] * wy[static_cast<std::size_t>(y)]);
    }
  }
  return out;
}

inline CorrelationMap centered_map(const std::vector<double>& raw, int w, int h) {
  CorrelationMap map{w, h, std::vector<double>(raw.size())};
  const int cx = w / 2, cy = h / 2;
  for (int y = 0; y < h; ++y) {
    const int sy = (y - cy + h) % h;
    for (int x = 0; x < w; ++x) {
      const int sx = (x - cx + w) % w;
      map.at(x, y) = raw[static_cast<std::size_t>(sy) * w + sx];
    }
  }
  return map;
}

}  // namespace detail

/// Mean subtraction followed by a separable raised-cosine border taper.
inline Image apodize(const Image& patch, double taper_frac) {
  if (!(taper_frac > 0.0 && taper_frac <= 0.5)) {
    throw Error("apodize: taper_frac must be in (0, 0.5], got " + std::to_string(taper_frac));
  }
  Image out(patch.width(), patch.height(), detail::apodized_pixels(patch, taper_frac));
  out.meta() = patch.meta();
  return out;
}

/// Amplitude-only whitening: c -> c / |c|^w for retained coefficients, zero
/// below the relative floor, DC always zero.
inline Spectrum whiten_spectrum(Spectrum spec, const WhiteningParams& params) {
  double max_mag = 0.0;
  for (const auto& c : spec.coeffs) max_mag = std::max(max_mag, std::abs(c));
  const double floor = params.eps_frac * max_mag;
  for (auto& c : spec.coeffs) {
    const double mag = std::abs(c);
    if (mag == 0.0 || mag < floor) {
      c = 0.0;
    } else if (params.w != 0.0) {
      c *= std::pow(mag, -params.w);
    }
  }
  if (!spec.coeffs.empty()) spec.coeffs[0] = 0.0;
  return spec;
}

/// Whitened cyclic cross-correlation of two equally sized patches.
/// taper_frac in [0, 0.5]; 0 disables the border taper (mean removal only).
inline CorrelationMap correlate(const Image& a, const Image& b, const WhiteningParams& params,
                                double taper_frac = kDefaultTaperFrac) {
  if (!a.same_shape(b)) throw Error("correlate: dimension mismatch");
  if (a.width() < 16 || a.height() < 16) throw Error("correlate: patches must be at least 16x16");
  if (!(taper_frac >= 0.0 && taper_frac <= 0.5)) throw Error("correlate: taper_frac out of range");
  const int w = a.width(), h = a.height();
  Spectrum fa = forward_fft(detail::apodized_pixels(a, taper_frac), w, h);
  const Spectrum fb = forward_fft(detail::apodized_pixels(b, taper_frac), w, h);
  for (std::size_t i = 0; i < fa.coeffs.size(); ++i) fa.coeffs[i] = std::conj(fa.coeffs[i]) * fb.coeffs[i];
  return detail::centered_map(inverse_fft(whiten_spectrum(std::move(fa), params)), w, h);
}

/// Vertex of the parabola through (-1, l), (0, c), (1, r), clamped to +-0.5;
/// 0 when the samples are not concave.
inline double parabolic_offset(double l, double c, double r) {
  const double denom = l - 2.0 * c + r;
  if (!(denom < 0.0)) return 0.0;
  return std::clamp((l - r) / (2.0 * denom), -0.5, 0.5);
}

/// Global maximum, Z-score against the background outside a disc of
/// exclusion_radius around it, and separable parabolic subpixel refinement.
inline MatchResult find_peak(const CorrelationMap& map, int exclusion_radius = kDefaultExclusionRadius) {
  if (exclusion_radius < 1) throw Error("find_peak: exclusion_radius must be >= 1");
  if (map.width < 4 * exclusion_radius || map.height < 4 * exclusion_radius) {
    throw Error("find_peak: map smaller than 4 * exclusion_radius");
  }
  int px = 0, py = 0;
  double peak = -std::numeric_limits<double>::infinity();
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      if (map.at(x, y) > peak) {
        peak = map.at(x, y);
        px = x;
        py = y;
      }
    }
  }
  const double r2 = static_cast<double>(exclusion_radius) * exclusion_radius;
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const double ddx = x - px, ddy = y - py;
      if (ddx * ddx + ddy * ddy > r2) {
        sum += map.at(x, y);
        ++n;
      }
    }
  }
  const double mean = n ? sum / static_cast<double>(n) : 0.0;
  double ss = 0.0;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const double ddx = x - px, ddy = y - py;
      if (ddx * ddx + ddy * ddy > r2) {
        const double d = map.at(x, y) - mean;
        ss += d * d;
      }
    }
  }
  const double sd = n ? std::sqrt(ss / static_cast<double>(n)) : 0.0;

  MatchResult res;
  res.peak_value = peak;
  double fx = 0.0, fy = 0.0;
  if (px > 0 && px < map.width - 1 && py > 0 && py < map.height - 1) {
    fx = parabolic_offset(map.at(px - 1, py), peak, map.at(px + 1, py));
    fy = parabolic_offset(map.at(px, py - 1), peak, map.at(px, py + 1));
  }
  res.dx = px - map.width / 2 + fx;
  res.dy = py - map.height / 2 + fy;
  if (sd > 0.0 && std::isfinite(sd)) {
    res.snr = std::max(0.0, (peak - mean) / sd);
    res.valid = true;
  }
  return res;
}

/// Parameters shared by match_patch and grid_match.
struct MatchParams {
  WhiteningParams whitening{};
  double taper_frac = kDefaultTaperFrac;
  double max_offset = 64.0;
  double content_floor = 0.01;
  int exclusion_radius = kDefaultExclusionRadius;  ///< capped at min(dim)/4
};

/// Content-gated, offset-gated match of a target patch against a model patch.
inline MatchResult match_patch(const Image& model_patch, const Image& target_patch, const MatchParams& p) {
  if (!model_patch.same_shape(target_patch)) throw Error("match_patch: dimension mismatch");
  MatchResult res;
  res.whitening_used = p.whitening.w;
  if (mean_std(model_patch.pixels()).std < p.content_floor ||
      mean_std(target_patch.pixels()).std < p.content_floor) {
    return res;
  }
  const int radius =
      std::max(1, std::min(p.exclusion_radius, std::min(model_patch.width(), model_patch.height()) / 4));
  res = find_peak(correlate(model_patch, target_patch, p.whitening, p.taper_frac), radius);
  res.whitening_used = p.whitening.w;
  if (std::abs(res.dx) > p.max_offset || std::abs(res.dy) > p.max_offset) {
    res.valid = false;
  }
  if (!res.valid) res.snr = 0.0;
  return res;
}

/// Uniform lattice of square patches.  Cell centers are placed at
/// margin + (i + 0.5) * (dim - 2 * margin) / count along each axis.
struct GridSpec {
  int rows = 4;
  int cols = 4;
  int patch = 512;
  double margin = 0.0;
};

/// Top-left corners of the lattice patches, row-major; throws if a patch
/// does not fit inside a width x height image.
inline std::vector<std::pair<int, int>> grid_origins(int width, int height, const GridSpec& g) {
  if (g.rows < 1 || g.cols < 1) throw Error("grid must have at least one row and column");
  if (g.patch < 16) throw Error("patch size must be >= 16");
  std::vector<std::pair<int, int>> origins;
  origins.reserve(static_cast<std::size_t>(g.rows) * g.cols);
  const double span_x = width - 2.0 * g.margin, span_y = height - 2.0 * g.margin;
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      const double cx = g.margin + (c + 0.5) * span_x / g.cols;
      const double cy = g.margin + (r + 0.5) * span_y / g.rows;
      const int x0 = static_cast<int>(std::floor(cx - g.patch / 2.0 + 0.5));
      const int y0 = static_cast<int>(std::floor(cy - g.patch / 2.0 + 0.5));
      if (x0 < 0 || y0 < 0 || x0 + g.patch > width || y0 + g.patch > height) {
        throw Error("grid_match: " + std::to_string(g.patch) + " px patch does not fit a " +
                    std::to_string(g.rows) + "x" + std::to_string(g.cols) + " grid on " +
                    std::to_string(width) + "x" + std::to_string(height));
      }
      origins.emplace_back(x0, y0);
    }
  }
  return origins;
}

/// Matches every lattice patch of the target against the same window of the
/// model.  Invalid matches are kept with valid = false.
inline std::vector<MatchPoint> grid_match(const Image& model, const Image& target, const GridSpec& grid,
                                          const MatchParams& p, int workers = 1) {
  if (!model.same_shape(target)) throw Error("grid_match: model and target differ in size");
  const auto origins = grid_origins(model.width(), model.height(), grid);
  std::vector<MatchPoint> points(origins.size());
  parallel_for(static_cast<int>(origins.size()), workers, [&](int i) {
    const auto [x0, y0] = origins[static_cast<std::size_t>(i)];
    const MatchResult r = match_patch(model.crop(x0, y0, grid.patch, grid.patch),
                                      target.crop(x0, y0, grid.patch, grid.patch), p);
    MatchPoint& mp = points[static_cast<std::size_t>(i)];
    mp.cx = x0 + (grid.patch - 1) / 2.0;
    mp.cy = y0 + (grid.patch - 1) / 2.0;
    mp.dx = r.dx;
    mp.dy = r.dy;
    mp.snr = r.snr;
    mp.valid = r.valid;
  });
  return points;
}

}  // namespace swiftreg

#endif  // SWIFTREG_CORRELATE_HPP
