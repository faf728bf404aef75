#ifndef SWIFTREG_IMAGE_IO_HPP
#define SWIFTREG_IMAGE_IO_HPP

// Bit-depth conversion with contrast adjustment, intensity normalization and
// integer-factor pyramids.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"
#include "stats.hpp"

namespace swiftreg {

/// Ordered per-step reduction factors, each 2, 3 or 5.
struct PyramidSpec {
  std::vector<int> factors;

  /// Cumulative reduction of level k (level 0 is 1).
  int scale_of(int level) const {
    int s = 1;
    for (int k = 0; k < level; ++k) s *= factors.at(static_cast<std::size_t>(k));
    return s;
  }
  int levels() const noexcept { return static_cast<int>(factors.size()) + 1; }

  /// Checks the factor set and that no level of a width x height image drops
  /// below min_dim pixels.  No factors means a single full-resolution level.
  void validate_for(int width, int height, int min_dim = 16) const {
    int w = width, h = height;
    if (w < min_dim || h < min_dim) throw ConfigError("image smaller than " + std::to_string(min_dim) + " pixels");
    for (int f : factors) {
      if (f != 2 && f != 3 && f != 5) {
        throw ConfigError("pyramid factor must be 2, 3 or 5, got " + std::to_string(f));
      }
      w /= f;
      h /= f;
      if (w < min_dim || h < min_dim) {
        throw ConfigError("pyramid reduces image below " + std::to_string(min_dim) + " pixels");
      }
    }
  }
};

namespace detail {

inline void check_factor(int factor) {
  if (factor != 2 && factor != 3 && factor != 5) {
    throw Error("downscale factor must be 2, 3 or 5, got " + std::to_string(factor));
  }
}

}  // namespace detail

/// Maps a 16-bit raster to [0,1] by percentile clipping.
///
/// Percentiles use nearest rank on the sorted values: the low clip is the
/// value of rank ceil(lo/100 * n) counted from the bottom, the high clip the
/// value of rank ceil((100-hi)/100 * n) counted from the top, so equal tail
/// percentages saturate equal pixel counts.  Values at or below the low clip
/// map to 0, at or above the high clip to 1, linear in between.
inline Image convert_depth(const Raster16& raw, double clip_lo, double clip_hi) {
  if (raw.width < 1 || raw.height < 1 || raw.values.empty()) {
    throw Error("convert_depth: empty raster");
  }
  if (raw.values.size() != static_cast<std::size_t>(raw.width) * raw.height) {
    throw Error("convert_depth: raster size mismatch");
  }
  if (!(clip_lo >= 0.0 && clip_lo < clip_hi && clip_hi <= 100.0)) {
    throw Error("convert_depth: need 0 <= clip_lo < clip_hi <= 100");
  }
  std::vector<std::uint16_t> sorted = raw.values;
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<long long>(sorted.size());
  const long long lo_rank = static_cast<long long>(std::ceil(clip_lo / 100.0 * n - 1e-9));
  const long long hi_rank = static_cast<long long>(std::ceil((100.0 - clip_hi) / 100.0 * n - 1e-9));
  const double lo = sorted[static_cast<std::size_t>(std::clamp(lo_rank - 1, 0LL, n - 1))];
  const double hi = sorted[static_cast<std::size_t>(std::clamp(n - hi_rank, 0LL, n - 1))];
  if (!(hi > lo)) {
    throw Error("convert_depth: degenerate percentile range");
  }
  std::vector<double> px(raw.values.size());
  const double inv = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = raw.values[i];
    px[i] = v <= lo ? 0.0 : (v >= hi ? 1.0 : (v - lo) * inv);
  }
  return Image(raw.width, raw.height, std::move(px));
}

/// Affine intensity map to the requested mean and standard deviation, then
/// clamped to [0,1].
inline Image normalize_contrast(const Image& img, double target_mean, double target_std) {
  if (!(target_std > 0.0)) throw Error("normalize_contrast: target_std must be > 0");
  const MeanStd ms = mean_std(img.pixels());
  if (!(ms.std > 0.0)) throw Error("normalize_contrast: zero-variance image");
  Image out = img;
  const double gain = target_std / ms.std;
  for (double& p : out.pixels()) {
    p = std::clamp((p - ms.mean) * gain + target_mean, 0.0, 1.0);
  }
  return out;
}

/// Box-mean reduction by an integer factor; incomplete trailing blocks are dropped.
inline Image downscale(const Image& img, int factor) {
  detail::check_factor(factor);
  const int w = img.width() / factor;
  const int h = img.height() / factor;
  if (w < 1 || h < 1) throw Error("downscale: output dimension would be 0");
  Image out(w, h);
  const double norm = 1.0 / (factor * factor);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int j = 0; j < factor; ++j) {
        const auto row = img.row(y * factor + j);
        for (int i = 0; i < factor; ++i) s += row[static_cast<std::size_t>(x * factor + i)];
      }
      out.at(x, y) = s * norm;
    }
  }
  out.meta() = img.meta();
  out.meta().level = img.meta().level + 1;
  out.meta().scale = img.meta().scale * factor;
  return out;
}

/// Level 0 is the input; level k+1 is level k reduced by factors[k].
inline std::vector<Image> build_pyramid(const Image& img, const PyramidSpec& spec) {
  if (spec.factors.empty()) throw Error("build_pyramid: empty spec");
  std::vector<Image> levels;
  levels.reserve(spec.factors.size() + 1);
  levels.push_back(img);
  levels.back().meta().level = 0;
  levels.back().meta().scale = 1;
  for (int f : spec.factors) levels.push_back(downscale(levels.back(), f));
  return levels;
}

}  // namespace swiftreg

#endif  // SWIFTREG_IMAGE_IO_HPP
