#ifndef SWIFTREG_IMAGE_HPP
#define SWIFTREG_IMAGE_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace swiftreg {

struct ImageMeta {
  int section_index = 0;
  int level = 0;     ///< pyramid level, 0 = full resolution
  int scale = 1;     ///< cumulative reduction factor relative to level 0
};

/// 2D grayscale raster, row-major, real-valued pixels (nominally in [0,1]).
///
/// Pixel (x, y) has its center at integer coordinates (x, y); all geometric
/// operations in the library use that convention.  An optional coverage mask
/// marks which pixels carry data (rendered and averaged images); an empty mask
/// means every pixel is covered.
class Image {
 public:
  Image() = default;

  Image(int width, int height, double fill = 0.0) : width_(width), height_(height) {
    if (width < 1 || height < 1) {
      throw Error("image dimensions must be >= 1, got " + std::to_string(width) + "x" +
                  std::to_string(height));
    }
    pixels_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  Image(int width, int height, std::vector<double> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width < 1 || height < 1) {
      throw Error("image dimensions must be >= 1");
    }
    if (pixels_.size() != static_cast<std::size_t>(width) * height) {
      throw Error("pixel count does not match image dimensions");
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  double& at(int x, int y) { return pixels_[index(x, y)]; }
  double at(int x, int y) const { return pixels_[index(x, y)]; }

  std::span<double> pixels() noexcept { return pixels_; }
  std::span<const double> pixels() const noexcept { return pixels_; }
  std::span<const double> row(int y) const {
    return std::span<const double>(pixels_).subspan(index(0, y), width_);
  }

  ImageMeta& meta() noexcept { return meta_; }
  const ImageMeta& meta() const noexcept { return meta_; }

  bool has_mask() const noexcept { return !coverage_.empty(); }
  bool covered(int x, int y) const { return coverage_.empty() || coverage_[index(x, y)] != 0; }
  std::span<const std::uint8_t> mask() const noexcept { return coverage_; }
  void set_mask(std::vector<std::uint8_t> mask) {
    if (!mask.empty() && mask.size() != pixels_.size()) {
      throw Error("coverage mask size does not match image");
    }
    coverage_ = std::move(mask);
  }
  void clear_mask() { coverage_.clear(); }

  bool all_finite() const {
    for (double v : pixels_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool same_shape(const Image& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  /// Copy of the w x h block starting at (x0, y0); the block must lie inside.
  Image crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || x0 + w > width_ || y0 + h > height_) {
      throw Error("crop window outside image");
    }
    Image out(w, h);
    for (int y = 0; y < h; ++y) {
      const double* src = &pixels_[index(x0, y0 + y)];
      std::copy(src, src + w, &out.pixels_[out.index(0, y)]);
    }
    if (has_mask()) {
      std::vector<std::uint8_t> m(static_cast<std::size_t>(w) * h);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) m[static_cast<std::size_t>(y) * w + x] = coverage_[index(x0 + x, y0 + y)];
      }
      out.coverage_ = std::move(m);
    }
    out.meta_ = meta_;
    return out;
  }

  friend bool operator==(const Image& a, const Image& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.pixels_ == b.pixels_ &&
           a.coverage_ == b.coverage_;
  }

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> pixels_;
  std::vector<std::uint8_t> coverage_;
  ImageMeta meta_;
};

/// Raw 16-bit raster as read from an acquisition file.
struct Raster16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> values;
};

}  // namespace swiftreg

#endif  // SWIFTREG_IMAGE_HPP
