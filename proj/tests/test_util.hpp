#ifndef SWIFTREG_TESTS_TEST_UTIL_HPP
#define SWIFTREG_TESTS_TEST_UTIL_HPP

#include <swiftreg/image.hpp>
#include <swiftreg/synth.hpp>

#include <random>
#include <vector>

namespace swiftreg::testing {

inline Image random_image(int w, int h, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(w, h);
  for (double& p : img.pixels()) p = u(rng);
  return img;
}

/// Band-limited texture on an n x n periodic field.
class TextureField {
 public:
  TextureField(int n, std::uint64_t seed, double f_lo = 0.02, double f_hi = 0.2) : n_(n) {
    std::mt19937_64 rng(seed);
    field_ = detail::band_field(rng, n, f_lo, f_hi);
  }

  /// w x h window whose content is the field shifted by (sx, sy):
  /// out(x, y) = field(x0 + x - sx, y0 + y - sy), wrapping.
  Image window(int x0, int y0, int w, int h, int sx = 0, int sy = 0, double gain = 0.1, double offset = 0.5) const {
    Image img(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int fx = ((x0 + x - sx) % n_ + n_) % n_;
        const int fy = ((y0 + y - sy) % n_ + n_) % n_;
        img.at(x, y) = offset + gain * field_[static_cast<std::size_t>(fy) * n_ + fx];
      }
    }
    return img;
  }

 private:
  int n_;
  std::vector<double> field_;
};

/// Cyclic shift: out(x, y) = in(x - sx, y - sy).
inline Image cyclic_shift(const Image& in, int sx, int sy) {
  Image out(in.width(), in.height());
  const int w = in.width(), h = in.height();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out.at(x, y) = in.at(((x - sx) % w + w) % w, ((y - sy) % h + h) % h);
  }
  return out;
}

}  // namespace swiftreg::testing

#endif  // SWIFTREG_TESTS_TEST_UTIL_HPP
