#ifndef SWIFTREG_MODEL_HPP
#define SWIFTREG_MODEL_HPP

// Z-averaged model templates built from aligned neighboring sections.

#include <algorithm>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"

namespace swiftreg {

struct ModelSpec {
  int span = 9;               ///< odd window width in sections
  bool exclude_self = true;
  std::set<int> exclusions;   ///< damaged or otherwise unusable stack indices
};

/// Stack indices that contribute to the model around `center`.
inline std::vector<int> model_contributors(int stack_size, int center, const ModelSpec& spec) {
  if (spec.span < 1 || spec.span % 2 == 0) throw Error("model span must be an odd integer >= 1");
  if (center < 0 || center >= stack_size) throw Error("model center outside stack");
  const int half = spec.span / 2;
  std::vector<int> out;
  for (int k = std::max(0, center - half); k <= std::min(stack_size - 1, center + half); ++k) {
    if (spec.exclude_self && k == center) continue;
    if (spec.exclusions.count(k)) continue;
    out.push_back(k);
  }
  return out;
}

/// Pixel-wise mean over the covered contributors.  Per pixel the values are
/// summed in sorted order, so the result does not depend on contributor order.
/// The output mask marks pixels with at least one contributor.
inline Image z_average(std::span<const Image* const> contributors) {
  if (contributors.empty()) throw Error("z_average: empty contributor set");
  const Image& first = *contributors.front();
  for (const Image* img : contributors) {
    if (!img->same_shape(first)) throw Error("z_average: contributors differ in size");
  }
  const int w = first.width(), h = first.height();
  Image out(w, h);
  std::vector<std::uint8_t> mask(out.size(), 0);
  std::vector<double> vals(contributors.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::size_t n = 0;
      for (const Image* img : contributors) {
        if (img->covered(x, y)) vals[n++] = img->at(x, y);
      }
      if (n == 0) continue;
      // insertion sort: n is a handful of sections
      for (std::size_t i = 1; i < n; ++i) {
        const double v = vals[i];
        std::size_t j = i;
        for (; j > 0 && vals[j - 1] > v; --j) vals[j] = vals[j - 1];
        vals[j] = v;
      }
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += vals[i];
      out.at(x, y) = s / static_cast<double>(n);
      mask[static_cast<std::size_t>(y) * w + x] = 1;
    }
  }
  out.set_mask(std::move(mask));
  return out;
}

/// Model for `center`: the mean of the aligned sections in its Z window,
/// minus exclusions and (by default) the section itself.
inline Image build_model(std::span<const Image> stack, int center, const ModelSpec& spec) {
  const auto idx = model_contributors(static_cast<int>(stack.size()), center, spec);
  if (idx.empty()) {
    throw Error("build_model: empty contributor set for section " + std::to_string(center));
  }
  std::vector<const Image*> imgs;
  imgs.reserve(idx.size());
  for (int k : idx) imgs.push_back(&stack[static_cast<std::size_t>(k)]);
  Image out = z_average(imgs);
  out.meta() = stack[static_cast<std::size_t>(center)].meta();
  return out;
}

}  // namespace swiftreg

#endif  // SWIFTREG_MODEL_HPP
