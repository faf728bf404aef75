#ifndef SWIFTREG_STATS_HPP
#define SWIFTREG_STATS_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace swiftreg {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
};

/// Mean and population standard deviation.  The mean gets one residual
/// correction pass, which makes it exact for constant input.
inline MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  const auto n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  double mean = sum / n;
  double corr = 0.0;
  for (double v : values) corr += v - mean;
  mean += corr / n;
  double ss = 0.0;
  for (double v : values) {
    const double d = v - mean;
    ss += d * d;
  }
  out.mean = mean;
  out.std = std::sqrt(ss / n);
  return out;
}

/// Median (mean of the two middle values for even counts); 0 for empty input.
inline double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  double m = values[mid];
  if (values.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(values.begin(), values.begin() + mid));
  }
  return m;
}

}  // namespace swiftreg

#endif  // SWIFTREG_STATS_HPP
