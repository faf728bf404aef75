#ifndef SWIFTREG_FFT_HPP
#define SWIFTREG_FFT_HPP

// Thin RAII layer over FFTW3 real<->complex 2D transforms.
//
// Plans are created once per (width, height) with FFTW_ESTIMATE | FFTW_UNALIGNED
// and reused through the new-array execute interface, which is thread-safe.
// Plan creation itself is serialized by a process-wide mutex.

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include "error.hpp"

namespace swiftreg {

/// Half-complex spectrum of a real width x height field, FFTW r2c layout:
/// height rows of (width/2 + 1) coefficients.  Forward transforms are
/// unnormalized; the inverse divides by width*height.
struct Spectrum {
  int width = 0;
  int height = 0;
  std::vector<std::complex<double>> coeffs;

  int stride() const noexcept { return width / 2 + 1; }
  std::complex<double>& at(int kx, int ky) {
    return coeffs[static_cast<std::size_t>(ky) * stride() + kx];
  }
  const std::complex<double>& at(int kx, int ky) const {
    return coeffs[static_cast<std::size_t>(ky) * stride() + kx];
  }
};

namespace detail {

struct FftPlans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  FftPlanCache(const FftPlanCache&) = delete;
  FftPlanCache& operator=(const FftPlanCache&) = delete;

  FftPlans get(int width, int height) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find({width, height});
    if (it != plans_.end()) return it->second;
    const std::size_t n_real = static_cast<std::size_t>(width) * height;
    const std::size_t n_cplx = static_cast<std::size_t>(width / 2 + 1) * height;
    double* real = fftw_alloc_real(n_real);
    fftw_complex* cplx = fftw_alloc_complex(n_cplx);
    FftPlans p;
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    p.forward = fftw_plan_dft_r2c_2d(height, width, real, cplx, flags);
    p.inverse = fftw_plan_dft_c2r_2d(height, width, cplx, real, flags);
    fftw_free(real);
    fftw_free(cplx);
    if (p.forward == nullptr || p.inverse == nullptr) throw Error("FFTW plan creation failed");
    plans_.emplace(std::make_pair(width, height), p);
    return p;
  }

 private:
  FftPlanCache() = default;
  ~FftPlanCache() {
    for (auto& [key, p] : plans_) {
      fftw_destroy_plan(p.forward);
      fftw_destroy_plan(p.inverse);
    }
  }

  std::mutex mutex_;
  std::map<std::pair<int, int>, FftPlans> plans_;
};

}  // namespace detail

/// Forward 2D FFT of a row-major real field.
inline Spectrum forward_fft(std::span<const double> field, int width, int height) {
  if (field.size() != static_cast<std::size_t>(width) * height || width < 1 || height < 1) {
    throw Error("forward_fft: field size mismatch");
  }
  const auto plans = detail::FftPlanCache::instance().get(width, height);
  Spectrum s{width, height, {}};
  s.coeffs.resize(static_cast<std::size_t>(s.stride()) * height);
  fftw_execute_dft_r2c(plans.forward, const_cast<double*>(field.data()),
                       reinterpret_cast<fftw_complex*>(s.coeffs.data()));
  return s;
}

/// Normalized inverse FFT; consumes the spectrum (c2r overwrites its input).
inline std::vector<double> inverse_fft(Spectrum spectrum) {
  const int w = spectrum.width, h = spectrum.height;
  const auto plans = detail::FftPlanCache::instance().get(w, h);
  std::vector<double> out(static_cast<std::size_t>(w) * h);
  fftw_execute_dft_c2r(plans.inverse, reinterpret_cast<fftw_complex*>(spectrum.coeffs.data()), out.data());
  const double norm = 1.0 / static_cast<double>(out.size());
  for (double& v : out) v *= norm;
  return out;
}

}  // namespace swiftreg

#endif  // SWIFTREG_FFT_HPP
