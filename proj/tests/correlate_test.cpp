#include <swiftreg/correlate.hpp>
#include <swiftreg/synth.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "test_util.hpp"

namespace swiftreg {
namespace {

using testing::cyclic_shift;
using testing::random_image;
using testing::TextureField;

struct Peak {
  int x, y;
  double value, second;
};

Peak top_two(const CorrelationMap& m) {
  Peak p{0, 0, -1e300, -1e300};
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const double v = m.at(x, y);
      if (v > p.value) {
        p.second = p.value;
        p.value = v;
        p.x = x;
        p.y = y;
      } else if (v > p.second) {
        p.second = v;
      }
    }
  }
  return p;
}

TEST(Apodize, ConstantBecomesZero) {
  const Image out = apodize(Image(32, 32, 0.8), 0.2);
  for (double p : out.pixels()) EXPECT_NEAR(p, 0.0, 1e-15);
}

TEST(Apodize, InteriorKeepsMeanSubtractedValues) {
  const Image img = random_image(100, 100, 17);
  const double mean = mean_std(img.pixels()).mean;
  const Image out = apodize(img, 0.1);
  for (int y = 10; y <= 89; ++y) {
    for (int x = 10; x <= 89; ++x) EXPECT_EQ(out.at(x, y), img.at(x, y) - mean);
  }
  for (int x = 0; x < 100; ++x) {
    EXPECT_EQ(out.at(x, 0), 0.0);
    EXPECT_EQ(out.at(0, x), 0.0);
    EXPECT_EQ(out.at(x, 99), 0.0);
  }
}

TEST(Apodize, RaisedCosineAtQuarterBand) {
  // band of 20 px on a 160 px axis; 5 px is a quarter into it
  const auto w = detail::taper_window(160, 0.125);
  const double expect = 0.5 * (1.0 - std::cos(std::numbers::pi * 0.25));
  EXPECT_NEAR(w[5], expect, 1e-15);
  EXPECT_NEAR(w[5], 0.1464, 1e-4);
  EXPECT_NEAR(w[154], expect, 1e-15);
}

TEST(Apodize, RejectsTaperOutOfRange) {
  EXPECT_THROW(apodize(Image(16, 16), 0.0), Error);
  EXPECT_THROW(apodize(Image(16, 16), 0.6), Error);
}

Spectrum spectrum_of(const Image& img) { return forward_fft(img.pixels(), img.width(), img.height()); }

TEST(WhitenSpectrum, ZeroExponentOnlyZeroesDcAndFloor) {
  Spectrum s{4, 1, {{5.0, 0.0}, {1e-9, 0.0}, {3.0, -1.0}}};
  const Spectrum out = whiten_spectrum(s, {0.0, 1e-6});
  EXPECT_EQ(out.coeffs[0], std::complex<double>(0.0, 0.0));
  EXPECT_EQ(out.coeffs[1], std::complex<double>(0.0, 0.0));
  EXPECT_EQ(out.coeffs[2], s.coeffs[2]);
}

TEST(WhitenSpectrum, UnitMagnitudeAtFullWhitening) {
  Spectrum s{4, 1, {{1.0, 0.0}, {3.0, 4.0}, {0.5, 0.0}}};
  const Spectrum out = whiten_spectrum(s, {1.0, 1e-6});
  EXPECT_NEAR(out.coeffs[1].real(), 0.6, 1e-15);
  EXPECT_NEAR(out.coeffs[1].imag(), 0.8, 1e-15);
}

TEST(WhitenSpectrum, PartialExponent) {
  Spectrum s{4, 1, {{1.0, 0.0}, {3.0, 4.0}, {0.5, 0.0}}};
  const Spectrum out = whiten_spectrum(s, {0.7, 1e-6});
  EXPECT_NEAR(std::abs(out.coeffs[1]), std::pow(5.0, 0.3), 1e-12);
  EXPECT_NEAR(std::abs(out.coeffs[1]), 1.6207, 1e-4);
  EXPECT_NEAR(std::arg(out.coeffs[1]), std::arg(s.coeffs[1]), 1e-12);
}

TEST(WhitenSpectrum, PreservesPhaseOfRetainedCoefficients) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Spectrum s = spectrum_of(random_image(32, 24, seed));
    for (double w : {0.0, 0.3, 0.7, 1.0}) {
      const Spectrum out = whiten_spectrum(s, {w, 1e-6});
      for (std::size_t i = 1; i < s.coeffs.size(); ++i) {
        if (std::abs(out.coeffs[i]) == 0.0) continue;
        const double d = std::remainder(std::arg(out.coeffs[i]) - std::arg(s.coeffs[i]), 2.0 * std::numbers::pi);
        ASSERT_NEAR(d, 0.0, 1e-9);
      }
    }
  }
}

TEST(Correlate, SelfMatchIsSingleDeltaAtFullWhitening) {
  const Image a = random_image(64, 64, 3);
  const CorrelationMap m = correlate(a, a, {1.0, 1e-6});
  const Peak p = top_two(m);
  EXPECT_EQ(p.x, 32);
  EXPECT_EQ(p.y, 32);
  EXPECT_LE(p.second, 0.05 * p.value);
}

TEST(Correlate, CyclicShiftMovesPeak) {
  const Image a = random_image(64, 48, 4);
  const Image b = cyclic_shift(a, 5, 3);
  const Peak p = top_two(correlate(a, b, {1.0, 1e-6}, 0.0));
  EXPECT_EQ(p.x - 32, 5);
  EXPECT_EQ(p.y - 24, 3);
}

TEST(Correlate, UnwhitenedMatchesBruteForceOfApodizedPatches) {
  const Image a = random_image(64, 64, 21), b = random_image(64, 64, 22);
  const CorrelationMap fast = correlate(a, b, {0.0, 1e-6}, 0.125);
  const CorrelationMap slow = brute_force_correlate(apodize(a, 0.125), apodize(b, 0.125));
  double max_abs = 0.0, max_err = 0.0;
  for (std::size_t i = 0; i < slow.values.size(); ++i) {
    max_abs = std::max(max_abs, std::abs(slow.values[i]));
    max_err = std::max(max_err, std::abs(fast.values[i] - slow.values[i]));
  }
  EXPECT_LE(max_err, 1e-4 * max_abs);
}

TEST(Correlate, Errors) {
  EXPECT_THROW(correlate(Image(32, 32), Image(32, 16), {}), Error);
  EXPECT_THROW(correlate(Image(8, 8), Image(8, 8), {}), Error);
}

TEST(Correlate, ArgumentSwapReflectsMap) {
  const TextureField f(128, 5);
  const Image a = f.window(0, 0, 48, 48), b = f.window(0, 0, 48, 48, 4, -2);
  for (double w : {0.0, 0.7, 1.0}) {
    const CorrelationMap ab = correlate(a, b, {w, 1e-6}), ba = correlate(b, a, {w, 1e-6});
    double scale = 0.0;
    for (double v : ab.values) scale = std::max(scale, std::abs(v));
    for (int dy = -23; dy <= 23; ++dy) {
      for (int dx = -23; dx <= 23; ++dx) ASSERT_NEAR(ab.at_offset(dx, dy), ba.at_offset(-dx, -dy), 1e-9 * scale);
    }
    const MatchResult r1 = find_peak(ab), r2 = find_peak(ba);
    EXPECT_NEAR(r1.dx, -r2.dx, 1e-9);
    EXPECT_NEAR(r1.dy, -r2.dy, 1e-9);
  }
}

TEST(Correlate, ShiftEquivarianceWithoutTaper) {
  const Image a = random_image(32, 32, 50);
  const Image b = cyclic_shift(random_image(32, 32, 50), 1, 2);
  const MatchResult base = find_peak(correlate(a, b, {0.7, 1e-6}, 0.0), 4);
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> s(-6, 6);
  for (int i = 0; i < 20; ++i) {
    const int sx = s(rng), sy = s(rng);
    const MatchResult r = find_peak(correlate(a, cyclic_shift(b, sx, sy), {0.7, 1e-6}, 0.0), 4);
    EXPECT_NEAR(r.dx, base.dx + sx, 1e-9);
    EXPECT_NEAR(r.dy, base.dy + sy, 1e-9);
  }
}

TEST(Correlate, PeakInvariantToPositiveIntensityMaps) {
  const TextureField f(128, 6);
  const Image a = f.window(0, 0, 64, 64), b = f.window(0, 0, 64, 64, -3, 5);
  for (double w : {0.0, 0.5, 1.0}) {
    const MatchResult ref = find_peak(correlate(a, b, {w, 1e-6}));
    Image b2 = b;
    for (double& p : b2.pixels()) p = 3.7 * p - 0.9;
    const MatchResult r = find_peak(correlate(a, b2, {w, 1e-6}));
    EXPECT_NEAR(r.dx, ref.dx, 1e-9);
    EXPECT_NEAR(r.dy, ref.dy, 1e-9);
  }
}

TEST(FindPeak, DegenerateBackgroundIsInvalid) {
  CorrelationMap m{32, 32, std::vector<double>(32 * 32, 0.0)};
  m.at(16, 16) = 1.0;
  const MatchResult r = find_peak(m, 4);
  EXPECT_EQ(r.dx, 0.0);
  EXPECT_EQ(r.dy, 0.0);
  EXPECT_FALSE(r.valid);
  EXPECT_EQ(r.snr, 0.0);
}

TEST(FindPeak, PlantedPeakZScore) {
  std::mt19937_64 rng(1234);
  std::normal_distribution<double> g(0.0, 1.0);
  CorrelationMap m{101, 101, std::vector<double>(101 * 101)};
  for (double& v : m.values) v = g(rng);
  const int px = 50 + 7, py = 50 - 4;
  m.at(px, py) = 20.0;
  const MatchResult r = find_peak(m, 8);
  EXPECT_NEAR(r.dx, 7.0, 0.5);
  EXPECT_NEAR(r.dy, -4.0, 0.5);
  // oracle: background statistics recomputed directly
  std::vector<double> bg;
  for (int y = 0; y < 101; ++y) {
    for (int x = 0; x < 101; ++x) {
      if ((x - px) * (x - px) + (y - py) * (y - py) > 64) bg.push_back(m.at(x, y));
    }
  }
  const MeanStd ms = mean_std(bg);
  EXPECT_NEAR(r.snr, (20.0 - ms.mean) / ms.std, 1e-9);
  EXPECT_NEAR(r.snr, 20.0, 2.0);
  EXPECT_TRUE(r.valid);
}

TEST(FindPeak, ParabolicVertexMatchesDenseSampling) {
  const double l = 0.5, c = 1.0, r = 0.9;
  // oracle: fit the interpolating parabola and scan it densely
  const double a = (l + r - 2.0 * c) / 2.0, b = (r - l) / 2.0;
  double best_x = 0.0, best_v = -1e300;
  for (int i = -100000; i <= 100000; ++i) {
    const double x = i * 1e-5;
    const double v = a * x * x + b * x + c;
    if (v > best_v) {
      best_v = v;
      best_x = x;
    }
  }
  EXPECT_NEAR(parabolic_offset(l, c, r), best_x, 1e-4);
  EXPECT_NEAR(parabolic_offset(l, c, r), 1.0 / 3.0, 1e-3);
  EXPECT_EQ(parabolic_offset(0.0, 1.0, 1.5), 0.5);  // clamped
  EXPECT_EQ(parabolic_offset(0.0, 1.0, 10.0), 0.0);  // convex
}

TEST(FindPeak, BorderPeakSkipsRefinement) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 0.1);
  CorrelationMap m{32, 32, std::vector<double>(32 * 32)};
  for (double& v : m.values) v = g(rng);
  m.at(0, 10) = 5.0;
  m.at(1, 10) = 4.0;
  const MatchResult r = find_peak(m, 4);
  EXPECT_EQ(r.dx, -16.0);
  EXPECT_EQ(r.dy, -6.0);
}

TEST(FindPeak, Preconditions) {
  CorrelationMap m{16, 16, std::vector<double>(256, 0.0)};
  EXPECT_THROW(find_peak(m, 0), Error);
  EXPECT_THROW(find_peak(m, 5), Error);
}

TEST(MatchPatch, ContentGate) {
  MatchParams p;
  const MatchResult r = match_patch(Image(32, 32, 0.4), Image(32, 32, 0.6), p);
  EXPECT_FALSE(r.valid);
  EXPECT_EQ(r.snr, 0.0);
}

TEST(MatchPatch, RecoversKnownShift) {
  const TextureField f(256, 77);
  const Image model = f.window(40, 40, 64, 64);
  const Image target = f.window(40, 40, 64, 64, 2, -6);
  MatchParams p;
  p.max_offset = 16;
  const MatchResult r = match_patch(model, target, p);
  EXPECT_TRUE(r.valid);
  EXPECT_NEAR(r.dx, 2.0, 0.5);
  EXPECT_NEAR(r.dy, -6.0, 0.5);
  EXPECT_GT(r.snr, 6.0);
  p.max_offset = 4;
  EXPECT_FALSE(match_patch(model, target, p).valid);
}

TEST(GridMatch, SelfMatchIsZero) {
  const TextureField f(256, 8);
  const Image img = f.window(0, 0, 128, 128);
  MatchParams p;
  const auto pts = grid_match(img, img, GridSpec{2, 2, 64, 0.0}, p);
  ASSERT_EQ(pts.size(), 4u);
  for (const auto& m : pts) {
    EXPECT_TRUE(m.valid);
    EXPECT_NEAR(m.dx, 0.0, 0.1);
    EXPECT_NEAR(m.dy, 0.0, 0.1);
  }
  EXPECT_DOUBLE_EQ(pts[0].cx, 31.5);
  EXPECT_DOUBLE_EQ(pts[3].cy, 95.5);
}

TEST(GridMatch, GlobalShift) {
  const TextureField f(256, 9);
  const Image model = f.window(0, 0, 192, 192), target = f.window(0, 0, 192, 192, 3, 3);
  const auto pts = grid_match(model, target, GridSpec{3, 3, 64, 0.0}, MatchParams{}, 2);
  ASSERT_EQ(pts.size(), 9u);
  for (const auto& m : pts) {
    EXPECT_TRUE(m.valid);
    EXPECT_NEAR(m.dx, 3.0, 0.5);
    EXPECT_NEAR(m.dy, 3.0, 0.5);
  }
}

TEST(GridMatch, BlankQuadrantIsGatedLocally) {
  const TextureField f(256, 10);
  const Image model = f.window(0, 0, 128, 128);
  Image target = model;
  for (int y = 64; y < 128; ++y) {
    for (int x = 64; x < 128; ++x) target.at(x, y) = 0.5;
  }
  const auto pts = grid_match(model, target, GridSpec{2, 2, 64, 0.0}, MatchParams{});
  EXPECT_TRUE(pts[0].valid);
  EXPECT_TRUE(pts[1].valid);
  EXPECT_TRUE(pts[2].valid);
  EXPECT_FALSE(pts[3].valid);
}

TEST(GridMatch, PatchMustFit) {
  EXPECT_THROW(grid_origins(128, 128, GridSpec{4, 4, 64, 0.0}), Error);
  EXPECT_NO_THROW(grid_origins(256, 256, GridSpec{4, 4, 64, 0.0}));
}

TEST(Whitening, BeatsPlainCorrelationUnderColoredClutter) {
  // seeded instance of the clutter benchmark: mid-band pattern + strong
  // independent low-frequency clutter; moderate whitening must find the shift
  int better = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ClutterPair pair = generate_clutter_pair(seed);
    const MatchResult r0 = find_peak(correlate(pair.a, pair.b, {0.0, 1e-6}));
    const MatchResult r7 = find_peak(correlate(pair.a, pair.b, {0.7, 1e-6}));
    EXPECT_NEAR(r7.dx, pair.shift_x, 0.5);
    EXPECT_NEAR(r7.dy, pair.shift_y, 0.5);
    better += r7.snr > r0.snr;
  }
  EXPECT_EQ(better, 5);
}

}  // namespace
}  // namespace swiftreg
