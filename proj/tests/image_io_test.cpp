#include <swiftreg/image_io.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace swiftreg {
namespace {

Image random_image(int w, int h, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(w, h);
  for (double& p : img.pixels()) p = u(rng);
  return img;
}

TEST(ConvertDepth, ConstantRasterIsDegenerate) {
  Raster16 raw{8, 8, std::vector<std::uint16_t>(64, 1234)};
  EXPECT_THROW(convert_depth(raw, 0.5, 99.5), Error);
}

TEST(ConvertDepth, RejectsBadPercentilesAndEmptyInput) {
  Raster16 raw{2, 1, {0, 10}};
  EXPECT_THROW(convert_depth(raw, 50.0, 50.0), Error);
  EXPECT_THROW(convert_depth(raw, 60.0, 40.0), Error);
  EXPECT_THROW(convert_depth(raw, -1.0, 40.0), Error);
  EXPECT_THROW(convert_depth(Raster16{}, 0.0, 100.0), Error);
}

TEST(ConvertDepth, FullRampMapsLinearly) {
  Raster16 raw{256, 256, {}};
  for (int i = 0; i < 65536; ++i) raw.values.push_back(static_cast<std::uint16_t>(i));
  const Image img = convert_depth(raw, 0.0, 100.0);
  EXPECT_EQ(img.pixels()[0], 0.0);
  EXPECT_EQ(img.pixels()[65535], 1.0);
  EXPECT_NEAR(img.pixels()[32768], 0.50001, 1e-4);
}

TEST(ConvertDepth, SaturatesNearestRankTails) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(30000.0, 6000.0);
  Raster16 raw{40, 25, {}};
  for (int i = 0; i < 1000; ++i) raw.values.push_back(static_cast<std::uint16_t>(std::clamp(g(rng), 0.0, 65535.0)));

  // oracle: sort, take nearest-rank clip values, map each pixel directly
  std::vector<std::uint16_t> sorted = raw.values;
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted[static_cast<std::size_t>(std::ceil(0.02 * 1000)) - 1];
  const double hi = sorted[1000 - static_cast<std::size_t>(std::ceil(0.02 * 1000))];
  const Image img = convert_depth(raw, 2.0, 98.0);
  int zeros = 0, ones = 0;
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    const double v = raw.values[i];
    const double expect = v <= lo ? 0.0 : (v >= hi ? 1.0 : (v - lo) / (hi - lo));
    EXPECT_DOUBLE_EQ(img.pixels()[i], expect);
    zeros += img.pixels()[i] == 0.0;
    ones += img.pixels()[i] == 1.0;
  }
  EXPECT_EQ(zeros, 20);
  EXPECT_EQ(ones, 20);
}

TEST(ConvertDepth, MonotoneForRandomClipPairs) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Raster16 raw{16, 16, {}};
    std::uniform_int_distribution<int> v(0, 65535);
    for (int i = 0; i < 256; ++i) raw.values.push_back(static_cast<std::uint16_t>(v(rng)));
    std::uniform_real_distribution<double> u(0.0, 100.0);
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    if (b - a < 5.0) continue;
    const Image img = convert_depth(raw, a, b);
    for (int i = 0; i < 256; ++i) {
      for (int j = 0; j < 256; ++j) {
        if (raw.values[i] <= raw.values[j]) {
          ASSERT_LE(img.pixels()[i], img.pixels()[j]);
        }
      }
    }
  }
}

TEST(NormalizeContrast, IdentityWhenStatsAlreadyMatch) {
  Image img(8, 8);
  for (int i = 0; i < 64; ++i) img.pixels()[i] = i % 2 ? 0.6 : 0.4;
  const Image out = normalize_contrast(img, 0.5, 0.1);
  for (int i = 0; i < 64; ++i) EXPECT_NEAR(out.pixels()[i], img.pixels()[i], 1e-12);
}

TEST(NormalizeContrast, ClosedFormAffineMap) {
  Image img(8, 8);
  for (int i = 0; i < 64; ++i) img.pixels()[i] = i % 2 ? 0.25 : 0.15;
  const Image out = normalize_contrast(img, 0.5, 0.1);
  for (int i = 0; i < 64; ++i) EXPECT_NEAR(out.pixels()[i], (img.pixels()[i] - 0.2) * 2.0 + 0.5, 1e-12);
}

TEST(NormalizeContrast, HitsTargetStatistics) {
  const Image img = random_image(64, 64, 99, 0.2, 0.4);  // maps inside [0,1], so no clamping
  const Image out = normalize_contrast(img, 0.5, 0.15);
  const MeanStd ms = mean_std(out.pixels());
  EXPECT_NEAR(ms.mean, 0.5, 1e-6);
  EXPECT_NEAR(ms.std, 0.15, 1e-6);
}

TEST(NormalizeContrast, ClampsLastAndRejectsFlatInput) {
  const Image img = random_image(32, 32, 5);
  const Image out = normalize_contrast(img, 0.5, 0.6);
  for (double p : out.pixels()) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
  EXPECT_THROW(normalize_contrast(Image(4, 4, 0.3), 0.5, 0.1), Error);
  EXPECT_THROW(normalize_contrast(img, 0.5, 0.0), Error);
}

TEST(Downscale, ConstantAndCheckerboard) {
  const Image c = downscale(Image(2, 2, 0.7), 2);
  ASSERT_EQ(c.width(), 1);
  EXPECT_EQ(c.at(0, 0), 0.7);

  Image board(4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) board.at(x, y) = (x + y) % 2;
  }
  const Image d = downscale(board, 2);
  ASSERT_EQ(d.width(), 2);
  for (double p : d.pixels()) EXPECT_EQ(p, 0.5);
}

TEST(Downscale, MatchesBlockMeanOracle) {
  const Image img = random_image(9, 9, 31);
  const Image d = downscale(img, 3);
  ASSERT_EQ(d.width(), 3);
  ASSERT_EQ(d.height(), 3);
  for (int by = 0; by < 3; ++by) {
    for (int bx = 0; bx < 3; ++bx) {
      double s = 0.0;
      for (int j = 0; j < 3; ++j) {
        for (int i = 0; i < 3; ++i) s += img.at(3 * bx + i, 3 * by + j);
      }
      EXPECT_NEAR(d.at(bx, by), s / 9.0, 1e-15);
    }
  }
}

TEST(Downscale, DropsTrailingRowsAndColumns) {
  const Image img = random_image(11, 7, 3);
  const Image d = downscale(img, 5);
  ASSERT_EQ(d.width(), 2);
  ASSERT_EQ(d.height(), 1);
  const Image kept = downscale(img.crop(0, 0, 10, 5), 5);
  EXPECT_EQ(d.pixels()[0], kept.pixels()[0]);
  EXPECT_EQ(d.pixels()[1], kept.pixels()[1]);
}

TEST(Downscale, ConstantStaysExactAndMeanIsPreserved) {
  for (int f : {2, 3, 5}) {
    const Image d = downscale(Image(30, 30, 0.3), f);
    for (double p : d.pixels()) EXPECT_DOUBLE_EQ(p, 0.3);
    const Image img = random_image(30, 60, 100 + f);
    EXPECT_NEAR(mean_std(downscale(img, f).pixels()).mean, mean_std(img.pixels()).mean, 1e-14);
  }
}

TEST(Downscale, Errors) {
  EXPECT_THROW(downscale(Image(8, 8), 4), Error);
  EXPECT_THROW(downscale(Image(4, 8), 5), Error);
}

TEST(BuildPyramid, DimensionsAndScales) {
  const auto levels = build_pyramid(random_image(64, 64, 1), PyramidSpec{{2, 2}});
  ASSERT_EQ(levels.size(), 3u);
  EXPECT_EQ(levels[1].width(), 32);
  EXPECT_EQ(levels[2].width(), 16);
  EXPECT_EQ(levels[2].meta().scale, 4);
  EXPECT_EQ(levels[2].meta().level, 2);
  EXPECT_THROW(build_pyramid(random_image(64, 64, 1), PyramidSpec{}), Error);
}

TEST(BuildPyramid, MixedFactorsMatchRepeatedDownscale) {
  const Image img = random_image(60, 60, 8);
  const auto levels = build_pyramid(img, PyramidSpec{{2, 3, 5}});
  ASSERT_EQ(levels.size(), 4u);
  const int dims[] = {60, 30, 10, 2};
  Image ref = img;
  const int factors[] = {2, 3, 5};
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(levels[k].width(), dims[k]);
    EXPECT_EQ(levels[k].height(), dims[k]);
    EXPECT_TRUE(std::equal(levels[k].pixels().begin(), levels[k].pixels().end(), ref.pixels().begin()));
    if (k < 3) ref = downscale(ref, factors[k]);
  }
  EXPECT_EQ(levels[3].meta().scale, 30);
  // bit-for-bit reproducible
  const auto again = build_pyramid(img, PyramidSpec{{2, 3, 5}});
  for (int k = 0; k < 4; ++k) EXPECT_TRUE(again[k] == levels[k]);
}

TEST(PyramidSpec, ValidatesFactorsAndMinimumSize) {
  EXPECT_NO_THROW(PyramidSpec({2, 2}).validate_for(64, 64));
  EXPECT_THROW(PyramidSpec({2, 2, 2}).validate_for(64, 64), ConfigError);
  EXPECT_THROW(PyramidSpec({4}).validate_for(64, 64), ConfigError);
  EXPECT_NO_THROW(PyramidSpec({}).validate_for(64, 64));
  EXPECT_THROW(PyramidSpec({}).validate_for(64, 8), ConfigError);
}

}  // namespace
}  // namespace swiftreg
