#include <swiftreg/formats.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

namespace swiftreg {
namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "swiftreg_formats_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TEST(Pgm, Reads16BitBigEndianWithComments) {
  const auto p = temp_path("ramp16.pgm");
  std::string bytes = "P5\n# comment line\n3 1\n65535\n";
  bytes += std::string("\x00\x01\x12\x34\xff\xff", 6);
  write_bytes(p, bytes);
  const PgmData d = read_pgm(p);
  EXPECT_EQ(d.width, 3);
  EXPECT_EQ(d.maxval, 65535);
  EXPECT_EQ(d.values, (std::vector<std::uint16_t>{1, 0x1234, 0xffff}));
  const Image img = load_image(p);
  EXPECT_DOUBLE_EQ(img.at(2, 0), 1.0);
}

TEST(Pgm, Writes8BitRoundHalfUp) {
  const auto p = temp_path("q8.pgm");
  Image img(4, 1);
  img.at(0, 0) = -0.2;             // clamps to 0
  img.at(1, 0) = 0.5 / 255.0;      // exactly half a step -> rounds up to 1
  img.at(2, 0) = 127.49 / 255.0;   // -> 127
  img.at(3, 0) = 1.7;              // clamps to 255
  write_pgm8(p, img);
  const PgmData d = read_pgm(p);
  EXPECT_EQ(d.maxval, 255);
  EXPECT_EQ(d.values, (std::vector<std::uint16_t>{0, 1, 127, 255}));
}

TEST(Pgm, RejectsMalformedFiles) {
  const auto p = temp_path("bad.pgm");
  write_bytes(p, "P2\n2 2\n255\n0 0 0 0");
  EXPECT_THROW(read_pgm(p), Error);
  write_bytes(p, "P5\n2 2\n1023\n");
  EXPECT_THROW(read_pgm(p), Error);
  write_bytes(p, std::string("P5\n2 2\n255\n\x01\x02", 13));
  EXPECT_THROW(read_pgm(p), Error);
}

TEST(Swr, HeaderLayoutIsExact) {
  Image img(3, 2, 0.25);
  const auto bytes = encode_swr(img);
  ASSERT_EQ(bytes.size(), 16u + 4u * 6u);
  const unsigned char expect[16] = {'S', 'W', 'R', '1', 3, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_TRUE(std::equal(expect, expect + 16, bytes.begin()));
  // 0.25f = 0x3e800000, little-endian
  EXPECT_EQ(bytes[16], 0x00);
  EXPECT_EQ(bytes[17], 0x00);
  EXPECT_EQ(bytes[18], 0x80);
  EXPECT_EQ(bytes[19], 0x3e);
}

TEST(Swr, RoundTripsFloatPrecision) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  Image img(17, 9);
  for (double& v : img.pixels()) v = static_cast<float>(u(rng));
  const auto p = temp_path("rt.swr");
  save_image(p, img);
  const Image back = load_image(p);
  EXPECT_TRUE(std::equal(img.pixels().begin(), img.pixels().end(), back.pixels().begin()));
}

TEST(Swr, RejectsCorruptPayload) {
  auto bytes = encode_swr(Image(2, 2));
  bytes.pop_back();
  EXPECT_THROW(decode_swr(bytes), Error);
  bytes = encode_swr(Image(2, 2));
  bytes[12] = 1;
  EXPECT_THROW(decode_swr(bytes), Error);
}

}  // namespace
}  // namespace swiftreg
