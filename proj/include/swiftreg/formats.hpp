#ifndef SWIFTREG_FORMATS_HPP
#define SWIFTREG_FORMATS_HPP

// File formats: binary PGM (P5, 8- and 16-bit) and SWR, a raw little-endian
// float32 single-plane format with a 16-byte header:
//   bytes 0..3   "SWR1"
//   bytes 4..7   width,  uint32 little-endian
//   bytes 8..11  height, uint32 little-endian
//   bytes 12..15 reserved, zero

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"

namespace swiftreg {

/// Contents of a PGM file before normalization.
struct PgmData {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::vector<std::uint16_t> values;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

inline void put_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

/// Reads one whitespace-delimited PGM header integer, skipping # comments.
inline int pgm_header_int(const std::vector<unsigned char>& buf, std::size_t& pos) {
  while (pos < buf.size()) {
    if (std::isspace(buf[pos])) {
      ++pos;
    } else if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= buf.size() || !std::isdigit(buf[pos])) throw Error("malformed PGM header");
  long v = 0;
  while (pos < buf.size() && std::isdigit(buf[pos])) {
    v = v * 10 + (buf[pos] - '0');
    if (v > (1L << 30)) throw Error("PGM header value too large");
    ++pos;
  }
  return static_cast<int>(v);
}

inline std::uint8_t quantize8(double v) {
  const double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(q);
}

}  // namespace detail

inline PgmData read_pgm(const std::filesystem::path& path) {
  const auto buf = detail::read_file(path);
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5') throw Error(path.string() + ": not a binary PGM (P5)");
  std::size_t pos = 2;
  PgmData d;
  d.width = detail::pgm_header_int(buf, pos);
  d.height = detail::pgm_header_int(buf, pos);
  d.maxval = detail::pgm_header_int(buf, pos);
  if (pos >= buf.size() || !std::isspace(buf[pos])) throw Error("malformed PGM header");
  ++pos;  // single whitespace before raster
  if (d.width < 1 || d.height < 1) throw Error("PGM has empty raster");
  if (d.maxval != 255 && d.maxval != 65535) {
    throw Error("unsupported PGM maxval " + std::to_string(d.maxval) + " (need 255 or 65535)");
  }
  const std::size_t n = static_cast<std::size_t>(d.width) * d.height;
  const std::size_t bytes = d.maxval == 255 ? n : 2 * n;
  if (buf.size() - pos < bytes) throw Error(path.string() + ": truncated PGM raster");
  d.values.resize(n);
  if (d.maxval == 255) {
    for (std::size_t i = 0; i < n; ++i) d.values[i] = buf[pos + i];
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      d.values[i] = static_cast<std::uint16_t>((buf[pos + 2 * i] << 8) | buf[pos + 2 * i + 1]);
    }
  }
  return d;
}

inline Raster16 to_raster(const PgmData& d) { return Raster16{d.width, d.height, d.values}; }

/// PGM values scaled by 1/maxval into [0,1].
inline Image pgm_to_image(const PgmData& d) {
  std::vector<double> px(d.values.size());
  const double inv = 1.0 / d.maxval;
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = d.values[i] * inv;
  return Image(d.width, d.height, std::move(px));
}

/// 8-bit PGM; pixels clamped to [0,1] and quantized round-half-up.
inline void write_pgm8(const std::filesystem::path& path, const Image& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + img.size());
  for (double v : img.pixels()) out.push_back(detail::quantize8(v));
  detail::write_file(path, out);
}

/// 16-bit big-endian PGM, used for synthetic raw data.
inline void write_pgm16(const std::filesystem::path& path, const Raster16& raw) {
  const std::string header =
      "P5\n" + std::to_string(raw.width) + " " + std::to_string(raw.height) + "\n65535\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  for (std::uint16_t v : raw.values) {
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v & 0xffu));
  }
  detail::write_file(path, out);
}

inline std::vector<unsigned char> encode_swr(const Image& img) {
  std::vector<unsigned char> out{'S', 'W', 'R', '1'};
  out.reserve(16 + 4 * img.size());
  detail::put_u32le(out, static_cast<std::uint32_t>(img.width()));
  detail::put_u32le(out, static_cast<std::uint32_t>(img.height()));
  detail::put_u32le(out, 0);
  for (double v : img.pixels()) detail::put_u32le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

inline Image decode_swr(const std::vector<unsigned char>& buf) {
  if (buf.size() < 16 || std::memcmp(buf.data(), "SWR1", 4) != 0) throw Error("not an SWR1 image");
  const std::uint32_t w = detail::get_u32le(&buf[4]);
  const std::uint32_t h = detail::get_u32le(&buf[8]);
  if (detail::get_u32le(&buf[12]) != 0) throw Error("SWR1 reserved bytes must be zero");
  if (w < 1 || h < 1 || w > (1u << 20) || h > (1u << 20)) throw Error("SWR1 has invalid dimensions");
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (buf.size() != 16 + 4 * n) throw Error("SWR1 payload size mismatch");
  std::vector<double> px(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float f = std::bit_cast<float>(detail::get_u32le(&buf[16 + 4 * i]));
    if (!std::isfinite(f)) throw Error("SWR1 contains non-finite pixel");
    px[i] = f;
  }
  return Image(static_cast<int>(w), static_cast<int>(h), std::move(px));
}

inline void write_swr(const std::filesystem::path& path, const Image& img) {
  detail::write_file(path, encode_swr(img));
}

inline Image read_swr(const std::filesystem::path& path) { return decode_swr(detail::read_file(path)); }

/// Loads PGM (8- or 16-bit, scaled to [0,1]) or SWR, chosen by file magic.
inline Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  in.close();
  if (magic[0] == 'P' && magic[1] == '5') return pgm_to_image(read_pgm(path));
  if (std::memcmp(magic.data(), "SWR1", 4) == 0) return read_swr(path);
  throw Error(path.string() + ": unrecognized image format");
}

/// Writes by extension: ".swr" as float32, anything else as 8-bit PGM.
inline void save_image(const std::filesystem::path& path, const Image& img) {
  if (path.extension() == ".swr") {
    write_swr(path, img);
  } else {
    write_pgm8(path, img);
  }
}

}  // namespace swiftreg

#endif  // SWIFTREG_FORMATS_HPP
