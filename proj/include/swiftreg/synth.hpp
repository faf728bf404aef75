#ifndef SWIFTREG_SYNTH_HPP
#define SWIFTREG_SYNTH_HPP

// Synthetic ground truth: a 3D blob phantom sliced into sections, warped by
// smooth per-section affines, plus the brute-force oracles and the residual
// evaluation used to check the pipeline against that truth.
//
// Every random draw flows from SynthSpec::seed through derive_seed(), keyed by
// (stream, index), so any subset of sections regenerates identically.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "affine.hpp"
#include "correlate.hpp"
#include "error.hpp"
#include "fft.hpp"
#include "formats.hpp"
#include "image.hpp"
#include "manifest.hpp"
#include "parallel.hpp"
#include "stats.hpp"
#include "transform.hpp"

namespace swiftreg {

enum class DefectType { blank, tear_band, intensity_drop };

inline DefectType defect_from_string(const std::string& s) {
  if (s == "blank") return DefectType::blank;
  if (s == "tear-band") return DefectType::tear_band;
  if (s == "intensity-drop") return DefectType::intensity_drop;
  throw ConfigError("unknown defect type '" + s + "'");
}

inline std::string to_string(DefectType d) {
  switch (d) {
    case DefectType::blank: return "blank";
    case DefectType::tear_band: return "tear-band";
    case DefectType::intensity_drop: return "intensity-drop";
  }
  return "blank";
}

struct TextureSpec {
  double blob_density = 1.0;        ///< coarse blob centers per 10^4 px^2 per section of depth
  double blob_radius_min = 3.0;     ///< in-plane Gaussian sigma range, px
  double blob_radius_max = 12.0;
  double speckle_density = 8.0;     ///< fine blobs per 10^4 px^2 per section of depth
  double clutter_amplitude = 0.05;  ///< per-section low-frequency intensity variation
};

/// Bounds of the truth warp.  Each parameter follows a damped random walk in
/// its velocity, reflected at the bounds.
struct WarpSpec {
  double rotation_deg = 2.0;
  double scale = 0.01;        ///< |s - 1|
  double shear = 0.02;
  double translation = 20.0;  ///< px
  double accel_frac = 0.02;   ///< per-section velocity kick, as a fraction of the bound
};

struct SynthSpec {
  int sections = 16;
  int width = 1024;
  int height = 1024;
  TextureSpec texture;
  WarpSpec warp;
  double noise_sigma = 0.05;
  std::map<int, DefectType> damaged;
  std::uint64_t seed = 1;
  std::vector<int> levels;  ///< pyramid factors; empty = halve until the longer side would drop below 256
};

/// splitmix64 over (seed, stream, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ (stream * 0x632be59bd9b4e019ULL)) ^ index);
}

namespace synth_stream {
inline constexpr std::uint64_t phantom = 1, speckle = 2, warp = 3, clutter = 4, noise = 5, defect = 6;
}

struct Blob {
  double x, y, z;
  double inv_xx, inv_xy, inv_yy;  ///< in-plane inverse covariance
  double sigma_z;
  double reach;                   ///< in-plane cutoff radius, px
  double amp;
};

/// Shared 3D phantom: ellipsoidal Gaussian blobs over a padded volume.
struct Phantom {
  std::vector<Blob> blobs;
};

namespace detail {

inline void add_blobs(std::vector<Blob>& out, std::mt19937_64& rng, double count_mean, double x0, double x1,
                      double y0, double y1, double z0, double z1, double r_min, double r_max, double sz_min,
                      double sz_max, double amp_min, double amp_max) {
  std::poisson_distribution<long> count_dist(count_mean);
  const long count = count_dist(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (long i = 0; i < count; ++i) {
    Blob b{};
    b.x = x0 + (x1 - x0) * u(rng);
    b.y = y0 + (y1 - y0) * u(rng);
    b.z = z0 + (z1 - z0) * u(rng);
    const double sa = r_min + (r_max - r_min) * u(rng);
    const double sb = sa * (0.6 + 0.4 * u(rng));
    const double th = std::numbers::pi * u(rng);
    const double c = std::cos(th), s = std::sin(th);
    const double ia = 1.0 / (sa * sa), ib = 1.0 / (sb * sb);
    b.inv_xx = c * c * ia + s * s * ib;
    b.inv_xy = c * s * (ia - ib);
    b.inv_yy = s * s * ia + c * c * ib;
    b.sigma_z = sz_min + (sz_max - sz_min) * u(rng);
    b.reach = 4.0 * sa;
    const double mag = amp_min + (amp_max - amp_min) * u(rng);
    b.amp = u(rng) < 0.5 ? -mag : mag;
    out.push_back(b);
  }
}

}  // namespace detail

/// Truth transform of every section (raw section coordinates -> phantom
/// coordinates), rotation/scale/shear about the image center.
inline std::vector<AffineTransform> generate_truth(const SynthSpec& spec) {
  const WarpSpec& w = spec.warp;
  const std::array<double, 6> bounds{w.rotation_deg * std::numbers::pi / 180.0, w.scale, w.scale, w.shear,
                                     w.translation, w.translation};
  std::array<double, 6> pos{}, vel{};
  std::vector<AffineTransform> truth;
  const Point2 c{(spec.width - 1) / 2.0, (spec.height - 1) / 2.0};
  for (int k = 0; k < spec.sections; ++k) {
    std::mt19937_64 rng(derive_seed(spec.seed, synth_stream::warp, static_cast<std::uint64_t>(k)));
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (std::size_t i = 0; i < 6; ++i) {
      const double b = bounds[i];
      if (b <= 0.0) {
        pos[i] = vel[i] = 0.0;
        continue;
      }
      if (k == 0) {
        pos[i] = b * u(rng);
        vel[i] = 0.05 * b * g(rng);
      } else {
        vel[i] = 0.9 * vel[i] + w.accel_frac * b * g(rng);
        pos[i] += vel[i];
        if (pos[i] > b) {
          pos[i] = 2 * b - pos[i];
          vel[i] = -0.5 * vel[i];
        } else if (pos[i] < -b) {
          pos[i] = -2 * b - pos[i];
          vel[i] = -0.5 * vel[i];
        }
        pos[i] = std::clamp(pos[i], -b, b);
      }
    }
    // linear part: rotation * [[sx, shear], [0, sy]]
    const double cr = std::cos(pos[0]), sr = std::sin(pos[0]);
    const double sx = 1.0 + pos[1], sy = 1.0 + pos[2], sh = pos[3];
    AffineTransform a;
    a.a11 = cr * sx;
    a.a12 = cr * sh - sr * sy;
    a.a21 = sr * sx;
    a.a22 = sr * sh + cr * sy;
    a.tx = c.x - a.a11 * c.x - a.a12 * c.y + pos[4];
    a.ty = c.y - a.a21 * c.x - a.a22 * c.y + pos[5];
    truth.push_back(a);
  }
  return truth;
}

/// Builds the shared phantom covering every warped section footprint.
inline Phantom generate_phantom(const SynthSpec& spec) {
  const TextureSpec& t = spec.texture;
  if (spec.width < 16 || spec.height < 16) throw Error("synth: dims must be at least 16 px");
  if (t.blob_radius_min <= 0.0 || t.blob_radius_max < t.blob_radius_min) throw Error("synth: bad blob radius range");
  if (4.0 * t.blob_radius_max > std::min(spec.width, spec.height) / 2.0) {
    throw Error("synth: dims too small for blob radii");
  }
  const double diag = std::hypot(spec.width, spec.height);
  const double pad = spec.warp.translation + diag * (spec.warp.rotation_deg * std::numbers::pi / 180.0 +
                                                     spec.warp.scale + spec.warp.shear) +
                     4.0 * t.blob_radius_max + 8.0;
  const double x0 = -pad, x1 = spec.width + pad, y0 = -pad, y1 = spec.height + pad;
  const double area = (x1 - x0) * (y1 - y0) / 1e4;
  Phantom ph;
  {
    std::mt19937_64 rng(derive_seed(spec.seed, synth_stream::phantom, 0));
    const double z0 = -12.0, z1 = spec.sections + 11.0;
    detail::add_blobs(ph.blobs, rng, t.blob_density * area * (z1 - z0), x0, x1, y0, y1, z0, z1, t.blob_radius_min,
                      t.blob_radius_max, 1.5, 4.0, 0.08, 0.25);
  }
  {
    std::mt19937_64 rng(derive_seed(spec.seed, synth_stream::speckle, 0));
    const double z0 = -3.0, z1 = spec.sections + 2.0;
    detail::add_blobs(ph.blobs, rng, t.speckle_density * area * (z1 - z0), x0, x1, y0, y1, z0, z1, 1.0, 2.0, 0.6,
                      1.0, 0.05, 0.15);
  }
  return ph;
}

/// Phantom slice z as seen through `truth` (raw -> phantom), on a 0.5 background.
inline Image render_phantom_slice(const Phantom& ph, double z, int width, int height, const AffineTransform& truth) {
  Image img(width, height, 0.5);
  const AffineTransform inv = invert(truth);
  // raw-space reach is inflated to cover the (bounded) linear distortion
  const double stretch = 1.0 / std::sqrt(std::max(std::abs(truth.det()), 1e-3)) * 1.2;
  for (const Blob& b : ph.blobs) {
    const double dz = (z - b.z) / b.sigma_z;
    if (std::abs(dz) > 3.0) continue;
    const double amp = b.amp * std::exp(-0.5 * dz * dz);
    const Point2 cr = inv.apply({b.x, b.y});
    const double reach = b.reach * stretch;
    const int xa = std::max(0, static_cast<int>(std::floor(cr.x - reach)));
    const int xb = std::min(width - 1, static_cast<int>(std::ceil(cr.x + reach)));
    const int ya = std::max(0, static_cast<int>(std::floor(cr.y - reach)));
    const int yb = std::min(height - 1, static_cast<int>(std::ceil(cr.y + reach)));
    for (int y = ya; y <= yb; ++y) {
      for (int x = xa; x <= xb; ++x) {
        const Point2 p = truth.apply({static_cast<double>(x), static_cast<double>(y)});
        const double ddx = p.x - b.x, ddy = p.y - b.y;
        const double q = b.inv_xx * ddx * ddx + 2.0 * b.inv_xy * ddx * ddy + b.inv_yy * ddy * ddy;
        if (q < 16.0) img.at(x, y) += amp * std::exp(-0.5 * q);
      }
    }
  }
  return img;
}

struct SynthStack {
  StackManifest manifest;
  std::vector<AffineTransform> truth;  ///< raw -> phantom, per section
  std::vector<Image> images;
};

/// Default pyramid: halve while the longer side stays >= 256 (and both >= 16).
inline std::vector<int> default_levels(int width, int height) {
  std::vector<int> f;
  int w = width, h = height;
  while (std::max(w, h) / 2 >= 256 && std::min(w, h) / 2 >= 16) {
    f.push_back(2);
    w /= 2;
    h /= 2;
  }
  return f;
}

inline Image generate_section(const SynthSpec& spec, const Phantom& ph, const std::vector<AffineTransform>& truth, int k) {
  Image img = render_phantom_slice(ph, k, spec.width, spec.height, truth[static_cast<std::size_t>(k)]);
  const auto uk = static_cast<std::uint64_t>(k);
  if (spec.texture.clutter_amplitude > 0.0) {
    std::mt19937_64 rng(derive_seed(spec.seed, synth_stream::clutter, uk));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int j = 0; j < 4; ++j) {
      const double fr = 0.5 + 1.5 * u(rng), th = 2.0 * std::numbers::pi * u(rng), ph0 = 2.0 * std::numbers::pi * u(rng);
      const double fx = fr * std::cos(th) / spec.width, fy = fr * std::sin(th) / spec.height;
      const double a = 0.5 * spec.texture.clutter_amplitude;
      for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) img.at(x, y) += a * std::cos(2.0 * std::numbers::pi * (fx * x + fy * y) + ph0);
      }
    }
  }
  if (spec.noise_sigma > 0.0) {
    std::mt19937_64 rng(derive_seed(spec.seed, synth_stream::noise, uk));
    std::normal_distribution<double> g(0.0, spec.noise_sigma);
    for (double& p : img.pixels()) p += g(rng);
  }
  if (auto it = spec.damaged.find(k); it != spec.damaged.end()) {
    std::mt19937_64 rng(derive_seed(spec.seed, synth_stream::defect, uk));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    switch (it->second) {
      case DefectType::blank:
        for (double& p : img.pixels()) p = 0.5;
        break;
      case DefectType::tear_band: {
        const int band = std::max(2, spec.height / 16);
        const int y0 = static_cast<int>(u(rng) * (spec.height - band));
        for (int y = y0; y < y0 + band; ++y) {
          for (int x = 0; x < spec.width; ++x) img.at(x, y) = 0.0;
        }
        break;
      }
      case DefectType::intensity_drop:
        for (double& p : img.pixels()) p = 0.3 + 0.3 * (p - 0.5);
        break;
    }
  }
  img.meta().section_index = k;
  return img;
}

/// Generates the whole stack in memory; sections are rendered in parallel.
inline SynthStack generate_stack(const SynthSpec& spec, int workers = 1) {
  if (spec.sections < 1) throw Error("synth: need at least one section");
  SynthStack out;
  out.truth = generate_truth(spec);
  const Phantom ph = generate_phantom(spec);
  out.images.resize(static_cast<std::size_t>(spec.sections));
  parallel_for(spec.sections, workers,
               [&](int k) { out.images[static_cast<std::size_t>(k)] = generate_section(spec, ph, out.truth, k); });
  out.manifest.levels.factors = spec.levels.empty() ? default_levels(spec.width, spec.height) : spec.levels;
  for (int k = 0; k < spec.sections; ++k) {
    Section s;
    s.id = k;
    char name[32];
    std::snprintf(name, sizeof name, "section_%03d.swr", k);
    s.source_path = name;
    s.status = spec.damaged.count(k) ? SectionStatus::damaged : SectionStatus::ok;
    out.manifest.sections.push_back(std::move(s));
  }
  return out;
}

// ---- JSON ----------------------------------------------------------------

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{"sections", "width", "height", "texture", "warp", "noise_sigma",
                                              "damaged", "seed", "levels", "dims"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown synth spec key '" + k + "'");
  }
  SynthSpec s;
  try {
    s.sections = j.value("sections", s.sections);
    if (j.contains("dims")) {
      s.width = j.at("dims").at(0).get<int>();
      s.height = j.at("dims").at(1).get<int>();
    }
    s.width = j.value("width", s.width);
    s.height = j.value("height", s.height);
    if (j.contains("texture")) {
      const auto& t = j.at("texture");
      s.texture.blob_density = t.value("blob_density", s.texture.blob_density);
      if (t.contains("blob_radius")) {
        s.texture.blob_radius_min = t.at("blob_radius").at(0).get<double>();
        s.texture.blob_radius_max = t.at("blob_radius").at(1).get<double>();
      }
      s.texture.speckle_density = t.value("speckle_density", s.texture.speckle_density);
      s.texture.clutter_amplitude = t.value("clutter_amplitude", s.texture.clutter_amplitude);
    }
    if (j.contains("warp")) {
      const auto& w = j.at("warp");
      s.warp.rotation_deg = w.value("rotation_deg", s.warp.rotation_deg);
      s.warp.scale = w.value("scale", s.warp.scale);
      s.warp.shear = w.value("shear", s.warp.shear);
      s.warp.translation = w.value("translation", s.warp.translation);
      s.warp.accel_frac = w.value("accel_frac", s.warp.accel_frac);
    }
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    if (j.contains("damaged")) {
      for (const auto& [k, v] : j.at("damaged").items()) s.damaged[std::stoi(k)] = defect_from_string(v.get<std::string>());
    }
    s.seed = j.value("seed", s.seed);
    s.levels = j.value("levels", s.levels);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed synth spec: ") + e.what());
  }
  return s;
}

/// Writes section images (SWR), manifest.json and the truth file.
inline void write_synth_stack(const SynthStack& stack, const std::filesystem::path& out_dir,
                              const std::filesystem::path& truth_path) {
  std::filesystem::create_directories(out_dir);
  for (std::size_t k = 0; k < stack.images.size(); ++k) {
    write_swr(out_dir / stack.manifest.sections[k].source_path, stack.images[k]);
  }
  save_manifest(out_dir / "manifest.json", stack.manifest);
  nlohmann::json t = nlohmann::json::array();
  for (const auto& a : stack.truth) t.push_back(affine_to_json(a));
  std::ofstream out(truth_path, std::ios::trunc);
  if (!out) throw Error("cannot write " + truth_path.string());
  out << nlohmann::json{{"truth", t}}.dump(2) << '\n';
}

inline std::vector<AffineTransform> load_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  std::vector<AffineTransform> out;
  for (const auto& a : j.at("truth")) out.push_back(affine_from_json(a));
  return out;
}

// ---- oracles -------------------------------------------------------------

/// Direct O(N^4) cyclic cross-correlation of the mean-subtracted inputs,
/// map(s) = sum_p a'(p) b'(p + s), in CorrelationMap's centered layout.
inline CorrelationMap brute_force_correlate(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error("brute_force_correlate: dimension mismatch");
  if (a.width() > 64 || a.height() > 64) throw Error("brute_force_correlate: inputs limited to 64x64");
  const int w = a.width(), h = a.height();
  const double ma = mean_std(a.pixels()).mean, mb = mean_std(b.pixels()).mean;
  CorrelationMap map{w, h, std::vector<double>(a.size())};
  for (int sy = -(h / 2); sy < h - h / 2; ++sy) {
    for (int sx = -(w / 2); sx < w - w / 2; ++sx) {
      double s = 0.0;
      for (int y = 0; y < h; ++y) {
        const int yy = ((y + sy) % h + h) % h;
        for (int x = 0; x < w; ++x) {
          const int xx = ((x + sx) % w + w) % w;
          s += (a.at(x, y) - ma) * (b.at(xx, yy) - mb);
        }
      }
      map.at(sx + w / 2, sy + h / 2) = s;
    }
  }
  return map;
}

// ---- colored-clutter benchmark ----------------------------------------------

struct ClutterPairSpec {
  int size = 128;
  double signal_amplitude = 1.0;   ///< pattern shared by both images
  double clutter_amplitude = 3.0;  ///< independent low-frequency clutter per image
  double noise_sigma = 1.5;        ///< independent white noise per pixel
  double band_lo = 0.04;           ///< signal band, cycles per pixel
  double band_hi = 0.5;
  double band_slope = 1.0;         ///< signal amplitude ~ f^-slope inside the band
  double clutter_hi = 0.03;        ///< clutter occupies frequencies below this
  int max_shift = 24;
};

struct ClutterPair {
  Image a;
  Image b;
  int shift_x = 0;  ///< b's pattern sits at +shift relative to a's
  int shift_y = 0;
};

namespace detail {

/// Real random field with Gaussian coefficients inside the radial band
/// [f_lo, f_hi] cycles/pixel, amplitude falling as (f / f_lo)^-slope, scaled
/// to unit pixel std.
inline std::vector<double> band_field(std::mt19937_64& rng, int n, double f_lo, double f_hi, double slope = 0.0) {
  Spectrum s{n, n, {}};
  s.coeffs.assign(static_cast<std::size_t>(s.stride()) * n, 0.0);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int ky = 0; ky < n; ++ky) {
    const double fy = (ky <= n / 2 ? ky : ky - n) / static_cast<double>(n);
    for (int kx = 0; kx < s.stride(); ++kx) {
      const double fx = kx / static_cast<double>(n);
      const double f = std::hypot(fx, fy);
      const double re = g(rng), im = g(rng);
      if (f >= f_lo && f <= f_hi) {
        const double amp = slope == 0.0 ? 1.0 : std::pow(f / f_lo, -slope);
        s.at(kx, ky) = {amp * re, amp * im};
      }
    }
  }
  auto v = inverse_fft(std::move(s));
  const double sd = mean_std(v).std;
  if (sd > 0.0) {
    for (double& x : v) x /= sd;
  }
  return v;
}

}  // namespace detail

/// A pair sharing a 1/f-colored pattern at a known offset, each with its own
/// strong low-frequency clutter and white noise.  Plain correlation locks onto
/// the clutter; full whitening lets the noise-dominated high bins in.
inline ClutterPair generate_clutter_pair(std::uint64_t seed, const ClutterPairSpec& spec = {}) {
  const int n = spec.size, big = 2 * n;
  std::mt19937_64 rng(derive_seed(seed, 100, 0));
  const auto pattern = detail::band_field(rng, big, spec.band_lo, spec.band_hi, spec.band_slope);
  std::uniform_int_distribution<int> sh(-spec.max_shift, spec.max_shift);
  ClutterPair out;
  out.shift_x = sh(rng);
  out.shift_y = sh(rng);
  const auto ca = detail::band_field(rng, n, 0.5 / n, spec.clutter_hi);
  const auto cb = detail::band_field(rng, n, 0.5 / n, spec.clutter_hi);
  std::normal_distribution<double> g(0.0, spec.noise_sigma);
  out.a = Image(n, n);
  out.b = Image(n, n);
  const int ox = n / 2, oy = n / 2;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * n + x;
      const auto pa = pattern[static_cast<std::size_t>(oy + y) * big + (ox + x)];
      const auto pb = pattern[static_cast<std::size_t>(oy + y - out.shift_y) * big + (ox + x - out.shift_x)];
      out.a.at(x, y) = spec.signal_amplitude * pa + spec.clutter_amplitude * ca[i] + g(rng);
      out.b.at(x, y) = spec.signal_amplitude * pb + spec.clutter_amplitude * cb[i] + g(rng);
    }
  }
  return out;
}

// ---- evaluation ----------------------------------------------------------

struct ResidualStats {
  std::vector<double> per_section;  ///< mean corner displacement, px
  double mean = 0.0;
  double max = 0.0;
  double rms = 0.0;
};

enum class Gauge {
  reference,      ///< G from the first included section
  least_squares,  ///< G fitted to the corners of every included section
};

/// Gauge-factored alignment error against the truth.
///
/// Alignment is only defined up to one common affine G (aligned frame ->
/// truth frame).  With Gauge::reference, G = truth_r o recovered_r^-1 for the
/// first included section r.  With Gauge::least_squares, G best maps the
/// recovered corner positions of every included section onto their true
/// positions.  Each section's error is the mean displacement of the four
/// image corners under truth_k^-1 o G o recovered_k, in raw pixels, which is
/// zero for a perfect recovery.  `include` restricts the gauge and the stack
/// statistics (empty = all).
inline ResidualStats evaluate_alignment(std::span<const AffineTransform> recovered,
                                        std::span<const AffineTransform> truth, int width, int height,
                                        const std::vector<bool>& include = {}, Gauge gauge_mode = Gauge::reference) {
  if (recovered.size() != truth.size()) throw Error("evaluate_alignment: list lengths differ");
  if (recovered.empty()) throw Error("evaluate_alignment: empty lists");
  if (!include.empty() && include.size() != recovered.size()) throw Error("evaluate_alignment: include length differs");
  const std::array<Point2, 4> corners{{{0.0, 0.0}, {width - 1.0, 0.0}, {0.0, height - 1.0}, {width - 1.0, height - 1.0}}};
  const auto used = [&](std::size_t k) { return include.empty() || include[k]; };
  std::vector<AffineTransform> truth_inv;
  for (const auto& t : truth) truth_inv.push_back(invert(t));
  ResidualStats st;
  AffineTransform gauge;
  if (gauge_mode == Gauge::reference) {
    std::size_t r = 0;
    while (r < recovered.size() && !used(r)) ++r;
    if (r == recovered.size()) return st;
    gauge = compose(truth[r], invert(recovered[r]));
  } else {
    std::vector<MatchPoint> pts;
    for (std::size_t k = 0; k < recovered.size(); ++k) {
      if (!used(k)) continue;
      for (const auto& c : corners) {
        const Point2 r = recovered[k].apply(c), t = truth[k].apply(c);
        MatchPoint m;
        m.cx = r.x;
        m.cy = r.y;
        m.dx = t.x - r.x;
        m.dy = t.y - r.y;
        m.snr = 1.0;
        m.valid = true;
        pts.push_back(m);
      }
    }
    if (pts.empty()) return st;
    gauge = solve_affine(pts, Weighting::none).transform;
  }
  double ss = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < recovered.size(); ++k) {
    const AffineTransform e = compose(truth_inv[k], compose(gauge, recovered[k]));
    double d = 0.0;
    for (const auto& c : corners) {
      const Point2 q = e.apply(c);
      d += std::hypot(q.x - c.x, q.y - c.y);
    }
    d /= 4.0;
    st.per_section.push_back(d);
    if (!used(k)) continue;
    st.mean += d;
    st.max = std::max(st.max, d);
    ss += d * d;
    ++n;
  }
  st.mean /= n;
  st.rms = std::sqrt(ss / n);
  return st;
}

}  // namespace swiftreg

#endif  // SWIFTREG_SYNTH_HPP
