#ifndef SWIFTREG_PIPELINE_HPP
#define SWIFTREG_PIPELINE_HPP

// Multi-resolution stack alignment: per level, a pairwise chain pass puts
// every section near its neighbor, then match -> solve -> render -> remodel
// iterations against Z-averaged models run until the stack-median SNR
// settles.  Transforms are handed to the next finer level by rescaling.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "affine.hpp"
#include "correlate.hpp"
#include "error.hpp"
#include "formats.hpp"
#include "image.hpp"
#include "image_io.hpp"
#include "manifest.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "stats.hpp"
#include "transform.hpp"

#include <Eigen/Sparse>

namespace swiftreg {

/// Matching schedule of one pyramid level.
struct LevelConfig {
  int grid_rows = 4;
  int grid_cols = 4;
  int patch = 64;
  std::vector<int> span{9};  ///< model span per iteration; the last entry repeats
  double max_offset = 24.0;  ///< level pixels
  double margin = 0.06;      ///< lattice inset, fraction of the shorter image side
  int mesh_rows = 0;         ///< mesh grid on mesh levels; 0 = same as the match grid
  int mesh_cols = 0;
  double whitening = -1.0;   ///< per-level override; negative uses AlignConfig::whitening

  int span_at(int iteration) const {
    return span[static_cast<std::size_t>(std::min<int>(iteration, static_cast<int>(span.size()) - 1))];
  }
};

enum class Bootstrap { every_level, coarsest, none };

struct AlignConfig {
  double whitening = 0.7;
  double taper_frac = kDefaultTaperFrac;
  int exclusion_radius = kDefaultExclusionRadius;
  double content_floor = 0.01;
  double snr_stop_rel = 0.01;
  int max_iters_per_level = 8;
  double snr_accept = 6.0;
  Weighting weighting = Weighting::snr;
  Bootstrap bootstrap = Bootstrap::coarsest;
  int pair_passes = 2;            ///< match/solve passes of the pairwise bootstrap
  int link_distance = 3;          ///< bootstrap links reach this many usable sections back
  std::vector<double> whitening_search;  ///< if set, each level picks the candidate with the best median SNR
  std::vector<int> mesh_levels;   ///< pyramid level indices (0 = full resolution) solved as meshes
  double jump_mad_factor = 3.0;
  double jump_floor = 3.0;        ///< minimum jump size, full-resolution pixels
  std::vector<LevelConfig> levels;  ///< coarsest first; empty = derived from the image size

  bool is_mesh_level(int level) const {
    return std::find(mesh_levels.begin(), mesh_levels.end(), level) != mesh_levels.end();
  }

  /// Schedule for the level `index_from_coarsest` steps below the coarsest.
  const LevelConfig& level_config(int index_from_coarsest) const {
    return levels[static_cast<std::size_t>(std::min<int>(index_from_coarsest, static_cast<int>(levels.size()) - 1))];
  }

  void validate() const {
    if (!(whitening >= 0.0 && whitening <= 1.0)) throw ConfigError("whitening must be in [0, 1]");
    if (!(taper_frac >= 0.0 && taper_frac <= 0.5)) throw ConfigError("taper_frac must be in [0, 0.5]");
    if (exclusion_radius < 1) throw ConfigError("exclusion_radius must be >= 1");
    if (!(snr_accept > 0.0)) throw ConfigError("snr_accept must be > 0");
    if (!(snr_stop_rel >= 0.0)) throw ConfigError("snr_stop_rel must be >= 0");
    if (max_iters_per_level < 1) throw ConfigError("max_iters_per_level must be >= 1");
    if (pair_passes < 1) throw ConfigError("pair_passes must be >= 1");
    if (link_distance < 1) throw ConfigError("link_distance must be >= 1");
    for (double w : whitening_search) {
      if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("whitening_search values must be in [0, 1]");
    }
    if (!(jump_mad_factor > 0.0) || !(jump_floor >= 0.0)) throw ConfigError("bad jump detector settings");
    for (int l : mesh_levels) {
      if (l < 0) throw ConfigError("mesh level index must be >= 0");
    }
    int last_span = std::numeric_limits<int>::max();
    for (const auto& lc : levels) {
      if (lc.grid_rows < 1 || lc.grid_cols < 1) throw ConfigError("grid must be at least 1x1");
      if (lc.patch < 16) throw ConfigError("patch must be >= 16");
      if (!(lc.max_offset > 0.0)) throw ConfigError("max_offset must be > 0");
      if (!(lc.margin >= 0.0 && lc.margin < 0.5)) throw ConfigError("margin must be in [0, 0.5)");
      if (lc.mesh_rows < 0 || lc.mesh_cols < 0) throw ConfigError("mesh grid must be >= 0");
      if (!(lc.whitening <= 1.0)) throw ConfigError("level whitening must be <= 1");
      if (lc.span.empty()) throw ConfigError("span schedule is empty");
      for (int s : lc.span) {
        if (s < 1 || s % 2 == 0) throw ConfigError("spans must be odd and >= 1");
        if (s > last_span) throw ConfigError("span schedule must be non-increasing");
        last_span = s;
      }
    }
  }
};

/// Per-level schedule derived from the level sizes (coarsest first): patches
/// about a fifth of the shorter side (multiple of 8, clamped to [32, 128]),
/// as many cells as fit up to 8x8, span 9 throughout.
inline std::vector<LevelConfig> default_level_configs(const std::vector<std::pair<int, int>>& dims_coarsest_first) {
  std::vector<LevelConfig> out;
  for (std::size_t i = 0; i < dims_coarsest_first.size(); ++i) {
    const auto [w, h] = dims_coarsest_first[i];
    LevelConfig lc;
    const int side = std::min(w, h);
    lc.patch = std::min(std::clamp(side / 5 / 8 * 8, 32, 128), side);
    const double usable = side * (1.0 - 2.0 * lc.margin);
    const int cells = std::clamp(static_cast<int>(usable / (0.85 * lc.patch)), 2, 8);
    lc.grid_rows = lc.grid_cols = cells;
    lc.span = {9};
    lc.max_offset = i == 0 ? lc.patch / 3.0 : lc.patch / 4.0;
    out.push_back(lc);
  }
  return out;
}

// ---- config JSON -----------------------------------------------------------

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw ConfigError("unknown " + what + " key '" + k + "'");
    }
  }
}

inline std::pair<int, int> grid_pair(const nlohmann::json& j) {
  if (j.is_number_integer()) return {j.get<int>(), j.get<int>()};
  if (j.is_array() && j.size() == 2) return {j.at(0).get<int>(), j.at(1).get<int>()};
  throw ConfigError("grid must be an integer or [rows, cols]");
}

}  // namespace detail

inline AlignConfig align_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"whitening", "taper_frac", "exclusion_radius", "content_floor", "snr_stop_rel",
                          "max_iters_per_level", "snr_accept", "weighting", "bootstrap", "pair_passes", "link_distance", "whitening_search", "mesh_levels",
                          "jump_mad_factor", "jump_floor", "levels"},
                         "config");
  AlignConfig c;
  try {
    c.whitening = j.value("whitening", c.whitening);
    c.taper_frac = j.value("taper_frac", c.taper_frac);
    c.exclusion_radius = j.value("exclusion_radius", c.exclusion_radius);
    c.content_floor = j.value("content_floor", c.content_floor);
    c.snr_stop_rel = j.value("snr_stop_rel", c.snr_stop_rel);
    c.max_iters_per_level = j.value("max_iters_per_level", c.max_iters_per_level);
    c.snr_accept = j.value("snr_accept", c.snr_accept);
    c.pair_passes = j.value("pair_passes", c.pair_passes);
    c.link_distance = j.value("link_distance", c.link_distance);
    c.whitening_search = j.value("whitening_search", c.whitening_search);
    c.jump_mad_factor = j.value("jump_mad_factor", c.jump_mad_factor);
    c.jump_floor = j.value("jump_floor", c.jump_floor);
    c.mesh_levels = j.value("mesh_levels", c.mesh_levels);
    if (j.contains("weighting")) {
      const auto w = j.at("weighting").get<std::string>();
      if (w == "snr") {
        c.weighting = Weighting::snr;
      } else if (w == "none") {
        c.weighting = Weighting::none;
      } else {
        throw ConfigError("weighting must be 'snr' or 'none'");
      }
    }
    if (j.contains("bootstrap")) {
      const auto b = j.at("bootstrap").get<std::string>();
      if (b == "every-level") {
        c.bootstrap = Bootstrap::every_level;
      } else if (b == "coarsest") {
        c.bootstrap = Bootstrap::coarsest;
      } else if (b == "none") {
        c.bootstrap = Bootstrap::none;
      } else {
        throw ConfigError("bootstrap must be 'every-level', 'coarsest' or 'none'");
      }
    }
    if (j.contains("levels")) {
      for (const auto& jl : j.at("levels")) {
        detail::reject_unknown(jl, {"grid", "patch", "span", "max_offset", "margin", "mesh_grid", "whitening"}, "level");
        LevelConfig lc;
        if (jl.contains("grid")) std::tie(lc.grid_rows, lc.grid_cols) = detail::grid_pair(jl.at("grid"));
        lc.patch = jl.value("patch", lc.patch);
        if (jl.contains("span")) {
          const auto& s = jl.at("span");
          lc.span = s.is_array() ? s.get<std::vector<int>>() : std::vector<int>{s.get<int>()};
        }
        lc.max_offset = jl.value("max_offset", lc.max_offset);
        lc.margin = jl.value("margin", lc.margin);
        lc.whitening = jl.value("whitening", lc.whitening);
        if (jl.contains("mesh_grid")) std::tie(lc.mesh_rows, lc.mesh_cols) = detail::grid_pair(jl.at("mesh_grid"));
        c.levels.push_back(std::move(lc));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json align_config_to_json(const AlignConfig& c) {
  nlohmann::json j;
  j["whitening"] = c.whitening;
  j["taper_frac"] = c.taper_frac;
  j["exclusion_radius"] = c.exclusion_radius;
  j["content_floor"] = c.content_floor;
  j["snr_stop_rel"] = c.snr_stop_rel;
  j["max_iters_per_level"] = c.max_iters_per_level;
  j["snr_accept"] = c.snr_accept;
  j["weighting"] = c.weighting == Weighting::snr ? "snr" : "none";
  j["bootstrap"] = c.bootstrap == Bootstrap::every_level ? "every-level"
                   : c.bootstrap == Bootstrap::coarsest  ? "coarsest"
                                                         : "none";
  j["pair_passes"] = c.pair_passes;
  j["link_distance"] = c.link_distance;
  j["whitening_search"] = c.whitening_search;
  j["mesh_levels"] = c.mesh_levels;
  j["jump_mad_factor"] = c.jump_mad_factor;
  j["jump_floor"] = c.jump_floor;
  nlohmann::json lv = nlohmann::json::array();
  for (const auto& l : c.levels) {
    lv.push_back({{"grid", {l.grid_rows, l.grid_cols}},
                  {"patch", l.patch},
                  {"span", l.span},
                  {"max_offset", l.max_offset},
                  {"margin", l.margin},
                  {"mesh_grid", {l.mesh_rows, l.mesh_cols}},
                  {"whitening", l.whitening}});
  }
  j["levels"] = std::move(lv);
  return j;
}

inline AlignConfig load_align_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return align_config_from_json(j);
}

// ---- level state -----------------------------------------------------------

/// Working state of one pyramid level.  `affine` maps raw level coordinates
/// to the aligned frame; on mesh levels `mesh` (when set) is used for
/// rendering and `affine` is its whole-section approximation.
struct LevelState {
  int level = 0;
  int width = 0;
  int height = 0;
  int scale = 1;
  std::vector<Image> raw;
  std::vector<SectionStatus> status;
  std::vector<AffineTransform> affine;
  std::vector<std::optional<TriangleMesh>> mesh;
  std::vector<SectionDiagnostics> diag;

  int size() const { return static_cast<int>(raw.size()); }
  bool usable(int k) const { return status[static_cast<std::size_t>(k)] == SectionStatus::ok; }
  Warp warp(int k) const {
    const auto i = static_cast<std::size_t>(k);
    return mesh[i] ? Warp(*mesh[i]) : Warp(affine[i]);
  }
  std::set<int> exclusions() const {
    std::set<int> out;
    for (int k = 0; k < size(); ++k) {
      if (!usable(k)) out.insert(k);
    }
    return out;
  }
};

struct IterationStats {
  std::vector<double> snr;         ///< per section; 0 for sections not matched
  std::vector<int> contributors;   ///< model size per section
  double median_snr = 0.0;         ///< over usable sections
  double max_update = 0.0;         ///< largest mean-corner change of a usable section's affine, level px
};

namespace detail {

/// Uncovered pixels replaced by the mean of the covered ones; mask dropped.
inline Image fill_uncovered(const Image& img) {
  Image out = img;
  out.clear_mask();
  if (!img.has_mask()) return out;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (img.mask()[i]) {
      sum += img.pixels()[i];
      ++n;
    }
  }
  const double fill = n ? sum / static_cast<double>(n) : 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (!img.mask()[i]) out.pixels()[i] = fill;
  }
  return out;
}

inline double corner_change(const AffineTransform& a, const AffineTransform& b, int w, int h) {
  const std::array<Point2, 4> corners{{{0.0, 0.0}, {w - 1.0, 0.0}, {0.0, h - 1.0}, {w - 1.0, h - 1.0}}};
  double d = 0.0;
  for (const auto& c : corners) {
    const Point2 p = a.apply(c), q = b.apply(c);
    d += std::hypot(p.x - q.x, p.y - q.y);
  }
  return d / 4.0;
}

inline MatchParams match_params(const AlignConfig& cfg, const LevelConfig& lc) {
  MatchParams p;
  p.whitening = {lc.whitening >= 0.0 ? lc.whitening : cfg.whitening, 1e-6};
  p.taper_frac = cfg.taper_frac;
  p.max_offset = lc.max_offset;
  p.content_floor = cfg.content_floor;
  p.exclusion_radius = cfg.exclusion_radius;
  return p;
}

inline GridSpec grid_spec(const LevelConfig& lc, int w, int h) {
  return {lc.grid_rows, lc.grid_cols, lc.patch, lc.margin * std::min(w, h)};
}

inline double section_snr(const std::vector<MatchPoint>& pts) {
  std::vector<double> s;
  for (const auto& p : pts) {
    if (p.valid) s.push_back(p.snr);
  }
  return median(s);
}

inline int count_valid(const std::vector<MatchPoint>& pts) {
  return static_cast<int>(std::count_if(pts.begin(), pts.end(), [](const MatchPoint& p) { return p.valid; }));
}

}  // namespace detail

namespace detail {

/// Drops matches whose residual under a first fit exceeds
/// max(3 x the median residual, floor) and returns the survivors (invalid
/// points are passed through unchanged).  Falls back to the input when the
/// fit itself fails.
inline std::vector<MatchPoint> reject_outliers(std::vector<MatchPoint> pts, Weighting weighting, double floor) {
  AffineFit fit;
  try {
    fit = solve_affine(pts, weighting);
  } catch (const Error&) {
    return pts;
  }
  const double cut = std::max(3.0 * median(fit.residuals), floor);
  std::size_t r = 0;
  for (auto& p : pts) {
    if (!p.valid || !(p.snr > 0.0 || weighting == Weighting::none)) continue;
    if (fit.residuals[r++] > cut) p.valid = false;
  }
  return pts;
}

}  // namespace detail

/// Pairwise bootstrap.  Every usable section is matched against each of the
/// `link_distance` usable sections before it, and one sparse least-squares
/// solve finds the per-section corrections C_k that best satisfy
/// C_k(p + d) = C_j(p) over all link matches, with the first usable section
/// fixed.  Linking beyond the nearest neighbor keeps the error of the
/// composed placement from growing as a random walk down the stack.  The
/// match/solve cycle runs pair_passes times so the final matches sit near
/// zero offset.
inline void pairwise_bootstrap(LevelState& st, const LevelConfig& lc, const AlignConfig& cfg, int workers) {
  const int n = st.size();
  std::vector<int> order;
  for (int k = 0; k < n; ++k) {
    if (st.usable(k)) order.push_back(k);
  }
  const int m = static_cast<int>(order.size());
  if (m < 2) return;
  const MatchParams mp = detail::match_params(cfg, lc);
  const GridSpec grid = detail::grid_spec(lc, st.width, st.height);
  struct Link {
    int j, k;  // positions in `order`
    std::vector<MatchPoint> pts;
  };
  std::vector<Link> links;
  for (int i = 1; i < m; ++i) {
    for (int d = 1; d <= cfg.link_distance && i - d >= 0; ++d) links.push_back({i - d, i, {}});
  }
  const double cx = (st.width - 1) / 2.0, cy = (st.height - 1) / 2.0;
  const double sc = std::max(st.width, st.height) / 2.0;
  for (int pass = 0; pass < cfg.pair_passes; ++pass) {
    std::vector<Image> rendered(static_cast<std::size_t>(m));
    parallel_for(m, workers, [&](int i) {
      const auto k = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
      rendered[static_cast<std::size_t>(i)] = detail::fill_uncovered(render(st.raw[k], st.warp(static_cast<int>(k)), st.width, st.height));
    });
    parallel_for(static_cast<int>(links.size()), workers, [&](int l) {
      Link& lk = links[static_cast<std::size_t>(l)];
      lk.pts = detail::reject_outliers(grid_match(rendered[static_cast<std::size_t>(lk.j)], rendered[static_cast<std::size_t>(lk.k)], grid, mp),
                                       cfg.weighting, 0.5);
    });
    // unknowns: u = 6 displacement parameters per non-gauge section, with
    // C(x) = x + [u0 + u1 x' + u2 y', u3 + u4 x' + u5 y'], x' = (x - c) / sc
    const int unknowns = 6 * (m - 1);
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(unknowns);
    double total_w = 0.0;
    std::vector<std::array<double, 36>> blocks;
    for (const Link& lk : links) {
      for (const MatchPoint& p : lk.pts) {
        if (!p.valid) continue;
        const double w = cfg.weighting == Weighting::snr ? p.snr : 1.0;
        if (!(w > 0.0)) continue;
        total_w += w;
        // residual = d + L_k(q') - L_j(p'), per axis: basis rows
        const double qx = (p.cx + p.dx - cx) / sc, qy = (p.cy + p.dy - cy) / sc;
        const double px = (p.cx - cx) / sc, py = (p.cy - cy) / sc;
        const std::array<double, 3> bk{1.0, qx, qy}, bj{1.0, px, py};
        for (int axis = 0; axis < 2; ++axis) {
          const double d = axis == 0 ? p.dx : p.dy;
          // sparse row: +bk on k's block, -bj on j's block (gauge block omitted)
          std::vector<std::pair<int, double>> row;
          if (lk.k > 0) {
            for (int t = 0; t < 3; ++t) row.emplace_back(6 * (lk.k - 1) + 3 * axis + t, bk[static_cast<std::size_t>(t)]);
          }
          if (lk.j > 0) {
            for (int t = 0; t < 3; ++t) row.emplace_back(6 * (lk.j - 1) + 3 * axis + t, -bj[static_cast<std::size_t>(t)]);
          }
          for (const auto& [ia, va] : row) {
            rhs[ia] -= w * va * d;
            for (const auto& [ib, vb] : row) trip.emplace_back(ia, ib, w * va * vb);
          }
        }
      }
    }
    if (total_w <= 0.0) return;
    // light ridge keeps sections without links at zero correction
    const double ridge = 1e-9 * total_w;
    for (int i = 0; i < unknowns; ++i) trip.emplace_back(i, i, ridge);
    Eigen::SparseMatrix<double> normal(unknowns, unknowns);
    normal.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(normal);
    if (solver.info() != Eigen::Success) return;
    const Eigen::VectorXd u = solver.solve(rhs);
    if (solver.info() != Eigen::Success || !u.allFinite()) return;
    for (int i = 1; i < m; ++i) {
      const auto k = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
      const double* v = u.data() + 6 * (i - 1);
      AffineTransform c;
      c.a11 = 1.0 + v[1] / sc;
      c.a12 = v[2] / sc;
      c.tx = v[0] - v[1] * cx / sc - v[2] * cy / sc;
      c.a21 = v[4] / sc;
      c.a22 = 1.0 + v[5] / sc;
      c.ty = v[3] - v[4] * cx / sc - v[5] * cy / sc;
      if (!(std::abs(c.det()) > kMinAbsDet)) continue;
      st.affine[k] = compose(c, st.affine[k]);
      st.mesh[k].reset();
    }
  }
}

/// Whitening exponent for a level.  Without a search list this is the
/// level override or the global default.  With one, up to eight evenly
/// spaced usable sections are matched against their span_at(0) models at
/// every candidate exponent, and the candidate with the highest median SNR
/// over all valid matches wins (ties keep the earlier candidate).
inline double choose_whitening(const LevelState& st, const LevelConfig& lc, const AlignConfig& cfg, int workers) {
  const double fixed = lc.whitening >= 0.0 ? lc.whitening : cfg.whitening;
  if (cfg.whitening_search.empty()) return fixed;
  const int n = st.size();
  std::vector<int> usable;
  for (int k = 0; k < n; ++k) {
    if (st.usable(k)) usable.push_back(k);
  }
  if (usable.size() < 2) return fixed;
  const std::size_t probes = std::min<std::size_t>(8, usable.size());
  std::vector<int> probe;
  for (std::size_t i = 0; i < probes; ++i) probe.push_back(usable[(2 * i + 1) * usable.size() / (2 * probes)]);

  ModelSpec ms;
  ms.span = lc.span_at(0);
  ms.exclusions = st.exclusions();
  std::vector<Image> rendered(static_cast<std::size_t>(n));
  std::vector<bool> needed(static_cast<std::size_t>(n), false);
  for (int k : probe) {
    needed[static_cast<std::size_t>(k)] = true;
    for (int i : model_contributors(n, k, ms)) needed[static_cast<std::size_t>(i)] = true;
  }
  parallel_for(n, workers, [&](int k) {
    if (needed[static_cast<std::size_t>(k)]) {
      rendered[static_cast<std::size_t>(k)] = render(st.raw[static_cast<std::size_t>(k)], st.warp(k), st.width, st.height);
    }
  });
  std::vector<Image> models(probe.size()), targets(probe.size());
  parallel_for(static_cast<int>(probe.size()), workers, [&](int i) {
    const int k = probe[static_cast<std::size_t>(i)];
    const auto idx = model_contributors(n, k, ms);
    if (idx.empty()) return;
    std::vector<const Image*> imgs;
    for (int c : idx) imgs.push_back(&rendered[static_cast<std::size_t>(c)]);
    models[static_cast<std::size_t>(i)] = detail::fill_uncovered(z_average(imgs));
    targets[static_cast<std::size_t>(i)] = detail::fill_uncovered(rendered[static_cast<std::size_t>(k)]);
  });
  const GridSpec grid = detail::grid_spec(lc, st.width, st.height);
  double best_w = fixed, best_snr = -1.0;
  for (double w : cfg.whitening_search) {
    LevelConfig trial = lc;
    trial.whitening = w;
    const MatchParams mp = detail::match_params(cfg, trial);
    std::vector<std::vector<double>> snrs(probe.size());
    parallel_for(static_cast<int>(probe.size()), workers, [&](int i) {
      const auto ui = static_cast<std::size_t>(i);
      if (models[ui].empty()) return;
      for (const auto& p : grid_match(models[ui], targets[ui], grid, mp)) {
        if (p.valid) snrs[ui].push_back(p.snr);
      }
    });
    std::vector<double> all;
    for (const auto& v : snrs) all.insert(all.end(), v.begin(), v.end());
    if (all.empty()) continue;
    const double m = median(all);
    if (m > best_snr) {
      best_snr = m;
      best_w = w;
    }
  }
  return best_w;
}

/// One bulk-synchronous iteration: render every section with its current
/// warp, then for each usable section build the model from its rendered
/// neighbors, match, solve and update.  Damaged, interpolated and skipped
/// sections are neither matched nor used in models.
inline IterationStats iterate_level(LevelState& st, const LevelConfig& lc, const AlignConfig& cfg, int iteration,
                                    int workers) {
  const int n = st.size();
  const bool mesh_level = cfg.is_mesh_level(st.level);
  std::vector<Image> rendered(static_cast<std::size_t>(n));
  parallel_for(n, workers, [&](int k) {
    if (st.usable(k)) rendered[static_cast<std::size_t>(k)] = render(st.raw[static_cast<std::size_t>(k)], st.warp(k), st.width, st.height);
  });
  ModelSpec ms;
  ms.span = lc.span_at(iteration);
  ms.exclusions = st.exclusions();
  const MatchParams mp = detail::match_params(cfg, lc);
  const GridSpec grid = detail::grid_spec(lc, st.width, st.height);
  const int mesh_rows = lc.mesh_rows > 0 ? lc.mesh_rows : lc.grid_rows;
  const int mesh_cols = lc.mesh_cols > 0 ? lc.mesh_cols : lc.grid_cols;

  IterationStats stats;
  stats.snr.assign(static_cast<std::size_t>(n), 0.0);
  stats.contributors.assign(static_cast<std::size_t>(n), 0);
  std::vector<AffineTransform> new_affine = st.affine;
  std::vector<std::optional<TriangleMesh>> new_mesh = st.mesh;
  std::vector<SectionDiagnostics> new_diag = st.diag;
  parallel_for(n, workers, [&](int k) {
    if (!st.usable(k)) return;
    const auto uk = static_cast<std::size_t>(k);
    const auto idx = model_contributors(n, k, ms);
    stats.contributors[uk] = static_cast<int>(idx.size());
    SectionDiagnostics& d = new_diag[uk];
    d.contributors = static_cast<int>(idx.size());
    if (idx.empty()) {
      d.valid_matches = 0;
      d.snr = 0.0;
      return;
    }
    std::vector<const Image*> imgs;
    for (int i : idx) imgs.push_back(&rendered[static_cast<std::size_t>(i)]);
    const Image model = detail::fill_uncovered(z_average(imgs));
    // mesh levels match against the affine rendering so each mesh is solved
    // fresh relative to the current affine
    const Image target = detail::fill_uncovered(
        mesh_level && st.mesh[uk] ? render(st.raw[uk], st.affine[uk], st.width, st.height) : rendered[uk]);
    const auto pts = detail::reject_outliers(grid_match(model, target, grid, mp), cfg.weighting, 0.5);
    d.valid_matches = detail::count_valid(pts);
    d.snr = detail::section_snr(pts);
    stats.snr[uk] = d.snr;
    AffineFit fit;
    try {
      fit = solve_affine(pts, cfg.weighting);
    } catch (const Error&) {
      return;  // too few or degenerate matches: keep the current transform
    }
    d.residual_rms = fit.rms;
    const AffineTransform base = st.affine[uk];
    new_affine[uk] = compose(invert(fit.transform), base);
    new_mesh[uk].reset();
    d.mesh_fallback = false;
    if (mesh_level) {
      try {
        const MeshBuild mb = build_mesh(Rect::of_image(st.width, st.height), mesh_rows, mesh_cols, pts, cfg.weighting);
        if (mb.mesh.orientation_preserving()) {
          TriangleMesh warp = mb.mesh.inverted().composed_with(base);
          warp.fallback() = mb.mesh.fallback();
          if (warp.orientation_preserving()) {
            new_mesh[uk] = std::move(warp);
            d.mesh_fallback = mb.fallback_count > 0;
          } else {
            d.mesh_fallback = true;
          }
        } else {
          d.mesh_fallback = true;
        }
      } catch (const Error&) {
        d.mesh_fallback = true;
      }
    }
  });
  std::vector<double> usable_snr;
  for (int k = 0; k < n; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    if (!st.usable(k)) continue;
    usable_snr.push_back(stats.snr[uk]);
    stats.max_update = std::max(stats.max_update, detail::corner_change(st.affine[uk], new_affine[uk], st.width, st.height));
  }
  stats.median_snr = median(usable_snr);
  st.affine = std::move(new_affine);
  st.mesh = std::move(new_mesh);
  st.diag = std::move(new_diag);
  return stats;
}

/// Sections whose translation (at the image center) departs from the median
/// of its 5-neighborhood by more than mad_factor times the neighborhood's
/// median absolute deviation and by more than `floor` pixels.
inline std::vector<bool> detect_jumps(const std::vector<AffineTransform>& chain, const std::vector<bool>& eligible,
                                      Point2 center, double mad_factor, double floor) {
  const int n = static_cast<int>(chain.size());
  std::vector<bool> out(static_cast<std::size_t>(n), false);
  std::vector<int> idx;
  for (int k = 0; k < n; ++k) {
    if (eligible[static_cast<std::size_t>(k)]) idx.push_back(k);
  }
  const int m = static_cast<int>(idx.size());
  if (m < 5) return out;
  for (int axis = 0; axis < 2; ++axis) {
    std::vector<double> t;
    for (int k : idx) {
      const Point2 p = chain[static_cast<std::size_t>(k)].apply(center);
      t.push_back(axis == 0 ? p.x - center.x : p.y - center.y);
    }
    for (int i = 0; i < m; ++i) {
      const int lo = std::clamp(i - 2, 0, m - 5);
      std::vector<double> win(t.begin() + lo, t.begin() + lo + 5);
      const double med = median(win);
      std::vector<double> dev;
      for (double v : win) dev.push_back(std::abs(v - med));
      const double mad = median(dev);
      const double d = std::abs(t[static_cast<std::size_t>(i)] - med);
      if (d > mad_factor * mad && d > floor) out[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = true;
    }
  }
  return out;
}

/// Replaces every maximal run of sections in `bad` by bridge_gap over the
/// usable anchors around it.  A run with no anchor on one side holds the
/// nearest anchor's transform instead.  Returns the ids of replaced
/// sections.
inline std::vector<int> bridge_runs(std::vector<AffineTransform>& chain, const std::vector<bool>& bad,
                                    const std::vector<bool>& anchor) {
  const int n = static_cast<int>(chain.size());
  std::vector<int> replaced;
  for (int k = 0; k < n;) {
    if (!bad[static_cast<std::size_t>(k)]) {
      ++k;
      continue;
    }
    int last = k;
    while (last + 1 < n && bad[static_cast<std::size_t>(last) + 1]) ++last;
    int before = k - 1, after = last + 1;
    while (before >= 0 && !anchor[static_cast<std::size_t>(before)]) --before;
    while (after < n && !anchor[static_cast<std::size_t>(after)]) ++after;
    if (before >= 0 && after < n) {
      // shrink the run to the anchors actually usable on each side
      const int first = before + 1, end = after - 1;
      chain = bridge_gap(std::move(chain), first, end, anchor);
      for (int j = first; j <= end; ++j) {
        if (bad[static_cast<std::size_t>(j)]) replaced.push_back(j);
      }
    } else if (before >= 0 || after < n) {
      const AffineTransform hold = chain[static_cast<std::size_t>(before >= 0 ? before : after)];
      for (int j = k; j <= last; ++j) {
        chain[static_cast<std::size_t>(j)] = hold;
        replaced.push_back(j);
      }
    }
    k = last + 1;
  }
  return replaced;
}

// ---- driver ----------------------------------------------------------------

struct LevelLog {
  int level = 0;
  std::vector<double> median_snr;  ///< per iteration
  std::vector<double> max_update;  ///< per iteration, level px
  double whitening = 0.0;          ///< exponent used on this level
};

struct AlignOptions {
  int workers = 1;
  std::uint64_t seed = 0;  ///< recorded for provenance; the aligner draws no random numbers
  std::ostream* log = nullptr;
  std::optional<std::filesystem::path> checkpoint;  ///< manifest rewritten here after each level
};

struct AlignResult {
  StackManifest manifest;
  std::vector<LevelLog> levels;
};

inline std::vector<Image> load_stack_images(const StackManifest& m) {
  std::vector<Image> out;
  out.reserve(m.sections.size());
  for (const auto& s : m.sections) {
    if (s.status == SectionStatus::skipped) {
      out.emplace_back();
      continue;
    }
    out.push_back(load_image(m.resolve(s.source_path)));
  }
  return out;
}

/// Effective schedule (coarsest first) for a stack of the given size.
inline std::vector<LevelConfig> resolve_level_configs(const AlignConfig& cfg, const PyramidSpec& levels, int width,
                                                      int height) {
  std::vector<std::pair<int, int>> dims;
  for (int l = levels.levels() - 1; l >= 0; --l) {
    int w = width, h = height;
    for (int k = 0; k < l; ++k) {
      w /= levels.factors[static_cast<std::size_t>(k)];
      h /= levels.factors[static_cast<std::size_t>(k)];
    }
    dims.emplace_back(w, h);
  }
  std::vector<LevelConfig> out = cfg.levels.empty() ? default_level_configs(dims) : std::vector<LevelConfig>{};
  if (out.empty()) {
    for (std::size_t i = 0; i < dims.size(); ++i) out.push_back(cfg.level_config(static_cast<int>(i)));
  }
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const auto [w, h] = dims[i];
    try {
      grid_origins(w, h, detail::grid_spec(out[i], w, h));
    } catch (const Error& e) {
      throw ConfigError(std::string("level schedule does not fit the image: ") + e.what());
    }
  }
  return out;
}

/// Aligns the stack coarsest level first.  `images` are the full-resolution
/// sections in manifest order (skipped sections may be empty images).
inline AlignResult align_stack(StackManifest manifest, const std::vector<Image>& images, const AlignConfig& cfg,
                               const AlignOptions& opt = {}) {
  cfg.validate();
  manifest.validate();
  const int n = static_cast<int>(manifest.sections.size());
  if (n == 0) throw ConfigError("manifest has no sections");
  if (static_cast<int>(images.size()) != n) throw Error("align_stack: image count does not match manifest");
  int width = 0, height = 0;
  for (int k = 0; k < n; ++k) {
    if (manifest.sections[static_cast<std::size_t>(k)].status == SectionStatus::skipped) continue;
    const Image& img = images[static_cast<std::size_t>(k)];
    if (width == 0) {
      width = img.width();
      height = img.height();
    } else if (img.width() != width || img.height() != height) {
      throw Error("align_stack: sections differ in size");
    }
    if (!img.all_finite()) throw Error("align_stack: section " + std::to_string(manifest.sections[static_cast<std::size_t>(k)].id) + " has non-finite pixels");
  }
  if (width == 0) throw ConfigError("manifest has no sections to align");
  const PyramidSpec& pyr = manifest.levels;
  pyr.validate_for(width, height);
  const std::vector<LevelConfig> schedule = resolve_level_configs(cfg, pyr, width, height);
  const int nlev = pyr.levels();

  // per-section pyramids
  std::vector<std::vector<Image>> pyramids(static_cast<std::size_t>(n));
  parallel_for(n, opt.workers, [&](int k) {
    const auto uk = static_cast<std::size_t>(k);
    if (manifest.sections[uk].status == SectionStatus::skipped) return;
    pyramids[uk] = pyr.factors.empty() ? std::vector<Image>{images[uk]} : build_pyramid(images[uk], pyr);
  });

  AlignResult result;
  std::vector<SectionStatus> status;
  for (const auto& s : manifest.sections) {
    // sections replaced by interpolation in an earlier run stay out of the models
    status.push_back(s.status == SectionStatus::ok ? SectionStatus::ok
                     : s.status == SectionStatus::skipped ? SectionStatus::skipped
                                                          : SectionStatus::damaged);
  }
  for (auto& s : manifest.sections) {
    s.transform_chain.clear();
    s.diagnostics = {};
  }
  manifest.completed_levels.clear();

  LevelState st;
  for (int li = 0; li < nlev; ++li) {
    const int level = nlev - 1 - li;
    LevelState next;
    next.level = level;
    next.scale = pyr.scale_of(level);
    next.status = status;
    next.raw.resize(static_cast<std::size_t>(n));
    next.diag.resize(static_cast<std::size_t>(n));
    next.mesh.resize(static_cast<std::size_t>(n));
    next.affine.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      const auto uk = static_cast<std::size_t>(k);
      if (status[uk] == SectionStatus::skipped) continue;
      next.raw[uk] = pyramids[uk][static_cast<std::size_t>(level)];
      next.width = next.raw[uk].width();
      next.height = next.raw[uk].height();
      if (li == 0) {
        next.affine[uk] = manifest.global_constraint ? downscale_transform(*manifest.global_constraint, next.scale)
                                                     : AffineTransform::identity();
      } else {
        next.affine[uk] = upscale(st.affine[uk], pyr.factors[static_cast<std::size_t>(level)]);
      }
    }
    st = std::move(next);

    LevelLog log;
    log.level = level;
    if (cfg.bootstrap == Bootstrap::every_level || (cfg.bootstrap == Bootstrap::coarsest && li == 0)) {
      pairwise_bootstrap(st, schedule[static_cast<std::size_t>(li)], cfg, opt.workers);
    }
    LevelConfig lc = schedule[static_cast<std::size_t>(li)];
    lc.whitening = choose_whitening(st, lc, cfg, opt.workers);
    log.whitening = lc.whitening;
    if (opt.log && !cfg.whitening_search.empty()) *opt.log << "level " << level << " whitening " << lc.whitening << "\n";
    for (int it = 0; it < cfg.max_iters_per_level; ++it) {
      const IterationStats s = iterate_level(st, lc, cfg, it, opt.workers);
      log.median_snr.push_back(s.median_snr);
      log.max_update.push_back(s.max_update);
      if (opt.log) {
        *opt.log << "level " << level << " iteration " << it << ": median SNR " << s.median_snr << ", max update "
                 << s.max_update << " px\n";
      }
      if (it >= 1) {
        const double prev = log.median_snr[log.median_snr.size() - 2];
        if (prev > 0.0 && std::abs(s.median_snr - prev) / prev < cfg.snr_stop_rel) break;
      }
    }

    std::vector<int> failed;
    for (int k = 0; k < n; ++k) {
      const auto uk = static_cast<std::size_t>(k);
      if (!st.usable(k)) continue;
      st.diag[uk].low_confidence = st.diag[uk].snr < cfg.snr_accept;
      if (li == 0 && st.diag[uk].valid_matches == 0) failed.push_back(manifest.sections[uk].id);
    }
    if (!failed.empty()) {
      std::string ids;
      for (int id : failed) ids += (ids.empty() ? "" : " ") + std::to_string(id);
      throw AlignmentFailure("no valid matches at the coarsest level for sections " + ids, failed);
    }

    // jumps among usable sections, then bridge jumps and damaged runs
    std::vector<bool> usable(static_cast<std::size_t>(n)), bad(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) usable[static_cast<std::size_t>(k)] = st.usable(k);
    const Point2 center{(st.width - 1) / 2.0, (st.height - 1) / 2.0};
    const auto jumps = detect_jumps(st.affine, usable, center, cfg.jump_mad_factor, cfg.jump_floor / st.scale);
    std::vector<bool> anchor = usable;
    for (int k = 0; k < n; ++k) {
      const auto uk = static_cast<std::size_t>(k);
      if (jumps[uk]) {
        st.diag[uk].jump = true;
        anchor[uk] = false;
      }
      bad[uk] = status[uk] == SectionStatus::damaged || jumps[uk];
    }
    const auto replaced = bridge_runs(st.affine, bad, anchor);
    for (int k : replaced) st.mesh[static_cast<std::size_t>(k)].reset();

    for (int k = 0; k < n; ++k) {
      const auto uk = static_cast<std::size_t>(k);
      if (status[uk] == SectionStatus::skipped) continue;
      TransformEntry e;
      e.level = level;
      e.affine = st.affine[uk];
      e.mesh = st.mesh[uk];
      auto& sec = manifest.sections[uk];
      sec.transform_chain.push_back(std::move(e));
      sec.diagnostics = st.diag[uk];
      if (bad[uk]) sec.status = SectionStatus::interpolated;
    }
    manifest.completed_levels.push_back(level);
    result.levels.push_back(std::move(log));
    if (opt.checkpoint) save_manifest(*opt.checkpoint, manifest);
  }
  result.manifest = std::move(manifest);
  return result;
}

inline AlignResult align_stack(const StackManifest& manifest, const AlignConfig& cfg, const AlignOptions& opt = {}) {
  return align_stack(manifest, load_stack_images(manifest), cfg, opt);
}

/// Left-composes `constraint` (full-resolution coordinates) onto every
/// section's top-of-chain transform and records it as the global
/// constraint.  Meshes cannot absorb a general left factor on their grid, so
/// a constrained mesh entry keeps only its (constrained) affine.  The
/// identity leaves the manifest untouched.
inline StackManifest apply_constraint(StackManifest m, const AffineTransform& constraint) {
  if (!(std::abs(constraint.det()) > kMinAbsDet)) throw ConfigError("constraint transform is singular");
  if (constraint == AffineTransform::identity()) return m;
  m.global_constraint = m.global_constraint ? compose(constraint, *m.global_constraint) : constraint;
  for (auto& s : m.sections) {
    if (s.transform_chain.empty()) continue;
    auto& top = s.transform_chain.back();
    const AffineTransform c = downscale_transform(constraint, m.levels.scale_of(top.level));
    top.affine = compose(c, top.affine);
    top.mesh.reset();
  }
  return m;
}

// ---- report ----------------------------------------------------------------

struct ReportBundle {
  nlohmann::json summary;
  Image xz;  ///< row k = the middle row of section k's rendering
  Image yz;  ///< row k = the middle column of section k's rendering
  std::vector<double> xz_steps;  ///< mean |row k - row k-1| of the XZ cut
  std::vector<double> yz_steps;
};

/// Mean absolute difference between consecutive rows of a cut over pixels
/// covered in both; entry k-1 belongs to the boundary between rows k-1 and k.
inline std::vector<double> cut_steps(const Image& cut) {
  std::vector<double> out;
  for (int k = 1; k < cut.height(); ++k) {
    double s = 0.0;
    int n = 0;
    for (int x = 0; x < cut.width(); ++x) {
      if (!cut.covered(x, k) || !cut.covered(x, k - 1)) continue;
      s += std::abs(cut.at(x, k) - cut.at(x, k - 1));
      ++n;
    }
    out.push_back(n ? s / n : 0.0);
  }
  return out;
}

/// Largest boundary step relative to the median step; 0 if undefined.
inline double discontinuity_ratio(const std::vector<double>& steps) {
  if (steps.empty()) return 0.0;
  const double med = median(steps);
  const double mx = *std::max_element(steps.begin(), steps.end());
  return med > 0.0 ? mx / med : 0.0;
}

/// Cut planes through the given per-section images (already in a common frame).
inline std::pair<Image, Image> cut_planes(const std::vector<Image>& rendered) {
  const Image* first = nullptr;
  for (const auto& r : rendered) {
    if (!r.empty()) {
      first = &r;
      break;
    }
  }
  if (!first) throw Error("cut_planes: no images");
  const int w = first->width(), h = first->height(), n = static_cast<int>(rendered.size());
  Image xz(w, n), yz(h, n);
  std::vector<std::uint8_t> mx(xz.size(), 0), my(yz.size(), 0);
  for (int k = 0; k < n; ++k) {
    const Image& r = rendered[static_cast<std::size_t>(k)];
    if (r.empty()) continue;
    for (int x = 0; x < w; ++x) {
      xz.at(x, k) = r.at(x, h / 2);
      mx[static_cast<std::size_t>(k) * w + x] = r.covered(x, h / 2);
    }
    for (int y = 0; y < h; ++y) {
      yz.at(y, k) = r.at(w / 2, y);
      my[static_cast<std::size_t>(k) * h + y] = r.covered(w / 2, y);
    }
  }
  xz.set_mask(std::move(mx));
  yz.set_mask(std::move(my));
  return {std::move(xz), std::move(yz)};
}

/// Diagnostics of an aligned manifest: per-section table, low-confidence and
/// interpolated lists, and XZ/YZ cuts through the stack rendered at the
/// finest completed level.
inline ReportBundle report(const StackManifest& m, const std::vector<Image>& images, int workers = 1) {
  if (m.completed_levels.empty()) throw Error("report: manifest has no completed level");
  if (images.size() != m.sections.size()) throw Error("report: image count does not match manifest");
  const int level = *std::min_element(m.completed_levels.begin(), m.completed_levels.end());
  const int n = static_cast<int>(m.sections.size());
  std::vector<Image> rendered(static_cast<std::size_t>(n));
  parallel_for(n, workers, [&](int k) {
    const auto uk = static_cast<std::size_t>(k);
    const Section& s = m.sections[uk];
    const TransformEntry* e = s.at_level(level);
    if (!e || images[uk].empty()) return;
    Image src = images[uk];
    for (int l = 0; l < level; ++l) src = downscale(src, m.levels.factors[static_cast<std::size_t>(l)]);
    rendered[uk] = render(src, e->warp(), src.width(), src.height());
  });
  ReportBundle b;
  std::tie(b.xz, b.yz) = cut_planes(rendered);
  b.xz_steps = cut_steps(b.xz);
  b.yz_steps = cut_steps(b.yz);

  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json low = nlohmann::json::array(), interp = nlohmann::json::array();
  for (const auto& s : m.sections) {
    const auto& d = s.diagnostics;
    rows.push_back({{"id", s.id},
                    {"status", to_string(s.status)},
                    {"snr", d.snr},
                    {"residual_rms", d.residual_rms},
                    {"valid_matches", d.valid_matches},
                    {"contributors", d.contributors},
                    {"low_confidence", d.low_confidence},
                    {"mesh_fallback", d.mesh_fallback},
                    {"jump", d.jump}});
    if (d.low_confidence) low.push_back(s.id);
    if (s.status == SectionStatus::interpolated) interp.push_back(s.id);
  }
  b.summary["level"] = level;
  b.summary["sections"] = std::move(rows);
  b.summary["low_confidence"] = std::move(low);
  b.summary["interpolated"] = std::move(interp);
  b.summary["cuts"] = {{"xz_steps", b.xz_steps},
                       {"yz_steps", b.yz_steps},
                       {"xz_discontinuity", discontinuity_ratio(b.xz_steps)},
                       {"yz_discontinuity", discontinuity_ratio(b.yz_steps)}};
  return b;
}

/// Writes report.json, xz.pgm and yz.pgm into out_dir.
inline void write_report(const ReportBundle& b, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "report.json", std::ios::trunc);
    if (!out) throw Error("cannot write " + (out_dir / "report.json").string());
    out << b.summary.dump(2) << '\n';
  }
  write_pgm8(out_dir / "xz.pgm", b.xz);
  write_pgm8(out_dir / "yz.pgm", b.yz);
}

}  // namespace swiftreg

#endif  // SWIFTREG_PIPELINE_HPP
