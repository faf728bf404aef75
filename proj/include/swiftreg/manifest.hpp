#ifndef SWIFTREG_MANIFEST_HPP
#define SWIFTREG_MANIFEST_HPP

// Stack manifest: the pipeline's persistent state, stored as one JSON document.

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "affine.hpp"
#include "error.hpp"
#include "image_io.hpp"
#include "transform.hpp"

namespace swiftreg {

enum class SectionStatus { ok, damaged, skipped, interpolated };

inline std::string to_string(SectionStatus s) {
  switch (s) {
    case SectionStatus::ok: return "ok";
    case SectionStatus::damaged: return "damaged";
    case SectionStatus::skipped: return "skipped";
    case SectionStatus::interpolated: return "interpolated";
  }
  return "ok";
}

inline SectionStatus status_from_string(const std::string& s) {
  if (s == "ok") return SectionStatus::ok;
  if (s == "damaged") return SectionStatus::damaged;
  if (s == "skipped") return SectionStatus::skipped;
  if (s == "interpolated") return SectionStatus::interpolated;
  throw ConfigError("unknown section status '" + s + "'");
}

/// Transform of one section at one pyramid level, mapping raw section
/// coordinates to the aligned frame.  When a mesh is present it is used for
/// rendering and `affine` holds the whole-section approximation.
struct TransformEntry {
  int level = 0;
  AffineTransform affine;
  std::optional<TriangleMesh> mesh;

  Warp warp() const { return mesh ? Warp(*mesh) : Warp(affine); }
};

struct SectionDiagnostics {
  double snr = 0.0;            ///< median SNR of the section's valid matches, last iteration
  double residual_rms = 0.0;   ///< affine fit residual, level pixels
  int valid_matches = 0;
  int contributors = 0;        ///< model size used in the last iteration
  bool low_confidence = false;
  bool mesh_fallback = false;  ///< mesh rejected (fold-over) or triangles on fallback
  bool jump = false;           ///< flagged by the jump detector and bridged
};

struct Section {
  int id = 0;
  std::string source_path;
  SectionStatus status = SectionStatus::ok;
  std::vector<TransformEntry> transform_chain;
  SectionDiagnostics diagnostics;

  /// Transform recorded for `level`, if any.
  const TransformEntry* at_level(int level) const {
    for (auto it = transform_chain.rbegin(); it != transform_chain.rend(); ++it) {
      if (it->level == level) return &*it;
    }
    return nullptr;
  }
};

struct StackManifest {
  std::vector<Section> sections;
  PyramidSpec levels;
  std::optional<AffineTransform> global_constraint;
  std::vector<int> completed_levels;  ///< in completion order (coarsest first)
  std::filesystem::path base_dir;     ///< directory that source paths are relative to; not serialized

  std::filesystem::path resolve(const std::string& source) const {
    const std::filesystem::path p(source);
    return p.is_absolute() ? p : base_dir / p;
  }

  void validate() const {
    for (std::size_t i = 1; i < sections.size(); ++i) {
      if (sections[i].id <= sections[i - 1].id) throw ConfigError("manifest section ids must be strictly increasing");
    }
  }
};

// ---- JSON ----------------------------------------------------------------

inline nlohmann::json affine_to_json(const AffineTransform& a) {
  const auto p = a.params();
  return nlohmann::json(std::vector<double>(p.begin(), p.end()));
}

inline AffineTransform affine_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 6) throw ConfigError("affine must be an array of 6 numbers");
  std::array<double, 6> p{};
  for (std::size_t i = 0; i < 6; ++i) p[i] = j.at(i).get<double>();
  return AffineTransform::from_params(p);
}

inline nlohmann::json mesh_to_json(const TriangleMesh& m) {
  nlohmann::json j;
  j["rect"] = {m.rect().x0, m.rect().y0, m.rect().width, m.rect().height};
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  nlohmann::json pts = nlohmann::json::array();
  for (int r = 0; r <= m.rows(); ++r) {
    for (int c = 0; c <= m.cols(); ++c) {
      const Point2 p = m.control_point(r, c);
      pts.push_back({p.x, p.y});
    }
  }
  j["control_points"] = std::move(pts);
  nlohmann::json aff = nlohmann::json::array();
  for (const auto& a : m.affines()) aff.push_back(affine_to_json(a));
  j["affines"] = std::move(aff);
  return j;
}

inline TriangleMesh mesh_from_json(const nlohmann::json& j) {
  const auto& r = j.at("rect");
  std::vector<AffineTransform> aff;
  for (const auto& a : j.at("affines")) aff.push_back(affine_from_json(a));
  return TriangleMesh(Rect{r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>()},
                      j.at("rows").get<int>(), j.at("cols").get<int>(), std::move(aff));
}

inline nlohmann::json manifest_to_json(const StackManifest& m) {
  nlohmann::json j;
  j["levels"] = m.levels.factors;
  j["global_constraint"] = m.global_constraint ? affine_to_json(*m.global_constraint) : nlohmann::json(nullptr);
  j["completed_levels"] = m.completed_levels;
  nlohmann::json secs = nlohmann::json::array();
  for (const auto& s : m.sections) {
    nlohmann::json js;
    js["id"] = s.id;
    js["source_path"] = s.source_path;
    js["status"] = to_string(s.status);
    nlohmann::json chain = nlohmann::json::array();
    for (const auto& e : s.transform_chain) {
      nlohmann::json je;
      je["level"] = e.level;
      je["affine"] = affine_to_json(e.affine);
      if (e.mesh) je["mesh"] = mesh_to_json(*e.mesh);
      chain.push_back(std::move(je));
    }
    js["transform_chain"] = std::move(chain);
    const auto& d = s.diagnostics;
    js["diagnostics"] = {{"snr", d.snr},
                         {"residual_rms", d.residual_rms},
                         {"valid_matches", d.valid_matches},
                         {"contributors", d.contributors},
                         {"low_confidence", d.low_confidence},
                         {"mesh_fallback", d.mesh_fallback},
                         {"jump", d.jump}};
    secs.push_back(std::move(js));
  }
  j["sections"] = std::move(secs);
  return j;
}

inline StackManifest manifest_from_json(const nlohmann::json& j) {
  StackManifest m;
  try {
    m.levels.factors = j.value("levels", std::vector<int>{});
    if (j.contains("global_constraint") && !j.at("global_constraint").is_null()) {
      m.global_constraint = affine_from_json(j.at("global_constraint"));
    }
    m.completed_levels = j.value("completed_levels", std::vector<int>{});
    for (const auto& js : j.at("sections")) {
      Section s;
      s.id = js.at("id").get<int>();
      s.source_path = js.at("source_path").get<std::string>();
      s.status = status_from_string(js.value("status", std::string("ok")));
      for (const auto& je : js.value("transform_chain", nlohmann::json::array())) {
        TransformEntry e;
        e.level = je.at("level").get<int>();
        e.affine = affine_from_json(je.at("affine"));
        if (je.contains("mesh")) e.mesh = mesh_from_json(je.at("mesh"));
        s.transform_chain.push_back(std::move(e));
      }
      if (js.contains("diagnostics")) {
        const auto& d = js.at("diagnostics");
        s.diagnostics.snr = d.value("snr", 0.0);
        s.diagnostics.residual_rms = d.value("residual_rms", 0.0);
        s.diagnostics.valid_matches = d.value("valid_matches", 0);
        s.diagnostics.contributors = d.value("contributors", 0);
        s.diagnostics.low_confidence = d.value("low_confidence", false);
        s.diagnostics.mesh_fallback = d.value("mesh_fallback", false);
        s.diagnostics.jump = d.value("jump", false);
      }
      m.sections.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

inline StackManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  StackManifest m = manifest_from_json(j);
  m.base_dir = path.parent_path();
  return m;
}

/// Writes via a temporary file and rename so readers never see a partial file.
inline void save_manifest(const std::filesystem::path& path, const StackManifest& m) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << manifest_to_json(m).dump(2) << '\n';
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace swiftreg

#endif  // SWIFTREG_MANIFEST_HPP
