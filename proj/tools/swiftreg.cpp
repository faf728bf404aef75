// swiftreg command-line front end: one subcommand per stage.

#include <CLI11.hpp>
#include <json.hpp>

#include <swiftreg/swiftreg.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace swiftreg;

namespace {

std::pair<int, int> parse_grid(const std::string& s) {
  int r = 0, c = 0;
  char x = 0;
  std::istringstream in(s);
  if (!(in >> r >> x >> c) || (x != 'x' && x != 'X') || r < 1 || c < 1) {
    throw ConfigError("grid must look like 4x4, got '" + s + "'");
  }
  return {r, c};
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("not an integer list: '" + s + "'");
    }
  }
  return out;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + " is not valid JSON: " + e.what());
  }
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << '\n';
}

nlohmann::json points_to_json(const std::vector<MatchPoint>& pts) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : pts) {
    a.push_back({{"cx", p.cx}, {"cy", p.cy}, {"dx", p.dx}, {"dy", p.dy}, {"snr", p.snr}, {"valid", p.valid}});
  }
  return a;
}

std::vector<MatchPoint> points_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("matches file must hold a JSON array");
  std::vector<MatchPoint> out;
  try {
    for (const auto& e : j) {
      MatchPoint p;
      p.cx = e.at("cx").get<double>();
      p.cy = e.at("cy").get<double>();
      p.dx = e.at("dx").get<double>();
      p.dy = e.at("dy").get<double>();
      p.snr = e.at("snr").get<double>();
      p.valid = e.at("valid").get<bool>();
      out.push_back(p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed match point: ") + e.what());
  }
  return out;
}

/// Section images in full-resolution aligned coordinates, using each
/// section's finest completed level (raw images if nothing is aligned).
std::vector<Image> rendered_stack(const StackManifest& m, const std::vector<Image>& images) {
  const int level = m.completed_levels.empty() ? -1 : *std::min_element(m.completed_levels.begin(), m.completed_levels.end());
  std::vector<Image> out;
  for (std::size_t k = 0; k < m.sections.size(); ++k) {
    const TransformEntry* e = level < 0 ? nullptr : m.sections[k].at_level(level);
    if (!e || images[k].empty()) {
      out.push_back(images[k]);
      continue;
    }
    const Image& src = images[k];
    if (level == 0) {
      out.push_back(render(src, e->warp(), src.width(), src.height()));
    } else {
      out.push_back(render(src, upscale(e->affine, m.levels.scale_of(level)), src.width(), src.height()));
    }
  }
  return out;
}

int run_icon(const std::string& in, const std::string& out, double lo, double hi) {
  const PgmData d = read_pgm(in);
  save_image(out, convert_depth(to_raster(d), lo, hi));
  return 0;
}

int run_iscale(const std::string& in, const std::string& factors, const std::string& out_dir) {
  PyramidSpec spec;
  spec.factors = parse_int_list(factors);
  const Image img = load_image(in);
  spec.validate_for(img.width(), img.height());
  const auto levels = build_pyramid(img, spec);
  std::filesystem::create_directories(out_dir);
  const std::string stem = std::filesystem::path(in).stem().string();
  for (std::size_t k = 0; k < levels.size(); ++k) {
    save_image(std::filesystem::path(out_dir) / (stem + "_L" + std::to_string(k) + ".swr"), levels[k]);
  }
  return 0;
}

struct SwimArgs {
  std::string model, target, out, grid = "4x4";
  double whiten = 0.7, taper = kDefaultTaperFrac, max_offset = 64.0, content_floor = 0.01;
  int patch = 512;
};

int run_swim(const SwimArgs& a) {
  const Image model = load_image(a.model), target = load_image(a.target);
  if (!model.same_shape(target)) throw ConfigError("model and target differ in size");
  const auto [rows, cols] = parse_grid(a.grid);
  MatchParams p;
  p.whitening = {a.whiten, 1e-6};
  p.taper_frac = a.taper;
  p.max_offset = a.max_offset;
  p.content_floor = a.content_floor;
  const auto pts = grid_match(model, target, GridSpec{rows, cols, a.patch, 0.0}, p);
  write_json(a.out, points_to_json(pts));
  return 0;
}

int run_mir(const std::string& in, const std::string& matches, const std::string& mode, const std::string& grid,
            const std::string& out) {
  const Image src = load_image(in);
  const auto pts = points_from_json(read_json(matches));
  // the fit maps model coordinates to target coordinates; rendering the
  // target into the model frame uses its inverse
  if (mode == "affine") {
    const AffineFit fit = solve_affine(pts, Weighting::snr);
    save_image(out, render(src, invert(fit.transform), src.width(), src.height()));
  } else if (mode == "mesh") {
    const auto [rows, cols] = parse_grid(grid);
    const MeshBuild mb = build_mesh(Rect::of_image(src.width(), src.height()), rows, cols, pts, Weighting::snr);
    save_image(out, render(src, mb.mesh.inverted(), src.width(), src.height()));
  } else {
    throw ConfigError("--mode must be affine or mesh");
  }
  return 0;
}

int run_remod(const std::string& stack, int center, int span, const std::string& exclude, const std::string& out) {
  const StackManifest m = load_manifest(stack);
  const auto images = load_stack_images(m);
  ModelSpec spec;
  spec.span = span;
  for (int id : parse_int_list(exclude)) {
    bool found = false;
    for (std::size_t k = 0; k < m.sections.size(); ++k) {
      if (m.sections[k].id == id) {
        spec.exclusions.insert(static_cast<int>(k));
        found = true;
      }
    }
    if (!found) throw ConfigError("no section with id " + std::to_string(id));
  }
  for (std::size_t k = 0; k < m.sections.size(); ++k) {
    if (m.sections[k].status != SectionStatus::ok) spec.exclusions.insert(static_cast<int>(k));
  }
  int index = -1;
  for (std::size_t k = 0; k < m.sections.size(); ++k) {
    if (m.sections[k].id == center) index = static_cast<int>(k);
  }
  if (index < 0) throw ConfigError("no section with id " + std::to_string(center));
  const auto rendered = rendered_stack(m, images);
  save_image(out, build_model(rendered, index, spec));
  return 0;
}

int run_align(const std::string& manifest_path, const std::string& config_path, const std::vector<double>& constraint,
              int workers, std::uint64_t seed) {
  StackManifest m = load_manifest(manifest_path);
  const AlignConfig cfg = config_path.empty() ? AlignConfig{} : load_align_config(config_path);
  if (!constraint.empty()) {
    if (constraint.size() != 6) throw ConfigError("--constraint takes 6 numbers: a11 a12 a21 a22 tx ty");
    const AffineTransform c = AffineTransform::from_params({constraint[0], constraint[1], constraint[2], constraint[3],
                                                            constraint[4], constraint[5]});
    if (!(std::abs(c.det()) > kMinAbsDet)) throw ConfigError("constraint transform is singular");
    m.global_constraint = c;
  }
  AlignOptions opt;
  opt.workers = std::max(1, workers);
  opt.seed = seed;
  opt.log = &std::cerr;
  opt.checkpoint = manifest_path;
  const AlignResult r = align_stack(m, cfg, opt);
  save_manifest(manifest_path, r.manifest);
  return 0;
}

int run_report(const std::string& manifest_path, const std::string& out_dir, int workers) {
  const StackManifest m = load_manifest(manifest_path);
  const auto images = load_stack_images(m);
  write_report(report(m, images, std::max(1, workers)), out_dir);
  return 0;
}

int run_synth(const std::string& spec_path, const std::string& out_dir, const std::string& truth, int workers) {
  const SynthSpec spec = synth_spec_from_json(read_json(spec_path));
  write_synth_stack(generate_stack(spec, std::max(1, workers)), out_dir, truth);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"swiftreg: whitened-FFT registration of serial-section image stacks"};
  app.require_subcommand(1);

  std::string icon_in, icon_out;
  double clip_lo = 0.5, clip_hi = 99.5;
  auto* icon = app.add_subcommand("icon", "convert a PGM to [0,1] with percentile clipping");
  icon->add_option("--in", icon_in, "input PGM (8 or 16 bit)")->required();
  icon->add_option("--out", icon_out, "output .pgm or .swr")->required();
  icon->add_option("--clip-lo", clip_lo, "low clip percentile");
  icon->add_option("--clip-hi", clip_hi, "high clip percentile");

  std::string is_in, is_factors, is_out;
  auto* iscale = app.add_subcommand("iscale", "build a box-filter pyramid");
  iscale->add_option("--in", is_in, "input image")->required();
  iscale->add_option("--factors", is_factors, "comma-separated level factors, e.g. 2,2,3")->required();
  iscale->add_option("--out-dir", is_out, "output directory")->required();

  SwimArgs sw;
  auto* swim = app.add_subcommand("swim", "grid of whitened patch matches, target against model");
  swim->add_option("--model", sw.model, "model image")->required();
  swim->add_option("--target", sw.target, "target image")->required();
  swim->add_option("--whiten", sw.whiten, "whitening exponent in [0,1]");
  swim->add_option("--taper", sw.taper, "apodization taper fraction");
  swim->add_option("--grid", sw.grid, "patch lattice RxC");
  swim->add_option("--patch", sw.patch, "patch size in pixels");
  swim->add_option("--max-offset", sw.max_offset, "largest accepted offset in pixels");
  swim->add_option("--content-floor", sw.content_floor, "minimum patch content");
  swim->add_option("--out", sw.out, "matches JSON")->required();

  std::string mir_in, mir_matches, mir_mode = "affine", mir_grid = "8x8", mir_out;
  auto* mir = app.add_subcommand("mir", "fit matches and render the image into the model frame");
  mir->add_option("--in", mir_in, "image to render")->required();
  mir->add_option("--matches", mir_matches, "matches JSON from swim")->required();
  mir->add_option("--mode", mir_mode, "affine or mesh");
  mir->add_option("--grid", mir_grid, "mesh grid RxC");
  mir->add_option("--out", mir_out, "output image")->required();

  std::string rm_stack, rm_exclude, rm_out;
  int rm_center = 0, rm_span = 9;
  auto* remod = app.add_subcommand("remod", "Z-averaged model around one section");
  remod->add_option("--stack", rm_stack, "manifest")->required();
  remod->add_option("--center", rm_center, "center section id")->required();
  remod->add_option("--span", rm_span, "odd window width in sections");
  remod->add_option("--exclude", rm_exclude, "comma-separated section ids to leave out");
  remod->add_option("--out", rm_out, "output image")->required();

  std::string al_manifest, al_config;
  std::vector<double> al_constraint;
  int workers = 1;
  std::uint64_t seed = 0;
  auto* align = app.add_subcommand("align", "align a stack in place");
  align->add_option("--manifest", al_manifest, "manifest, rewritten after each level")->required();
  align->add_option("--config", al_config, "AlignConfig JSON");
  align->add_option("--constraint", al_constraint, "global affine a11 a12 a21 a22 tx ty")->expected(6);
  align->add_option("--workers", workers, "worker threads");
  align->add_option("--seed", seed, "recorded seed (alignment is deterministic)");

  std::string rp_manifest, rp_out;
  auto* rep = app.add_subcommand("report", "diagnostics and XZ/YZ cuts of an aligned stack");
  rep->add_option("--manifest", rp_manifest, "aligned manifest")->required();
  rep->add_option("--out-dir", rp_out, "output directory")->required();
  rep->add_option("--workers", workers, "worker threads");

  std::string sy_spec, sy_out, sy_truth;
  auto* syn = app.add_subcommand("synth", "generate a synthetic stack with known truth");
  syn->add_option("--spec", sy_spec, "SynthSpec JSON")->required();
  syn->add_option("--out-dir", sy_out, "output directory")->required();
  syn->add_option("--truth", sy_truth, "truth JSON")->required();
  syn->add_option("--workers", workers, "worker threads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (icon->parsed()) return run_icon(icon_in, icon_out, clip_lo, clip_hi);
    if (iscale->parsed()) return run_iscale(is_in, is_factors, is_out);
    if (swim->parsed()) return run_swim(sw);
    if (mir->parsed()) return run_mir(mir_in, mir_matches, mir_mode, mir_grid, mir_out);
    if (remod->parsed()) return run_remod(rm_stack, rm_center, rm_span, rm_exclude, rm_out);
    if (align->parsed()) return run_align(al_manifest, al_config, al_constraint, workers, seed);
    if (rep->parsed()) return run_report(rp_manifest, rp_out, workers);
    if (syn->parsed()) return run_synth(sy_spec, sy_out, sy_truth, workers);
  } catch (const AlignmentFailure& e) {
    std::cerr << "alignment failed: " << e.what() << '\n';
    std::cerr << "failed sections:";
    for (int id : e.section_ids()) std::cerr << ' ' << id;
    std::cerr << '\n';
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
