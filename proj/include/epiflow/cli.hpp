#pragma once

// Command-line front end. Every subcommand is deterministic given its inputs
// and seed. Exit status: 0 success, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <iterator>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "epiflow/error.hpp"
#include "epiflow/fuse3d.hpp"
#include "epiflow/harness.hpp"
#include "epiflow/io.hpp"
#include "epiflow/pipeline.hpp"

namespace epiflow::cli {

namespace fs = std::filesystem;

inline constexpr double kDefaultThresholdFootprints = 20.0;
inline constexpr std::array<double, 3> kRangeFactors{1.0, 2.0, 3.0};

// Explicit --config, else <scene>/config.json, else defaults.
inline PipelineConfig scene_config(const std::string& scene_dir, const std::string& config_path) {
  if (!config_path.empty()) return load_config(config_path);
  const fs::path local = fs::path(scene_dir) / "config.json";
  if (fs::exists(local)) return load_config(local.string());
  return {};
}

inline ReconstructionOptions make_options(const PipelineConfig& config) {
  ReconstructionOptions opt;
  opt.coarse = config.coarse;
  opt.fine = config.fine;
  opt.seed = config.seed;
  if (config.update != "deterministic") {
    const auto [coarse, fine] = config.gru_paths();
    opt.coarse_gru = read_gru_weights(coarse);
    opt.fine_gru = read_gru_weights(fine);
  }
  return opt;
}

inline std::vector<int> selected_views(const SceneBundle& scene, const PipelineConfig& config) {
  std::vector<int> out;
  for (int id : config.views) {
    const int idx = scene.index_of(id);
    require(idx >= 0, ErrorCode::kInvalidConfig, "config lists unknown view " + std::to_string(id));
    out.push_back(idx);
  }
  return out;
}

inline std::optional<DepthField> scene_ground_truth(const SceneBundle& scene, int view) {
  const fs::path p = fs::path(scene.root) / "gt" / (view_stem(scene.ids[view]) + ".pfm");
  if (!fs::exists(p)) return std::nullopt;
  return read_depth_pfm(p.string());
}

inline nlohmann::json stage_diagnostics(const StageResult& stage, const DepthField* gt_full, const CameraView& cam) {
  nlohmann::json iterations = nlohmann::json::array();
  for (const DepthField& s : stage.snapshots) iterations.push_back({{"iteration", s.iteration}, {"valid", s.valid_count()}});
  nlohmann::json out{{"width", stage.depth.width}, {"height", stage.depth.height}, {"iterations", iterations}};
  if (gt_full) {
    const int factor = depth_map_factor(cam, stage.depth);
    const DepthField gt = downsample_depth(*gt_full, factor, stage.depth.width, stage.depth.height);
    try {
      out["loss"] = compute_loss(stage.snapshots, gt, cam.depth_min, cam.depth_max);
    } catch (const Error&) {
      out["loss"] = nullptr;
    }
  }
  return out;
}

// Writes <out>/<id>.pfm (fine) and <out>/<id>_coarse.pfm per view and returns
// the diagnostics document.
inline nlohmann::json write_reconstruction(const SceneBundle& scene, const std::vector<CameraView>& cameras,
                                           const SceneReconstruction& rec, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  nlohmann::json views = nlohmann::json::array();
  for (const ViewReconstruction& v : rec.views) {
    const std::string stem = view_stem(scene.ids[v.view]);
    write_depth_pfm(v.depth(), (out_dir / (stem + ".pfm")).string());
    write_depth_pfm(v.coarse.depth, (out_dir / (stem + "_coarse.pfm")).string());
    const auto gt = scene_ground_truth(scene, v.view);
    views.push_back({{"id", scene.ids[v.view]},
                     {"coarse", stage_diagnostics(v.coarse, gt ? &*gt : nullptr, cameras[v.view])},
                     {"fine", stage_diagnostics(v.fine, gt ? &*gt : nullptr, cameras[v.view])}});
  }
  nlohmann::json doc{{"scene", scene.name}, {"views", views}};
  std::ofstream(out_dir / "diagnostics.json") << doc.dump(2) << '\n';
  return doc;
}

inline std::vector<DepthField> load_depths(const SceneBundle& scene, const fs::path& dir) {
  std::vector<DepthField> depths;
  for (int id : scene.ids) {
    const fs::path p = dir / (view_stem(id) + ".pfm");
    if (!fs::exists(p)) throw Error(ErrorCode::kIo, "missing depth map " + p.string());
    depths.push_back(read_depth_pfm(p.string()));
  }
  return depths;
}

inline PointCloud fuse_scene(const SceneBundle& scene, const std::vector<CameraView>& cameras,
                             const std::vector<DepthField>& depths, const ConsistencyParams& params) {
  const auto masks = geometric_consistency_mask(depths, cameras, params);
  return fuse_to_point_cloud(depths, masks, scene.images, cameras);
}

// 20 pixel footprints from the meta.json beside the ground-truth cloud.
inline double default_threshold(const fs::path& gt_path) {
  const fs::path meta = gt_path.parent_path() / "meta.json";
  if (!fs::exists(meta))
    throw Error(ErrorCode::kInvalidInput, "no --threshold given and no meta.json next to " + gt_path.string());
  std::ifstream in(meta);
  const nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("footprint") || !j.at("footprint").is_number())
    throw Error(ErrorCode::kParse, meta.string() + ": missing numeric 'footprint'");
  return kDefaultThresholdFootprints * j.at("footprint").get<double>();
}

inline std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

inline bool same_file_bytes(const fs::path& a, const fs::path& b) { return file_bytes(a) == file_bytes(b); }

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"epiflow: multi-view stereo by epipolar flow"};
  app.require_subcommand(1);

  // synth
  SceneSpec spec;
  std::string preset = "plane", synth_out;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "render a synthetic scene directory with ground truth");
  synth->add_option("--preset", preset, "plane | sphere | boxes")->capture_default_str();
  synth->add_option("--out", synth_out, "output scene directory")->required();
  synth->add_option("--seed", synth_seed, "texture seed")->capture_default_str();
  synth->add_option("--views", spec.views, "number of views")->capture_default_str();
  synth->add_option("--width", spec.width, "image width")->capture_default_str();
  synth->add_option("--height", spec.height, "image height")->capture_default_str();
  synth->add_option("--focal", spec.focal, "focal length in pixels")->capture_default_str();
  synth->add_option("--distance", spec.distance, "surface depth on the reference axis")->capture_default_str();
  synth->add_option("--baseline", spec.baseline, "source ring radius")->capture_default_str();
  synth->add_flag("--toe-in", spec.toe_in, "aim source cameras at the reference axis point");

  // reconstruct
  std::string rec_scene, rec_config, rec_out;
  std::optional<std::uint64_t> rec_seed;
  auto* reconstruct = app.add_subcommand("reconstruct", "estimate per-view depth maps");
  reconstruct->add_option("scene", rec_scene, "scene directory")->required();
  reconstruct->add_option("--config", rec_config, "JSON run configuration");
  reconstruct->add_option("--out", rec_out, "depth output directory (default <scene>/depths)");
  reconstruct->add_option("--seed", rec_seed, "initialization seed (overrides the config)");

  // fuse
  std::string fuse_scene_dir, fuse_config, fuse_depths, fuse_out;
  std::optional<int> fuse_min_views;
  auto* fuse = app.add_subcommand("fuse", "filter depth maps and fuse them into a PLY point cloud");
  fuse->add_option("scene", fuse_scene_dir, "scene directory")->required();
  fuse->add_option("--config", fuse_config, "JSON run configuration");
  fuse->add_option("--depths", fuse_depths, "depth directory (default <scene>/depths)");
  fuse->add_option("--out", fuse_out, "output PLY (default <scene>/fused.ply)");
  fuse->add_option("--min-views", fuse_min_views, "consistent sources needed to keep a pixel");

  // eval
  std::string eval_cloud, eval_gt, eval_out;
  std::optional<double> eval_threshold;
  auto* eval = app.add_subcommand("eval", "compare a PLY cloud with a ground-truth PLY");
  eval->add_option("cloud", eval_cloud, "reconstructed PLY")->required();
  eval->add_option("gt", eval_gt, "ground-truth PLY")->required();
  eval->add_option("--threshold", eval_threshold, "outlier distance (default 20 footprints from meta.json)");
  eval->add_option("--out", eval_out, "also write the report to this file");

  // range-sweep
  std::string sweep_scene, sweep_config, sweep_out;
  std::optional<std::uint64_t> sweep_seed;
  bool fixed_init = false;
  auto* sweep = app.add_subcommand("range-sweep", "reconstruct under widened depth ranges and compare");
  sweep->add_option("scene", sweep_scene, "scene directory")->required();
  sweep->add_option("--config", sweep_config, "JSON run configuration");
  sweep->add_option("--out", sweep_out, "output directory (default <scene>/range_sweep)");
  sweep->add_option("--seed", sweep_seed, "initialization seed (overrides the config)");
  sweep->add_flag("--fixed-init", fixed_init, "share one initial depth field across all ranges");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      spec.preset = parse_preset(preset);
      const SyntheticScene scene = render_scene(spec, synth_seed);
      write_synthetic_scene(scene, synth_out);
      PipelineConfig config;
      // a ring of three views leaves most pixels seen by only one source
      config.fusion.min_consistent_views = std::min(config.fusion.min_consistent_views, spec.views - 2);
      config.fusion.min_consistent_views = std::max(config.fusion.min_consistent_views, 1);
      config.num_sources = spec.views - 1;
      std::ofstream(fs::path(synth_out) / "config.json") << config_to_json(config).dump(2) << '\n';
      out << nlohmann::json{{"scene", synth_out},
                            {"views", scene.size()},
                            {"textured_fraction", textured_fraction(scene.images[0])}}
                 .dump(2)
          << '\n';
    } else if (*reconstruct) {
      PipelineConfig config = scene_config(rec_scene, rec_config);
      if (rec_seed) config.seed = *rec_seed;
      const SceneBundle scene = load_scene(rec_scene, config);
      const SceneReconstruction rec =
          reconstruct_scene(scene.images, scene.cameras, scene.pairs, make_options(config), selected_views(scene, config));
      const fs::path dir = rec_out.empty() ? fs::path(rec_scene) / "depths" : fs::path(rec_out);
      out << write_reconstruction(scene, scene.cameras, rec, dir).dump(2) << '\n';
    } else if (*fuse) {
      PipelineConfig config = scene_config(fuse_scene_dir, fuse_config);
      if (fuse_min_views) config.fusion.min_consistent_views = *fuse_min_views;
      config.validate();
      const SceneBundle scene = load_scene(fuse_scene_dir, config);
      const fs::path dir = fuse_depths.empty() ? fs::path(fuse_scene_dir) / "depths" : fs::path(fuse_depths);
      const PointCloud cloud = fuse_scene(scene, scene.cameras, load_depths(scene, dir), config.fusion);
      const fs::path ply = fuse_out.empty() ? fs::path(fuse_scene_dir) / "fused.ply" : fs::path(fuse_out);
      write_ply(cloud, ply.string());
      out << nlohmann::json{{"points", cloud.size()}, {"ply", ply.string()}}.dump(2) << '\n';
    } else if (*eval) {
      if (!fs::exists(eval_gt)) throw Error(ErrorCode::kIo, "ground-truth cloud " + eval_gt + " does not exist");
      if (!fs::exists(eval_cloud)) throw Error(ErrorCode::kIo, "cloud " + eval_cloud + " does not exist");
      const double threshold = eval_threshold ? *eval_threshold : default_threshold(eval_gt);
      const EvalReport report = evaluate(read_ply(eval_cloud), read_ply(eval_gt), threshold);
      const std::string text = report_to_json(report).dump(2);
      out << text << '\n';
      if (!eval_out.empty()) std::ofstream(eval_out) << text << '\n';
    } else if (*sweep) {
      PipelineConfig config = scene_config(sweep_scene, sweep_config);
      if (sweep_seed) config.seed = *sweep_seed;
      const SceneBundle scene = load_scene(sweep_scene, config);
      const ReconstructionOptions options = make_options(config);
      const fs::path root = sweep_out.empty() ? fs::path(sweep_scene) / "range_sweep" : fs::path(sweep_out);
      const fs::path gt_ply = fs::path(sweep_scene) / "gt.ply";
      const std::optional<PointCloud> gt =
          fs::exists(gt_ply) ? std::optional<PointCloud>(read_ply(gt_ply.string())) : std::nullopt;

      std::vector<DepthField> shared_init;
      if (fixed_init) {
        const SceneFeatures features = extract_scene_features(scene.images, options.descriptor);
        for (int v = 0; v < scene.size(); ++v)
          shared_init.push_back(initial_depth(scene.cameras, features, v, options.seed));
      }
      nlohmann::json ranges = nlohmann::json::array();
      bool identical = true;
      for (double x : kRangeFactors) {
        std::vector<CameraView> cams = scene.cameras;
        for (auto& c : cams) c = widen_range(c, x);
        const SceneReconstruction rec = reconstruct_scene(scene.images, cams, scene.pairs, options, {},
                                                          fixed_init ? &shared_init : nullptr);
        const fs::path dir = root / ("range_" + std::to_string(static_cast<int>(x)));
        write_reconstruction(scene, cams, rec, dir);
        nlohmann::json entry{{"range", x}, {"depth_min", cams[0].depth_min}, {"depth_max", cams[0].depth_max}};
        if (x != kRangeFactors[0]) {
          bool same = true;
          for (int id : scene.ids)
            same = same && same_file_bytes(root / "range_1" / (view_stem(id) + ".pfm"), dir / (view_stem(id) + ".pfm"));
          entry["identical_to_range_1"] = same;
          identical = identical && same;
        }
        const PointCloud cloud = fuse_scene(scene, cams, rec.depths, config.fusion);
        entry["points"] = cloud.size();
        if (gt && !cloud.empty()) entry["report"] = report_to_json(evaluate(cloud, *gt, default_threshold(gt_ply)));
        ranges.push_back(entry);
      }
      nlohmann::json doc{{"seed", options.seed}, {"fixed_init", fixed_init}, {"ranges", ranges}, {"identical", identical}};
      if (ranges[0].contains("report") && ranges[2].contains("report")) {
        const double o1 = ranges[0]["report"]["overall"].get<double>();
        const double o3 = ranges[2]["report"]["overall"].get<double>();
        doc["overall_change_range_3"] = (o3 - o1) / o1;
      }
      std::ofstream(root / "report.json") << doc.dump(2) << '\n';
      out << doc.dump(2) << '\n';
    }
  } catch (const Error& e) {
    err << "epiflow: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "epiflow: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace epiflow::cli
