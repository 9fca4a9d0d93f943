// thma: command-line entry point for the auto-labeling pipeline.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include "thma/bev.hpp"
#include "thma/detect.hpp"
#include "thma/distill.hpp"
#include "thma/error.hpp"
#include "thma/pipeline.hpp"
#include "thma/review_api.hpp"
#include "thma/review_store.hpp"
#include "thma/serialization.hpp"
#include "thma/spatial_index.hpp"
#include "thma/synth.hpp"

namespace fs = std::filesystem;
using namespace thma;

namespace {

Frame parse_frame(const std::string& s) {
  if (s == "geographic") return Frame::Geographic;
  if (s == "planar") return Frame::PlanarMeters;
  throw Error(ErrorCode::InvalidArgument, "frame must be 'geographic' or 'planar'");
}

std::vector<fs::path> tile_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "tile directory not found: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && e.path().extension() == ".png" && !name.ends_with(".occ.png")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"THMA-style HD map auto-labeling pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  app.add_option("--seed", seed, "Random seed for synthetic data");
  app.add_option("--jobs", jobs, "Parallel jobs")->check(CLI::PositiveNumber);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic road scene");
  std::string synth_config, synth_out = "scene";
  synth->add_option("--config", synth_config, "Scene config JSON")->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output directory");

  // rasterize
  auto* rast = app.add_subcommand("rasterize", "Rasterize a cloud into BEV tiles along a trajectory");
  std::string r_points, r_traj, r_out = "tiles", r_frame = "geographic";
  TilePlanConfig r_plan;
  bool r_no_filter = false;
  rast->add_option("--points", r_points, "Point cloud (.bin or .csv)")->required()->check(CLI::ExistingFile);
  rast->add_option("--traj", r_traj, "Trajectory CSV")->required()->check(CLI::ExistingFile);
  rast->add_option("--res", r_plan.resolution, "Meters per pixel");
  rast->add_option("--size", r_plan.size, "Tile size in pixels");
  rast->add_option("--overlap", r_plan.overlap, "Tile overlap fraction");
  rast->add_option("--frame", r_frame, "Frame of CSV inputs: geographic or planar");
  rast->add_flag("--no-elevation-filter", r_no_filter, "Keep all heights");
  rast->add_option("--out", r_out, "Output directory");

  // detect
  auto* det = app.add_subcommand("detect", "Run the baseline lane and pole detectors");
  std::string d_tiles, d_cloud, d_out = "pred.json";
  det->add_option("--tiles", d_tiles, "Tile directory")->required();
  det->add_option("--cloud", d_cloud, "Planar point cloud for pole detection")->check(CLI::ExistingFile);
  det->add_option("--out", d_out, "Output detections JSON");

  // refine
  auto* ref = app.add_subcommand("refine", "Refine pseudo labels against ground truth");
  std::string f_gt, f_pred, f_out = "refined.json";
  MatchConfig f_match;
  ref->add_option("--gt", f_gt, "Ground-truth detections")->required()->check(CLI::ExistingFile);
  ref->add_option("--pred", f_pred, "Model detections")->required()->check(CLI::ExistingFile);
  ref->add_option("--tlow", f_match.t_low, "Low confidence threshold");
  ref->add_option("--thigh", f_match.t_high, "High confidence threshold");
  ref->add_option("--dist", f_match.distance_threshold, "Match distance threshold");
  ref->add_option("--out", f_out, "Output refined label set");

  // route
  auto* rte = app.add_subcommand("route", "Split detections into auto-accepted and review queue");
  std::string t_pred, t_store, t_tiles;
  RouteConfig t_route;
  rte->add_option("--pred", t_pred, "Detections JSON")->required()->check(CLI::ExistingFile);
  rte->add_option("--tauto", t_route.t_auto, "Auto-accept threshold");
  rte->add_option("--store", t_store, "Store directory")->required();
  rte->add_option("--tiles", t_tiles, "Tile directory served with the store");

  // serve
  auto* srv = app.add_subcommand("serve", "Serve the review API");
  std::string s_store, s_tiles, s_host = "127.0.0.1";
  int s_port = 8080;
  srv->add_option("--store", s_store, "Store directory")->required();
  srv->add_option("--tiles", s_tiles, "Tile directory (defaults to the one recorded in the store)");
  srv->add_option("--host", s_host, "Bind address");
  srv->add_option("--port", s_port, "Port")->check(CLI::Range(1, 65535));

  // export
  auto* exp = app.add_subcommand("export", "Export the feedback label set");
  std::string e_store, e_out = "feedback.json";
  exp->add_option("--store", e_store, "Store directory")->required()->check(CLI::ExistingDirectory);
  exp->add_option("--out", e_out, "Output detections JSON");

  // metrics
  auto* met = app.add_subcommand("metrics", "Print automation metrics");
  std::string m_store;
  double m_window = 3600.0;
  met->add_option("--store", m_store, "Store directory")->required()->check(CLI::ExistingDirectory);
  met->add_option("--window", m_window, "Throughput window in seconds")->check(CLI::PositiveNumber);

  // run
  auto* run = app.add_subcommand("run", "Run every stage end to end");
  std::string p_config, p_out;
  run->add_option("--config", p_config, "Pipeline config JSON")->check(CLI::ExistingFile);
  run->add_option("--out", p_out, "Output directory (overrides the config)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      SceneConfig cfg = synth_config.empty() ? SceneConfig{} : scene_config_from_json(load_json_file(synth_config));
      if (seed) cfg.seed = *seed;
      cfg.validate();
      const SyntheticScene scene = generate_scene(cfg);
      fs::create_directories(synth_out);
      save_point_cloud(scene.cloud, fs::path(synth_out) / "cloud.bin", CloudFormat::BinaryV1);
      save_trajectory(scene.trajectory, fs::path(synth_out) / "trajectory.csv");
      save_detections(scene.ground_truth.items(), fs::path(synth_out) / "ground_truth.json");
      save_json_file(to_json(cfg), fs::path(synth_out) / "scene.json");
      std::cout << "points " << scene.cloud.size() << ", poses " << scene.trajectory.size() << ", labels "
                << scene.ground_truth.size() << "\n";
    } else if (rast->parsed()) {
      const Frame csv_frame = parse_frame(r_frame);
      PointCloud cloud = load_point_cloud(r_points, cloud_format_for(r_points), csv_frame);
      Trajectory traj = load_trajectory(r_traj, csv_frame);
      if (cloud.frame() == Frame::Geographic) cloud = to_mercator(cloud);
      if (traj.frame() == Frame::Geographic) traj = to_mercator(traj);
      const PointCloud kept = r_no_filter ? cloud : elevation_filter(cloud, traj);
      const GridIndex index(kept, 2.0);
      const auto frames = plan_tiles(traj, r_plan);
      const auto tiles = rasterize_tiles(index, frames, {}, jobs.value_or(1));
      fs::create_directories(r_out);
      for (std::size_t k = 0; k < tiles.size(); ++k) write_tile(tiles[k], fs::path(r_out) / (tile_id(k) + ".png"));
      std::cout << tiles.size() << " tiles written to " << r_out << "\n";
    } else if (det->parsed()) {
      std::vector<Detection> out;
      std::vector<TileFrame> frames;
      std::vector<std::string> ids;
      for (const auto& png : tile_files(d_tiles)) {
        const BevTile tile = read_tile(png);
        const std::string id = png.stem().string();
        for (auto& d : detect_lane_markings(tile, id)) out.push_back(std::move(d));
        frames.push_back(tile.frame);
        ids.push_back(id);
      }
      if (!d_cloud.empty()) {
        const PointCloud cloud = load_point_cloud(d_cloud, cloud_format_for(d_cloud), Frame::PlanarMeters);
        for (auto& d : detect_poles(cloud)) {
          double best = std::numeric_limits<double>::infinity();
          for (std::size_t k = 0; k < frames.size(); ++k) {
            const double dist = std::hypot(frames[k].center_x - d.descriptor.values[3],
                                           frames[k].center_y - d.descriptor.values[4]);
            if (dist < best) {
              best = dist;
              d.tile = ids[k];
            }
          }
          out.push_back(std::move(d));
        }
      }
      save_detections(out, d_out);
      std::cout << out.size() << " detections written to " << d_out << "\n";
    } else if (ref->parsed()) {
      f_match.validate();
      const RefinedLabelSet refined =
          refine(LabelSet(load_detections(f_gt)), LabelSet(load_detections(f_pred)), f_match);
      save_json_file(refined_to_json(refined), f_out);
      std::cout << refined.size() << " refined labels (" << refined.count(Provenance::ConfirmedGT) << " confirmed gt, "
                << refined.count(Provenance::HighConfModel) << " high-confidence model)\n";
    } else if (rte->parsed()) {
      const RouteResult routed = route(load_detections(t_pred), t_route, wall_clock_seconds());
      ReviewStore store(t_store);
      if (!t_tiles.empty()) set_store_tiles_dir(t_store, t_tiles);
      store.ingest(routed);
      std::cout << routed.accepted.size() << " auto-accepted, " << routed.queue.size() << " queued\n";
    } else if (srv->parsed()) {
      ReviewStore store(s_store);
      std::optional<fs::path> tiles = s_tiles.empty() ? store_tiles_dir(s_store) : std::optional<fs::path>(s_tiles);
      ReviewApi api(store, tiles);
      std::cout << "serving " << s_store << " on http://" << s_host << ":" << s_port << std::endl;
      serve(api, s_host, s_port);
    } else if (exp->parsed()) {
      ReviewStore store(e_store);
      const LabelSet feedback = store.export_feedback();
      save_detections(feedback.items(), e_out);
      std::cout << feedback.size() << " feedback labels written to " << e_out << "\n";
    } else if (met->parsed()) {
      ReviewStore store(m_store);
      std::cout << to_json(store.metrics(m_window)).dump(2) << "\n";
    } else if (run->parsed()) {
      PipelineConfig cfg;
      if (!p_config.empty()) cfg = pipeline_config_from_json(load_json_file(p_config));
      if (!p_out.empty()) cfg.out_dir = p_out;
      if (seed) cfg.scene.seed = *seed;
      if (jobs) cfg.jobs = *jobs;
      const auto report = run_pipeline(cfg);
      std::cout << report.dump(2) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
