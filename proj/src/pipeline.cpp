#include "thma/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "thma/error.hpp"
#include "thma/review_api.hpp"
#include "thma/serialization.hpp"
#include "thma/spatial_index.hpp"

namespace thma {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kIndexCell = 2.0;

[[noreturn]] void bad_config(const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); }

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) {
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      bad_config(std::string("config key '") + key + "': " + e.what());
    }
  }
}

void read_path(const json& j, const char* key, std::optional<fs::path>& out) {
  if (auto it = j.find(key); it != j.end()) {
    if (it->is_null()) {
      out.reset();
    } else if (it->is_string()) {
      out = it->get<std::string>();
    } else {
      bad_config(std::string("config key '") + key + "' must be a path string");
    }
  }
}

json path_or_null(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

std::size_t nearest_frame(std::span<const TileFrame> frames, double x, double y) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const double d = std::hypot(frames[k].center_x - x, frames[k].center_y - y);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

// Liang-Barsky clip of segment a->b (pixel space) to [0, size]^2; returns the
// parameter interval kept, if any.
std::optional<std::pair<double, double>> clip_segment(double ax, double ay, double bx, double by, double size) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = bx - ax, dy = by - ay;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {ax, size - ax, ay, size - ay};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return std::nullopt;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, r);
    } else {
      t1 = std::min(t1, r);
    }
    if (t0 > t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

// Runs a stage, tagging any failure with its name and recording wall time.
template <typename Fn>
void stage(std::string_view name, json& timings, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fn();
  } catch (const Error& e) {
    throw Error(ErrorCode::StageFailed, std::string(name) + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::StageFailed, std::string(name) + ": " + e.what());
  }
  timings[std::string(name)] =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void PipelineConfig::validate() const {
  if (out_dir.empty()) bad_config("out_dir is empty");
  if (points) {
    if (!fs::is_regular_file(*points)) bad_config("points file not found: " + points->string());
    if (!trajectory) bad_config("points given without a trajectory");
  } else {
    scene.validate();
  }
  if (trajectory && !fs::is_regular_file(*trajectory)) bad_config("trajectory file not found: " + trajectory->string());
  if (ground_truth && !fs::is_regular_file(*ground_truth)) {
    bad_config("ground truth file not found: " + ground_truth->string());
  }
  if (!(tiles.resolution > 0.0) || !std::isfinite(tiles.resolution)) bad_config("tile resolution must be > 0");
  if (tiles.size < 1) bad_config("tile size must be >= 1");
  if (!(tiles.overlap >= 0.0 && tiles.overlap <= 0.9)) bad_config("tile overlap must lie in [0, 0.9]");
  if (!(tiles.z_span > 0.0)) bad_config("z_span must be > 0");
  if (raster.intensity_max_raw == 0) bad_config("intensity_max_raw must be > 0");
  if (!(elevation.below >= 0.0) || !(elevation.above >= 0.0)) bad_config("elevation band widths must be >= 0");
  if (lanes.max_vertices < 2) bad_config("lane max_vertices must be >= 2");
  if (!(poles.cell > 0.0) || !(poles.min_height > 0.0)) bad_config("pole cell and min_height must be > 0");
  match.validate();
  route.validate();
  if (!(metrics_window > 0.0)) bad_config("metrics_window must be > 0");
  if (jobs < 1) bad_config("jobs must be >= 1");
}

json to_json(const PipelineConfig& c) {
  return {
      {"out_dir", c.out_dir.string()},
      {"points", path_or_null(c.points)},
      {"trajectory", path_or_null(c.trajectory)},
      {"ground_truth", path_or_null(c.ground_truth)},
      {"input_frame", c.input_frame == Frame::Geographic ? "geographic" : "planar"},
      {"scene", to_json(c.scene)},
      {"tiles",
       {{"resolution", c.tiles.resolution},
        {"size", c.tiles.size},
        {"overlap", c.tiles.overlap},
        {"sensor_height", c.tiles.sensor_height},
        {"z_span", c.tiles.z_span}}},
      {"elevation",
       {{"enabled", c.elevation_filter},
        {"below", c.elevation.below},
        {"above", c.elevation.above},
        {"sensor_height", c.elevation.sensor_height}}},
      {"intensity_max_raw", c.raster.intensity_max_raw},
      {"lanes",
       {{"intensity_threshold", c.lanes.intensity_threshold},
        {"min_pixels", c.lanes.min_pixels},
        {"max_vertices", c.lanes.max_vertices}}},
      {"poles",
       {{"cell", c.poles.cell}, {"min_height", c.poles.min_height}, {"ground_clearance", c.poles.ground_clearance}}},
      {"match", {{"distance", c.match.distance_threshold}, {"t_low", c.match.t_low}, {"t_high", c.match.t_high}}},
      {"t_auto", c.route.t_auto},
      {"metrics_window", c.metrics_window},
      {"jobs", c.jobs},
  };
}

PipelineConfig pipeline_config_from_json(const json& j, PipelineConfig c) {
  if (!j.is_object()) bad_config("pipeline config must be a JSON object");
  if (auto it = j.find("out_dir"); it != j.end()) {
    if (!it->is_string()) bad_config("out_dir must be a string");
    c.out_dir = it->get<std::string>();
  }
  read_path(j, "points", c.points);
  read_path(j, "trajectory", c.trajectory);
  read_path(j, "ground_truth", c.ground_truth);
  if (auto it = j.find("input_frame"); it != j.end()) {
    const auto f = it->is_string() ? it->get<std::string>() : std::string();
    if (f == "geographic") {
      c.input_frame = Frame::Geographic;
    } else if (f == "planar") {
      c.input_frame = Frame::PlanarMeters;
    } else {
      bad_config("input_frame must be 'geographic' or 'planar'");
    }
  }
  if (auto it = j.find("scene"); it != j.end()) {
    json merged = to_json(c.scene);
    merged.update(*it);
    c.scene = scene_config_from_json(merged);
  }
  if (auto it = j.find("tiles"); it != j.end()) {
    read_key(*it, "resolution", c.tiles.resolution);
    read_key(*it, "size", c.tiles.size);
    read_key(*it, "overlap", c.tiles.overlap);
    read_key(*it, "sensor_height", c.tiles.sensor_height);
    read_key(*it, "z_span", c.tiles.z_span);
  }
  if (auto it = j.find("elevation"); it != j.end()) {
    read_key(*it, "enabled", c.elevation_filter);
    read_key(*it, "below", c.elevation.below);
    read_key(*it, "above", c.elevation.above);
    read_key(*it, "sensor_height", c.elevation.sensor_height);
  }
  read_key(j, "intensity_max_raw", c.raster.intensity_max_raw);
  if (auto it = j.find("lanes"); it != j.end()) {
    read_key(*it, "intensity_threshold", c.lanes.intensity_threshold);
    read_key(*it, "min_pixels", c.lanes.min_pixels);
    read_key(*it, "max_vertices", c.lanes.max_vertices);
  }
  if (auto it = j.find("poles"); it != j.end()) {
    read_key(*it, "cell", c.poles.cell);
    read_key(*it, "min_height", c.poles.min_height);
    read_key(*it, "ground_clearance", c.poles.ground_clearance);
  }
  if (auto it = j.find("match"); it != j.end()) {
    read_key(*it, "distance", c.match.distance_threshold);
    read_key(*it, "t_low", c.match.t_low);
    read_key(*it, "t_high", c.match.t_high);
  }
  read_key(j, "t_auto", c.route.t_auto);
  read_key(j, "metrics_window", c.metrics_window);
  read_key(j, "jobs", c.jobs);
  return c;
}

std::string tile_id(std::size_t k) {
  std::string n = std::to_string(k);
  return "tile_" + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n;
}

std::vector<Detection> clip_polyline_to_tile(const Detection& d, const TileFrame& frame, const std::string& tile) {
  const auto& v = d.descriptor;
  std::vector<Detection> out;
  std::vector<Vec3> run;  // (col, row, z)
  auto flush = [&] {
    if (run.size() >= 2) {
      std::vector<Vec3> world;
      for (const auto& p : run) {
        const auto [x, y] = pixel_to_world(frame, p.x(), p.y());
        world.emplace_back(x, y, p.z());
      }
      Detection piece = d;
      piece.id = d.id + "@" + tile + (out.empty() ? "" : "-" + std::to_string(out.size()));
      piece.descriptor = make_polyline(v.cls, world);
      piece.multi = {};
      piece.tile = tile;
      out.push_back(std::move(piece));
    }
    run.clear();
  };

  const double size = frame.size;
  for (std::size_t k = 0; k + 1 < v.point_count(); ++k) {
    const Vec3 a = v.point(k), b = v.point(k + 1);
    const auto pa = world_to_pixel(frame, a.x(), a.y());
    const auto pb = world_to_pixel(frame, b.x(), b.y());
    const auto kept = clip_segment(pa.col, pa.row, pb.col, pb.row, size);
    if (!kept) {
      flush();
      continue;
    }
    auto at = [&](double t) {
      return Vec3(pa.col + t * (pb.col - pa.col), pa.row + t * (pb.row - pa.row), a.z() + t * (b.z() - a.z()));
    };
    const Vec3 s = at(kept->first), e = at(kept->second);
    if (!run.empty() && (run.back() - s).norm() > 1e-9) flush();
    if (run.empty()) run.push_back(s);
    if ((run.back() - e).norm() > 1e-12) run.push_back(e);
    if (kept->second < 1.0) flush();
  }
  flush();
  return out;
}

json strip_timings(json report) {
  report.erase("timings_ms");
  report.erase("started_at");
  return report;
}

json run_pipeline(const PipelineConfig& config) {
  config.validate();

  const fs::path out = config.out_dir;
  const fs::path scene_dir = out / "scene";
  const fs::path tiles_dir = out / "tiles";
  const fs::path store_dir = out / "store";
  // Artifacts of a previous run in the same directory would leak into counts.
  fs::remove_all(tiles_dir);
  fs::remove_all(store_dir);
  fs::create_directories(scene_dir);
  fs::create_directories(tiles_dir);
  save_json_file(to_json(config), out / "config.json");

  json report;
  json timings = json::object();
  json counts = json::object();
  report["started_at"] = wall_clock_seconds();

  fs::path cloud_path = scene_dir / "cloud.bin";
  fs::path traj_path = scene_dir / "trajectory.csv";
  fs::path gt_path = scene_dir / "ground_truth.json";

  stage("synth", timings, [&] {
    if (config.points) {
      PointCloud cloud = load_point_cloud(*config.points, cloud_format_for(*config.points), config.input_frame);
      Trajectory traj = load_trajectory(*config.trajectory, config.input_frame);
      if (cloud.frame() == Frame::Geographic) cloud = to_mercator(cloud);
      if (traj.frame() == Frame::Geographic) traj = to_mercator(traj);
      save_point_cloud(cloud, cloud_path, CloudFormat::BinaryV1);
      save_trajectory(traj, traj_path);
      save_detections(config.ground_truth ? load_detections(*config.ground_truth) : std::vector<Detection>{},
                      gt_path);
      counts["points"] = cloud.size();
    } else {
      const SyntheticScene scene = generate_scene(config.scene);
      save_point_cloud(scene.cloud, cloud_path, CloudFormat::BinaryV1);
      save_trajectory(scene.trajectory, traj_path);
      save_detections(scene.ground_truth.items(), gt_path);
      save_json_file(to_json(config.scene), scene_dir / "scene.json");
      counts["points"] = scene.cloud.size();
    }
  });

  std::vector<TileFrame> frames;
  stage("rasterize", timings, [&] {
    const PointCloud cloud = load_point_cloud(cloud_path, CloudFormat::BinaryV1);
    const Trajectory traj = load_trajectory(traj_path, Frame::PlanarMeters);
    const PointCloud kept =
        config.elevation_filter ? elevation_filter(cloud, traj, config.elevation) : cloud;
    const GridIndex index(kept, kIndexCell);
    frames = plan_tiles(traj, config.tiles);
    const auto tiles = rasterize_tiles(index, frames, config.raster, config.jobs);
    for (std::size_t k = 0; k < tiles.size(); ++k) write_tile(tiles[k], tiles_dir / (tile_id(k) + ".png"));
    counts["filtered_points"] = kept.size();
    counts["tiles"] = tiles.size();
  });

  std::vector<Detection> detections;
  stage("detect", timings, [&] {
    std::size_t lanes = 0;
    for (std::size_t k = 0; k < frames.size(); ++k) {
      const BevTile tile = read_tile(tiles_dir / (tile_id(k) + ".png"));
      for (auto& d : detect_lane_markings(tile, tile_id(k), config.lanes)) {
        detections.push_back(std::move(d));
        ++lanes;
      }
    }
    // Poles are tall, so they are found in the unfiltered cloud.
    const PointCloud cloud = load_point_cloud(cloud_path, CloudFormat::BinaryV1);
    std::size_t poles = 0;
    for (auto& d : detect_poles(cloud, config.poles)) {
      const Vec3 bottom = d.descriptor.point(1);
      d.tile = tile_id(nearest_frame(frames, bottom.x(), bottom.y()));
      detections.push_back(std::move(d));
      ++poles;
    }
    save_detections(detections, out / "detections.json");
    counts["lane_detections"] = lanes;
    counts["pole_detections"] = poles;
    counts["detections"] = detections.size();
  });

  stage("refine", timings, [&] {
    const auto predictions = LabelSet(load_detections(out / "detections.json"));
    const auto gt_full = load_detections(gt_path);
    // Ground truth is cut to the same tiles as the predictions so lane pieces
    // are compared against lane pieces.
    std::vector<Detection> gt_tiled;
    std::vector<Detection> gt_poles;
    for (const auto& g : gt_full) {
      if (is_polyline(g.cls())) {
        for (std::size_t k = 0; k < frames.size(); ++k) {
          for (auto& piece : clip_polyline_to_tile(g, frames[k], tile_id(k))) gt_tiled.push_back(std::move(piece));
        }
      } else {
        Detection d = g;
        const Vec3 anchor = d.descriptor.point(d.cls() == ObjectClass::Pole ? 1 : 0);
        if (!frames.empty()) d.tile = tile_id(nearest_frame(frames, anchor.x(), anchor.y()));
        if (d.cls() == ObjectClass::Pole) gt_poles.push_back(d);
        gt_tiled.push_back(std::move(d));
      }
    }
    const LabelSet gt(std::move(gt_tiled));
    const RefinedLabelSet refined = refine(gt, predictions, config.match);
    save_json_file(refined_to_json(refined), out / "refined.json");
    counts["ground_truth"] = gt_full.size();
    counts["ground_truth_tiled"] = gt.size();
    counts["refined"] = refined.size();
    counts["refined_confirmed_gt"] = refined.count(Provenance::ConfirmedGT);
    counts["refined_high_conf_model"] = refined.count(Provenance::HighConfModel);

    std::vector<Detection> pred_poles;
    for (const auto& d : predictions) {
      if (d.cls() == ObjectClass::Pole) pred_poles.push_back(d);
    }
    const auto pole_matches = match(LabelSet(gt_poles), LabelSet(std::move(pred_poles)), config.match);
    report["pole_recall"] = gt_poles.empty() ? json(nullptr)
                                             : json(static_cast<double>(pole_matches.size()) /
                                                    static_cast<double>(gt_poles.size()));
  });

  LoopMetrics metrics;
  stage("route", timings, [&] {
    const auto predictions = load_detections(out / "detections.json");
    const RouteResult routed = route(predictions, config.route, wall_clock_seconds());
    ReviewStore store(store_dir);
    set_store_tiles_dir(store_dir, tiles_dir);
    store.ingest(routed);
    counts["auto_accepted"] = routed.accepted.size();
    counts["queued"] = routed.queue.size();
  });

  stage("export", timings, [&] {
    ReviewStore store(store_dir);
    const LabelSet feedback = store.export_feedback();
    save_detections(feedback.items(), out / "feedback.json");
    counts["feedback"] = feedback.size();
  });

  stage("metrics", timings, [&] {
    ReviewStore store(store_dir);
    metrics = store.metrics(config.metrics_window);
    report["automation_ratio"] = metrics.automation_ratio ? json(*metrics.automation_ratio) : json(nullptr);
  });

  report["seed"] = config.scene.seed;
  report["counts"] = counts;
  report["timings_ms"] = timings;
  report["artifacts"] = {{"cloud", cloud_path.string()},       {"trajectory", traj_path.string()},
                         {"ground_truth", gt_path.string()},   {"tiles", tiles_dir.string()},
                         {"detections", (out / "detections.json").string()},
                         {"refined", (out / "refined.json").string()},
                         {"store", store_dir.string()},        {"feedback", (out / "feedback.json").string()}};
  save_json_file(report, out / "report.json");
  return report;
}

}  // namespace thma
