#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "thma/bev.hpp"
#include "thma/detect.hpp"
#include "thma/distill.hpp"
#include "thma/pointcloud.hpp"
#include "thma/review_store.hpp"
#include "thma/synth.hpp"

namespace thma {

struct PipelineConfig {
  std::filesystem::path out_dir = "run";

  // Real inputs replace the synthetic scene when `points` is set; `trajectory`
  // is then required and `ground_truth` optional.
  std::optional<std::filesystem::path> points;
  std::optional<std::filesystem::path> trajectory;
  std::optional<std::filesystem::path> ground_truth;
  Frame input_frame = Frame::Geographic;  // frame of CSV inputs

  SceneConfig scene;
  TilePlanConfig tiles;
  ElevationBand elevation;
  bool elevation_filter = true;
  RasterConfig raster;
  LaneDetectorConfig lanes;
  PoleDetectorConfig poles;
  MatchConfig match;
  RouteConfig route;
  double metrics_window = 3600.0;
  unsigned jobs = 1;

  // Throws InvalidConfig; touches nothing on disk.
  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& config);
// Keys absent from `j` keep the values already in `base`.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = {});

// Stage names in execution order.
inline constexpr std::array<std::string_view, 7> kStages = {"synth",  "rasterize", "detect", "refine",
                                                             "route", "export",    "metrics"};

// Runs every stage in order, leaving each stage's artifacts under out_dir and a
// run report at `<out_dir>/report.json`. Failures surface as StageFailed errors
// naming the stage.
nlohmann::json run_pipeline(const PipelineConfig& config);

// Report with wall-clock fields removed, for determinism comparisons.
nlohmann::json strip_timings(nlohmann::json report);

// Tile id of the tile at position k in a plan.
std::string tile_id(std::size_t k);

// Pieces of a polyline detection inside a tile footprint, one detection per
// contiguous run. Ids are "<id>@<tile>" plus "-<k>" for runs after the first.
std::vector<Detection> clip_polyline_to_tile(const Detection& d, const TileFrame& frame, const std::string& tile);

}  // namespace thma
