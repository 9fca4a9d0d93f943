#pragma once

#include <cstdint>
#include <json.hpp>

#include "thma/distill.hpp"
#include "thma/pointcloud.hpp"

namespace thma {

// Straight road with painted lane boundaries and roadside poles. Everything is
// planar meters; the road starts at the origin and runs along `heading`.
struct SceneConfig {
  double road_length = 100.0;
  int lane_count = 2;
  double lane_width = 3.5;
  double pole_spacing = 25.0;
  double pole_height = 6.0;
  double pole_offset = 1.5;  // meters right of the outermost lane boundary
  double heading = 0.0;
  double origin_x = 0.0;
  double origin_y = 0.0;
  double ground_z = 45.0;
  double noise_sigma = 0.0;  // gaussian xyz jitter, meters
  double dropout = 0.0;      // probability of dropping each point
  double ground_spacing = 0.1;
  double paint_spacing = 0.025;
  double paint_width = 0.15;
  int ground_intensity = 30;
  int paint_intensity = 210;
  int intensity_jitter = 25;
  double pose_spacing = 1.0;
  double sensor_height = 2.0;
  std::uint64_t seed = 7;

  void validate() const;  // throws InvalidConfig
};

nlohmann::json to_json(const SceneConfig& config);
// Missing keys keep their defaults.
SceneConfig scene_config_from_json(const nlohmann::json& j);

struct SyntheticScene {
  PointCloud cloud;
  Trajectory trajectory;
  LabelSet ground_truth;  // poles and full-length lane boundary polylines
};

SyntheticScene generate_scene(const SceneConfig& config);

// Number of poles the generator places: one every pole_spacing from 0 to the
// road length inclusive.
std::size_t expected_pole_count(const SceneConfig& config);

}  // namespace thma
