#include "thma/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "thma/error.hpp"

namespace thma {

namespace {

constexpr int kPoleRingPoints = 8;
constexpr double kPoleRadius = 0.08;
constexpr double kPoleLevelStep = 0.05;
constexpr int kPoleIntensity = 90;
constexpr double kShoulder = 3.0;
constexpr double kSpeed = 10.0;  // m/s, only used for timestamps

std::string padded(std::size_t n, int width) {
  std::string s = std::to_string(n);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

}  // namespace

void SceneConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
  if (!(road_length > 0.0)) fail("road_length must be > 0");
  if (lane_count < 1) fail("lane_count must be >= 1");
  if (!(lane_width > 0.0)) fail("lane_width must be > 0");
  if (!(pole_spacing > 0.0)) fail("pole_spacing must be > 0");
  if (!(pole_height > 0.0)) fail("pole_height must be > 0");
  if (!(pole_offset >= 0.0)) fail("pole_offset must be >= 0");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (!(ground_spacing > 0.0) || !(paint_spacing > 0.0) || !(paint_width > 0.0)) fail("spacings must be > 0");
  if (!(pose_spacing > 0.0)) fail("pose_spacing must be > 0");
  if (ground_intensity < 0 || ground_intensity > 65535 || paint_intensity < 0 || paint_intensity > 65535 ||
      intensity_jitter < 0) {
    fail("intensities must fit 16 bits");
  }
  if (!std::isfinite(heading) || !std::isfinite(origin_x) || !std::isfinite(origin_y) || !std::isfinite(ground_z)) {
    fail("non-finite placement");
  }
}

nlohmann::json to_json(const SceneConfig& c) {
  return {{"road_length", c.road_length},       {"lane_count", c.lane_count},
          {"lane_width", c.lane_width},         {"pole_spacing", c.pole_spacing},
          {"pole_height", c.pole_height},       {"pole_offset", c.pole_offset},
          {"heading", c.heading},               {"origin_x", c.origin_x},
          {"origin_y", c.origin_y},             {"ground_z", c.ground_z},
          {"noise_sigma", c.noise_sigma},       {"dropout", c.dropout},
          {"ground_spacing", c.ground_spacing}, {"paint_spacing", c.paint_spacing},
          {"paint_width", c.paint_width},       {"ground_intensity", c.ground_intensity},
          {"paint_intensity", c.paint_intensity}, {"intensity_jitter", c.intensity_jitter},
          {"pose_spacing", c.pose_spacing},     {"sensor_height", c.sensor_height},
          {"seed", c.seed}};
}

SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig c;
  try {
    if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "scene config must be an object");
    c.road_length = j.value("road_length", c.road_length);
    c.lane_count = j.value("lane_count", c.lane_count);
    c.lane_width = j.value("lane_width", c.lane_width);
    c.pole_spacing = j.value("pole_spacing", c.pole_spacing);
    c.pole_height = j.value("pole_height", c.pole_height);
    c.pole_offset = j.value("pole_offset", c.pole_offset);
    c.heading = j.value("heading", c.heading);
    c.origin_x = j.value("origin_x", c.origin_x);
    c.origin_y = j.value("origin_y", c.origin_y);
    c.ground_z = j.value("ground_z", c.ground_z);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.dropout = j.value("dropout", c.dropout);
    c.ground_spacing = j.value("ground_spacing", c.ground_spacing);
    c.paint_spacing = j.value("paint_spacing", c.paint_spacing);
    c.paint_width = j.value("paint_width", c.paint_width);
    c.ground_intensity = j.value("ground_intensity", c.ground_intensity);
    c.paint_intensity = j.value("paint_intensity", c.paint_intensity);
    c.intensity_jitter = j.value("intensity_jitter", c.intensity_jitter);
    c.pose_spacing = j.value("pose_spacing", c.pose_spacing);
    c.sensor_height = j.value("sensor_height", c.sensor_height);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("scene config: ") + e.what());
  }
  return c;
}

std::size_t expected_pole_count(const SceneConfig& c) {
  return static_cast<std::size_t>(std::floor(c.road_length / c.pole_spacing + 1e-9)) + 1;
}

SyntheticScene generate_scene(const SceneConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> noise(0.0, c.noise_sigma > 0.0 ? c.noise_sigma : 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> jitter(-c.intensity_jitter, c.intensity_jitter);

  const double fx = std::cos(c.heading);
  const double fy = std::sin(c.heading);
  const double road_width = c.lane_count * c.lane_width;

  // Road coordinates: `along` from the start, `left` from the rightmost boundary.
  auto world = [&](double along, double left, double z) {
    return Vec3(c.origin_x + along * fx - left * fy, c.origin_y + along * fy + left * fx, z);
  };

  std::vector<Point3> points;
  auto emit = [&](const Vec3& p, int intensity, double along) {
    if (c.dropout > 0.0 && unit(rng) < c.dropout) return;
    Point3 q{p.x(), p.y(), p.z(), 0, along / kSpeed};
    if (c.noise_sigma > 0.0) {
      q.x += noise(rng);
      q.y += noise(rng);
      q.z += noise(rng);
    }
    const int value = c.intensity_jitter > 0 ? intensity + jitter(rng) : intensity;
    q.intensity = static_cast<std::uint16_t>(std::clamp(value, 0, 65535));
    points.push_back(q);
  };

  const auto steps = [](double extent, double spacing) {
    return static_cast<long>(std::floor(extent / spacing + 1e-9));
  };

  // Ground lattice including shoulders on both sides.
  const long ground_cols = steps(road_width + 2.0 * kShoulder, c.ground_spacing);
  const long ground_rows = steps(c.road_length, c.ground_spacing);
  for (long i = 0; i <= ground_rows; ++i) {
    const double along = i * c.ground_spacing;
    for (long j = 0; j <= ground_cols; ++j) {
      emit(world(along, -kShoulder + j * c.ground_spacing, c.ground_z), c.ground_intensity, along);
    }
  }

  // Painted boundaries: lane_count + 1 solid stripes.
  const long paint_rows = steps(c.road_length, c.paint_spacing);
  const long paint_cols = steps(c.paint_width, c.paint_spacing);
  for (int b = 0; b <= c.lane_count; ++b) {
    const double center = b * c.lane_width;
    for (long i = 0; i <= paint_rows; ++i) {
      const double along = i * c.paint_spacing;
      for (long j = 0; j <= paint_cols; ++j) {
        emit(world(along, center - c.paint_width / 2.0 + j * c.paint_spacing, c.ground_z), c.paint_intensity, along);
      }
    }
  }

  // Poles: vertical rings from the ground to the apex.
  const std::size_t pole_count = expected_pole_count(c);
  const long levels = steps(c.pole_height, kPoleLevelStep);
  std::vector<Detection> gt;
  for (std::size_t k = 0; k < pole_count; ++k) {
    const double along = static_cast<double>(k) * c.pole_spacing;
    const Vec3 base = world(along, -c.pole_offset, c.ground_z);
    for (long level = 0; level <= levels; ++level) {
      const double z = level == levels ? c.ground_z + c.pole_height : c.ground_z + level * kPoleLevelStep;
      for (int r = 0; r < kPoleRingPoints; ++r) {
        const double a = 2.0 * std::numbers::pi * r / kPoleRingPoints;
        emit(Vec3(base.x() + kPoleRadius * std::cos(a), base.y() + kPoleRadius * std::sin(a), z), kPoleIntensity,
             along);
      }
    }
    Detection d;
    d.id = "gt-pole-" + padded(k, 4);
    d.descriptor = make_pole(Vec3(base.x(), base.y(), c.ground_z + c.pole_height), base);
    d.confidence = 1.0;
    d.source = Source::Human;
    gt.push_back(std::move(d));
  }

  for (int b = 0; b <= c.lane_count; ++b) {
    constexpr int kSegments = 8;
    std::vector<Vec3> vertices;
    for (int s = 0; s <= kSegments; ++s) {
      vertices.push_back(world(c.road_length * s / kSegments, b * c.lane_width, c.ground_z));
    }
    Detection d;
    d.id = "gt-lane-" + padded(static_cast<std::size_t>(b), 2);
    d.descriptor = make_polyline(ObjectClass::LaneMarking, vertices);
    d.confidence = 1.0;
    d.source = Source::Human;
    gt.push_back(std::move(d));
  }

  // Vehicle drives along the road center at sensor height.
  std::vector<Pose> poses;
  const long pose_steps = steps(c.road_length, c.pose_spacing);
  for (long i = 0; i <= pose_steps; ++i) {
    const double along = i * c.pose_spacing;
    Pose pose;
    const Vec3 p = world(along, road_width / 2.0, c.ground_z + c.sensor_height);
    pose.position = {p.x(), p.y(), p.z(), 0, along / kSpeed};
    pose.heading = c.heading;
    pose.time = along / kSpeed;
    poses.push_back(pose);
  }
  if (static_cast<double>(pose_steps) * c.pose_spacing < c.road_length - 1e-9) {
    Pose pose;
    const Vec3 p = world(c.road_length, road_width / 2.0, c.ground_z + c.sensor_height);
    pose.position = {p.x(), p.y(), p.z(), 0, c.road_length / kSpeed};
    pose.heading = c.heading;
    pose.time = c.road_length / kSpeed;
    poses.push_back(pose);
  }

  return {PointCloud(std::move(points), Frame::PlanarMeters), Trajectory(std::move(poses), Frame::PlanarMeters),
          LabelSet(std::move(gt))};
}

}  // namespace thma
