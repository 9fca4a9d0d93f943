#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

namespace thma {

// Coordinate frame shared by every point of a cloud or trajectory.
enum class Frame : std::uint8_t { Geographic = 0, PlanarMeters = 1 };

// Geographic frame: x = longitude (deg), y = latitude (deg), z = ellipsoidal
// height (m). Planar frame: x, y, z in meters.
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  std::uint16_t intensity = 0;  // raw sensor value, scaled at rasterization
  double time = 0.0;

  friend bool operator==(const Point3&, const Point3&) = default;
};

inline constexpr double kEarthRadius = 6378137.0;
inline constexpr double kMercatorMaxLatitude = 85.06;

// Maps any angle onto [-pi, pi).
double normalize_angle(double radians);

bool in_mercator_band(double lon_deg, double lat_deg);

struct Pose {
  Point3 position;
  double heading = 0.0;  // counterclockwise from +x (east), direction of travel
  double time = 0.0;
};

// Ordered vehicle track. Construction enforces at least one pose and strictly
// increasing time, and normalizes headings.
class Trajectory {
 public:
  Trajectory(std::vector<Pose> poses, Frame frame);

  std::span<const Pose> poses() const { return *poses_; }
  std::size_t size() const { return poses_->size(); }
  const Pose& operator[](std::size_t i) const { return (*poses_)[i]; }
  Frame frame() const { return frame_; }

  // Index of the pose closest to (x, y) in the horizontal plane; ties go to the
  // lower index.
  std::size_t nearest_pose(double x, double y) const;

  // Horizontal arc length from the first pose to pose i.
  double arc_length_at(std::size_t i) const { return arc_length_[i]; }
  double length() const { return arc_length_.back(); }

 private:
  struct KdNode {
    std::uint32_t pose = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint8_t axis = 0;
  };

  std::int32_t build(std::vector<std::uint32_t>& ids, std::size_t lo, std::size_t hi, int depth);
  void search(std::int32_t node, double x, double y, std::size_t& best, double& best_d2) const;

  std::shared_ptr<const std::vector<Pose>> poses_;
  Frame frame_;
  std::vector<double> arc_length_;
  std::vector<KdNode> kd_;
  std::int32_t kd_root_ = -1;
};

// Immutable point set. Copies share the underlying storage.
class PointCloud {
 public:
  PointCloud() : points_(std::make_shared<const std::vector<Point3>>()) {}
  PointCloud(std::vector<Point3> points, Frame frame);

  std::span<const Point3> points() const { return *points_; }
  const Point3& operator[](std::size_t i) const { return (*points_)[i]; }
  std::size_t size() const { return points_->size(); }
  bool empty() const { return points_->empty(); }
  Frame frame() const { return frame_; }

  std::shared_ptr<const std::vector<Point3>> storage() const { return points_; }

 private:
  std::shared_ptr<const std::vector<Point3>> points_;
  Frame frame_ = Frame::PlanarMeters;
};

enum class CloudFormat { BinaryV1, Csv };

// .csv selects Csv, anything else BinaryV1.
CloudFormat cloud_format_for(const std::filesystem::path& path);

// CSV files carry no frame flag; `csv_frame` supplies it.
PointCloud load_point_cloud(const std::filesystem::path& path, CloudFormat format,
                            Frame csv_frame = Frame::Geographic);
void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                      CloudFormat format);

Trajectory load_trajectory(const std::filesystem::path& path, Frame frame = Frame::Geographic);
void save_trajectory(const Trajectory& trajectory, const std::filesystem::path& path);

// Spherical Web Mercator, R = 6378137 m.
Point3 to_mercator(const Point3& geographic);
Point3 from_mercator(const Point3& planar);
PointCloud to_mercator(const PointCloud& cloud);
Trajectory to_mercator(const Trajectory& trajectory);

struct ElevationBand {
  double below = 1.0;
  double above = 3.0;
  double sensor_height = 2.0;  // ground = nearest pose z - sensor_height

  static ElevationBand disabled() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return {inf, inf, 2.0};
  }
};

// Keeps points whose z lies within [ground - below, ground + above], preserving
// order.
PointCloud elevation_filter(const PointCloud& cloud, const Trajectory& trajectory,
                            const ElevationBand& band = {});

}  // namespace thma
