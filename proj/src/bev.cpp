#include "thma/bev.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <thread>

#include "thma/error.hpp"

namespace thma {

void TileFrame::validate() const {
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw Error(ErrorCode::InvalidArgument, "tile resolution must be > 0");
  }
  if (size <= 0) throw Error(ErrorCode::InvalidArgument, "tile size must be > 0");
  if (!(z_span > 0.0) || !std::isfinite(z_span)) throw Error(ErrorCode::InvalidArgument, "z_span must be > 0");
  if (!std::isfinite(center_x) || !std::isfinite(center_y) || !std::isfinite(heading) ||
      !std::isfinite(ground_ref_z)) {
    throw Error(ErrorCode::InvalidArgument, "tile frame has non-finite fields");
  }
}

PixelPosition world_to_pixel(const TileFrame& frame, double x, double y) {
  const double c = std::cos(frame.heading);
  const double s = std::sin(frame.heading);
  const double dx = x - frame.center_x;
  const double dy = y - frame.center_y;
  const double forward = dx * c + dy * s;
  const double left = dy * c - dx * s;
  const double half = frame.size / 2.0;
  return {half - left / frame.resolution, half - forward / frame.resolution};
}

std::pair<double, double> pixel_to_world(const TileFrame& frame, double col, double row) {
  const double half = frame.size / 2.0;
  const double forward = (half - row) * frame.resolution;
  const double left = (half - col) * frame.resolution;
  const double c = std::cos(frame.heading);
  const double s = std::sin(frame.heading);
  return {frame.center_x + forward * c - left * s, frame.center_y + forward * s + left * c};
}

// ---------------------------------------------------------------------------
// Planning

std::vector<TileFrame> plan_tiles(const Trajectory& trajectory, const TilePlanConfig& config) {
  if (trajectory.frame() != Frame::PlanarMeters) {
    throw Error(ErrorCode::FrameMismatch, "plan_tiles needs a planar trajectory");
  }
  if (!(config.overlap >= 0.0 && config.overlap <= 0.9)) {
    throw Error(ErrorCode::InvalidArgument, "overlap must be in [0, 0.9]");
  }
  TileFrame proto;
  proto.resolution = config.resolution;
  proto.size = config.size;
  proto.z_span = config.z_span;
  proto.validate();

  auto frame_at = [&](double x, double y, double heading) {
    TileFrame f = proto;
    f.center_x = x;
    f.center_y = y;
    f.heading = normalize_angle(heading);
    f.ground_ref_z = trajectory[trajectory.nearest_pose(x, y)].position.z - config.sensor_height;
    return f;
  };

  const double length = trajectory.length();
  if (trajectory.size() == 1 || length == 0.0) {
    const auto& p = trajectory[0];
    return {frame_at(p.position.x, p.position.y, p.heading)};
  }

  const double spacing = proto.footprint() * (1.0 - config.overlap);
  const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(length / spacing)));

  std::vector<TileFrame> frames;
  frames.reserve(count);
  std::size_t seg = 1;
  for (std::size_t k = 0; k < count; ++k) {
    const double s = std::min(length, (static_cast<double>(k) + 0.5) * spacing);
    while (seg + 1 < trajectory.size() && trajectory.arc_length_at(seg) < s) ++seg;
    // Skip zero-length segments so the heading comes from actual motion.
    std::size_t a = seg - 1;
    std::size_t b = seg;
    while (b + 1 < trajectory.size() && trajectory.arc_length_at(b) == trajectory.arc_length_at(a)) ++b;
    const auto& pa = trajectory[a].position;
    const auto& pb = trajectory[b].position;
    const double seg_len = trajectory.arc_length_at(b) - trajectory.arc_length_at(a);
    double heading = trajectory[a].heading;
    double x = pa.x;
    double y = pa.y;
    if (seg_len > 0.0) {
      const double t = std::clamp((s - trajectory.arc_length_at(a)) / seg_len, 0.0, 1.0);
      x = pa.x + t * (pb.x - pa.x);
      y = pa.y + t * (pb.y - pa.y);
      heading = std::atan2(pb.y - pa.y, pb.x - pa.x);
    }
    frames.push_back(frame_at(x, y, heading));
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Rasterization

BevTile::BevTile(const TileFrame& f)
    : frame(f),
      channels(static_cast<std::size_t>(f.size) * f.size * kChannels, 0),
      occupancy(static_cast<std::size_t>(f.size) * f.size, 0) {}

std::size_t BevTile::occupied_count() const {
  return static_cast<std::size_t>(std::count(occupancy.begin(), occupancy.end(), std::uint8_t{1}));
}

namespace {

std::uint8_t quantize_unit(double t) {
  if (!(t > 0.0)) return 0;
  if (t >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::floor(t * 255.0 + 0.5));
}

// Per-pixel running extrema; quantized once at the end.
class Accumulator {
 public:
  explicit Accumulator(const TileFrame& frame)
      : frame_(frame),
        cos_(std::cos(frame.heading)),
        sin_(std::sin(frame.heading)),
        half_(frame.size / 2.0),
        max_intensity_(static_cast<std::size_t>(frame.size) * frame.size, -1),
        max_z_(max_intensity_.size(), -std::numeric_limits<double>::infinity()),
        min_z_(max_intensity_.size(), std::numeric_limits<double>::infinity()) {}

  void add(const Point3& p) {
    const double dx = p.x - frame_.center_x;
    const double dy = p.y - frame_.center_y;
    const double forward = dx * cos_ + dy * sin_;
    const double left = dy * cos_ - dx * sin_;
    const double col = half_ - left / frame_.resolution;
    const double row = half_ - forward / frame_.resolution;
    const double n = frame_.size;
    if (!(col >= 0.0 && col < n && row >= 0.0 && row < n)) return;
    const std::size_t cell = static_cast<std::size_t>(row) * frame_.size + static_cast<std::size_t>(col);
    max_intensity_[cell] = std::max<std::int32_t>(max_intensity_[cell], p.intensity);
    max_z_[cell] = std::max(max_z_[cell], p.z);
    min_z_[cell] = std::min(min_z_[cell], p.z);
  }

  BevTile finish(const RasterConfig& config) const {
    BevTile tile(frame_);
    for (std::size_t cell = 0; cell < max_intensity_.size(); ++cell) {
      if (max_intensity_[cell] < 0) continue;
      tile.occupancy[cell] = 1;
      auto* px = &tile.channels[cell * BevTile::kChannels];
      px[BevTile::Intensity] =
          quantize_intensity(static_cast<std::uint16_t>(max_intensity_[cell]), config.intensity_max_raw);
      px[BevTile::HighestZ] = quantize_height(max_z_[cell], frame_);
      px[BevTile::LowestZ] = quantize_height(min_z_[cell], frame_);
    }
    return tile;
  }

 private:
  TileFrame frame_;
  double cos_;
  double sin_;
  double half_;
  std::vector<std::int32_t> max_intensity_;
  std::vector<double> max_z_;
  std::vector<double> min_z_;
};

void check_inputs(const PointCloud& cloud, const TileFrame& frame) {
  if (cloud.frame() != Frame::PlanarMeters) {
    throw Error(ErrorCode::FrameMismatch, "rasterize needs a planar cloud");
  }
  frame.validate();
}

}  // namespace

std::uint8_t quantize_intensity(std::uint16_t raw, std::uint16_t max_raw) {
  if (max_raw == 0) return raw > 0 ? 255 : 0;
  return quantize_unit(static_cast<double>(raw) / static_cast<double>(max_raw));
}

std::uint8_t quantize_height(double z, const TileFrame& frame) {
  const double low = frame.ground_ref_z - frame.z_span / 2.0;
  return quantize_unit((z - low) / frame.z_span);
}

BevTile rasterize(const PointCloud& cloud, const TileFrame& frame, const RasterConfig& config) {
  check_inputs(cloud, frame);
  Accumulator acc(frame);
  for (const auto& p : cloud.points()) acc.add(p);
  return acc.finish(config);
}

BevTile rasterize(const GridIndex& index, const TileFrame& frame, const RasterConfig& config) {
  check_inputs(index.cloud(), frame);
  // Circumscribed square of the rotated footprint.
  const double reach = frame.footprint() * std::numbers::sqrt2 / 2.0 + frame.resolution;
  Accumulator acc(frame);
  const auto& cloud = index.cloud();
  index.visit(frame.center_x - reach, frame.center_y - reach, frame.center_x + reach,
              frame.center_y + reach, [&](std::uint32_t i) { acc.add(cloud[i]); });
  return acc.finish(config);
}

std::vector<BevTile> rasterize_tiles(const GridIndex& index, std::span<const TileFrame> frames,
                                     const RasterConfig& config, unsigned jobs) {
  std::vector<BevTile> tiles(frames.size());
  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(frames.size())));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&] {
    for (std::size_t i = next++; i < frames.size(); i = next++) {
      try {
        tiles[i] = rasterize(index, frames[i], config);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return tiles;
}

}  // namespace thma
