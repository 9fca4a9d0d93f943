#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "thma/pointcloud.hpp"
#include "thma/spatial_index.hpp"

namespace thma {

// Georeferencing of one BEV tile. The tile is rotated so the travel direction
// points towards row 0 ("up"); columns grow to the right of travel.
struct TileFrame {
  double center_x = 0.0;
  double center_y = 0.0;
  double heading = 0.0;
  double resolution = 0.05;  // meters per pixel
  int size = 1024;           // pixels per side
  double ground_ref_z = 0.0;
  double z_span = 8.0;  // vertical window mapped onto 0..255, centered on ground_ref_z

  void validate() const;
  double footprint() const { return resolution * size; }

  friend bool operator==(const TileFrame&, const TileFrame&) = default;
};

struct PixelPosition {
  double col = 0.0;
  double row = 0.0;
};

// Continuous pixel coordinates; floor() of each gives the pixel a point lands in.
PixelPosition world_to_pixel(const TileFrame& frame, double x, double y);
// Inverse of world_to_pixel; returns planar (x, y).
std::pair<double, double> pixel_to_world(const TileFrame& frame, double col, double row);

struct TilePlanConfig {
  double resolution = 0.05;
  int size = 1024;
  double overlap = 0.0;  // fraction of footprint shared by consecutive tiles, [0, 0.9]
  double sensor_height = 2.0;
  double z_span = 8.0;
};

// Frames centered on arc-length samples spaced footprint * (1 - overlap) apart,
// each oriented along the local travel direction.
std::vector<TileFrame> plan_tiles(const Trajectory& trajectory, const TilePlanConfig& config = {});

struct RasterConfig {
  std::uint16_t intensity_max_raw = 255;  // raw value mapped to 255
};

struct BevTile {
  static constexpr int kChannels = 3;
  enum Channel { Intensity = 0, HighestZ = 1, LowestZ = 2 };

  TileFrame frame;
  std::vector<std::uint8_t> channels;   // size * size * 3, row-major, interleaved
  std::vector<std::uint8_t> occupancy;  // size * size, 0 or 1

  BevTile() = default;
  explicit BevTile(const TileFrame& f);

  int size() const { return frame.size; }
  std::uint8_t at(int row, int col, int channel) const {
    return channels[(static_cast<std::size_t>(row) * frame.size + col) * kChannels + channel];
  }
  bool occupied(int row, int col) const {
    return occupancy[static_cast<std::size_t>(row) * frame.size + col] != 0;
  }
  std::size_t occupied_count() const;

  friend bool operator==(const BevTile&, const BevTile&) = default;
};

// Round-half-up linear maps onto 0..255 with clamping.
std::uint8_t quantize_intensity(std::uint16_t raw, std::uint16_t max_raw);
std::uint8_t quantize_height(double z, const TileFrame& frame);

// Per pixel: channel 0 = max intensity, channel 1 = max z, channel 2 = min z.
BevTile rasterize(const PointCloud& cloud, const TileFrame& frame, const RasterConfig& config = {});
BevTile rasterize(const GridIndex& index, const TileFrame& frame, const RasterConfig& config = {});

// Rasterizes every frame against a shared index using up to `jobs` threads.
// Output order matches `frames`.
std::vector<BevTile> rasterize_tiles(const GridIndex& index, std::span<const TileFrame> frames,
                                     const RasterConfig& config = {}, unsigned jobs = 1);

// Tile files: `<stem>.png` (RGB), `<stem>.json` (frame sidecar) and
// `<stem>.occ.png` (1-bit occupancy). `path` names the RGB PNG.
void write_tile(const BevTile& tile, const std::filesystem::path& path);
BevTile read_tile(const std::filesystem::path& path);
TileFrame read_tile_frame(const std::filesystem::path& png_path);

std::filesystem::path tile_sidecar_path(const std::filesystem::path& png_path);
std::filesystem::path tile_occupancy_path(const std::filesystem::path& png_path);

}  // namespace thma
