#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "thma/bev.hpp"
#include "thma/descriptor.hpp"
#include "thma/pointcloud.hpp"

// Heuristic stand-ins for the learned 2.5D and 3D detectors. Their confidence
// values are monotone surrogates, not calibrated probabilities.
namespace thma {

struct LaneDetectorConfig {
  int intensity_threshold = 128;  // channel 0 must be strictly above this
  std::size_t min_pixels = 24;    // smaller components are treated as speckle
  std::size_t max_vertices = 8;
};

// Thresholds the intensity channel, extracts 8-connected components and traces
// one polyline per component through per-line centroids. Vertices are planar
// world coordinates; confidence is the mean normalized intensity.
std::vector<Detection> detect_lane_markings(const BevTile& tile, const std::string& tile_id,
                                            const LaneDetectorConfig& config = {});

// Traced centerline of one component in continuous pixel coordinates
// (col, row), before vertex reduction. Exposed for tests.
struct PixelPolyline {
  std::vector<std::pair<double, double>> points;
  double mean_intensity = 0.0;  // 0..255
  std::size_t pixel_count = 0;
};
std::vector<PixelPolyline> trace_lane_components(const BevTile& tile, const LaneDetectorConfig& config = {});

struct PoleDetectorConfig {
  double cell = 1.0;             // xy clustering cell, meters
  double min_height = 3.0;       // minimum vertical extent above ground
  double ground_clearance = 0.3; // points this far above local ground count as structure
};

// Grid-clusters elevated points; compact clusters (xy spread <= cell / 2) that
// rise at least min_height above ground become poles with bottom = lowest and
// apex = highest column point. Confidence = min(1, extent / (2 * min_height)).
std::vector<Detection> detect_poles(const PointCloud& cloud, const PoleDetectorConfig& config = {});

}  // namespace thma
