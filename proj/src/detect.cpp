#include "thma/detect.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <set>

namespace thma {

namespace {

std::string padded(std::size_t n, int width) {
  std::string s = std::to_string(n);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

double decode_height(std::uint8_t q, const TileFrame& frame) {
  return frame.ground_ref_z - frame.z_span / 2.0 + frame.z_span * (static_cast<double>(q) / 255.0);
}

struct Component {
  std::vector<std::pair<int, int>> pixels;  // (row, col)
};

std::vector<Component> connected_components(const BevTile& tile, int threshold) {
  const int n = tile.size();
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(n) * n, 0);
  auto bright = [&](int r, int c) { return tile.at(r, c, BevTile::Intensity) > threshold; };

  std::vector<Component> out;
  std::deque<std::pair<int, int>> frontier;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const auto idx = static_cast<std::size_t>(r) * n + c;
      if (seen[idx] || !bright(r, c)) continue;
      Component comp;
      seen[idx] = 1;
      frontier.emplace_back(r, c);
      while (!frontier.empty()) {
        auto [pr, pc] = frontier.front();
        frontier.pop_front();
        comp.pixels.emplace_back(pr, pc);
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = pr + dr;
            const int cc = pc + dc;
            if (rr < 0 || rr >= n || cc < 0 || cc >= n) continue;
            const auto j = static_cast<std::size_t>(rr) * n + cc;
            if (seen[j] || !bright(rr, cc)) continue;
            seen[j] = 1;
            frontier.emplace_back(rr, cc);
          }
        }
      }
      out.push_back(std::move(comp));
    }
  }
  return out;
}

}  // namespace

std::vector<PixelPolyline> trace_lane_components(const BevTile& tile, const LaneDetectorConfig& config) {
  std::vector<PixelPolyline> out;
  for (const auto& comp : connected_components(tile, config.intensity_threshold)) {
    if (comp.pixels.size() < config.min_pixels) continue;
    int rmin = std::numeric_limits<int>::max(), rmax = -1;
    int cmin = std::numeric_limits<int>::max(), cmax = -1;
    double intensity = 0.0;
    for (auto [r, c] : comp.pixels) {
      rmin = std::min(rmin, r);
      rmax = std::max(rmax, r);
      cmin = std::min(cmin, c);
      cmax = std::max(cmax, c);
      intensity += tile.at(r, c, BevTile::Intensity);
    }

    // Trace along the longer extent: one centroid per row for stripes running
    // with travel, one per column otherwise.
    const bool by_row = (rmax - rmin) >= (cmax - cmin);
    const int lo = by_row ? rmin : cmin;
    const int span = (by_row ? rmax : cmax) - lo + 1;
    std::vector<double> sum(static_cast<std::size_t>(span), 0.0);
    std::vector<int> count(static_cast<std::size_t>(span), 0);
    for (auto [r, c] : comp.pixels) {
      const auto k = static_cast<std::size_t>((by_row ? r : c) - lo);
      sum[k] += by_row ? c : r;
      ++count[k];
    }

    PixelPolyline line;
    line.pixel_count = comp.pixels.size();
    line.mean_intensity = intensity / static_cast<double>(comp.pixels.size());
    for (std::size_t k = 0; k < sum.size(); ++k) {
      if (count[k] == 0) continue;
      const double across = sum[k] / count[k] + 0.5;
      const double along = static_cast<double>(lo) + static_cast<double>(k) + 0.5;
      line.points.emplace_back(by_row ? across : along, by_row ? along : across);
    }
    // Row 0 is ahead of the vehicle; emit row-traced lines in travel order.
    if (by_row) std::reverse(line.points.begin(), line.points.end());
    out.push_back(std::move(line));
  }
  return out;
}

std::vector<Detection> detect_lane_markings(const BevTile& tile, const std::string& tile_id,
                                            const LaneDetectorConfig& config) {
  std::vector<Detection> out;
  const auto max_vertices = std::max<std::size_t>(2, config.max_vertices);
  std::size_t k = 0;
  for (const auto& line : trace_lane_components(tile, config)) {
    if (line.points.size() < 2) continue;

    double low_sum = 0.0;
    std::size_t low_count = 0;
    for (const auto& [col, row] : line.points) {
      const int r = std::clamp(static_cast<int>(row), 0, tile.size() - 1);
      const int c = std::clamp(static_cast<int>(col), 0, tile.size() - 1);
      if (tile.occupied(r, c)) {
        low_sum += decode_height(tile.at(r, c, BevTile::LowestZ), tile.frame);
        ++low_count;
      }
    }
    const double z = low_count > 0 ? low_sum / static_cast<double>(low_count) : tile.frame.ground_ref_z;

    std::vector<Vec3> vertices;
    const std::size_t n = line.points.size();
    const std::size_t keep = std::min(n, max_vertices);
    for (std::size_t i = 0; i < keep; ++i) {
      const std::size_t src = keep == 1 ? 0 : static_cast<std::size_t>(std::llround(
                                                  static_cast<double>(i) * static_cast<double>(n - 1) /
                                                  static_cast<double>(keep - 1)));
      const auto [x, y] = pixel_to_world(tile.frame, line.points[src].first, line.points[src].second);
      vertices.emplace_back(x, y, z);
    }

    Detection d;
    d.id = tile_id + "-lane-" + padded(k++, 3);
    d.descriptor = make_polyline(ObjectClass::LaneMarking, vertices);
    d.confidence = std::clamp(line.mean_intensity / 255.0, 0.0, 1.0);
    d.source = Source::Baseline;
    d.tile = tile_id;
    validate(d);
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Detection> detect_poles(const PointCloud& cloud, const PoleDetectorConfig& config) {
  using Key = std::pair<long, long>;
  struct Cell {
    double min_z = std::numeric_limits<double>::infinity();
    std::vector<std::uint32_t> points;
  };

  std::map<Key, Cell> cells;
  auto key_of = [&](const Point3& p) {
    return Key{static_cast<long>(std::floor(p.x / config.cell)), static_cast<long>(std::floor(p.y / config.cell))};
  };
  for (std::uint32_t i = 0; i < cloud.size(); ++i) {
    auto& cell = cells[key_of(cloud[i])];
    cell.min_z = std::min(cell.min_z, cloud[i].z);
    cell.points.push_back(i);
  }

  auto local_ground = [&](const Key& k) {
    double g = std::numeric_limits<double>::infinity();
    for (long dx = -1; dx <= 1; ++dx) {
      for (long dy = -1; dy <= 1; ++dy) {
        auto it = cells.find({k.first + dx, k.second + dy});
        if (it != cells.end()) g = std::min(g, it->second.min_z);
      }
    }
    return g;
  };

  std::map<Key, std::vector<std::uint32_t>> elevated;
  std::map<Key, double> ground_of;
  for (const auto& [key, cell] : cells) {
    const double ground = local_ground(key);
    ground_of[key] = ground;
    for (auto i : cell.points) {
      if (cloud[i].z > ground + config.ground_clearance) elevated[key].push_back(i);
    }
  }

  std::vector<Detection> out;
  std::set<Key> visited;
  for (const auto& [seed, unused] : elevated) {
    if (visited.contains(seed)) continue;
    std::vector<Key> comp;
    std::deque<Key> frontier{seed};
    visited.insert(seed);
    while (!frontier.empty()) {
      Key k = frontier.front();
      frontier.pop_front();
      comp.push_back(k);
      for (long dx = -1; dx <= 1; ++dx) {
        for (long dy = -1; dy <= 1; ++dy) {
          Key nb{k.first + dx, k.second + dy};
          if (elevated.contains(nb) && !visited.contains(nb)) {
            visited.insert(nb);
            frontier.push_back(nb);
          }
        }
      }
    }

    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    double ground = std::numeric_limits<double>::infinity();
    std::uint32_t apex = 0;
    bool have_apex = false;
    for (const auto& k : comp) {
      ground = std::min(ground, ground_of[k]);
      for (auto i : elevated[k]) {
        const auto& p = cloud[i];
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
        if (!have_apex || p.z > cloud[apex].z || (p.z == cloud[apex].z && i < apex)) {
          apex = i;
          have_apex = true;
        }
      }
    }
    const double extent = cloud[apex].z - ground;
    const double spread = std::max(xmax - xmin, ymax - ymin);
    if (extent < config.min_height || spread > config.cell / 2.0) continue;

    // Lowest point under the column footprint, ground returns included.
    constexpr double kMargin = 0.05;
    std::uint32_t bottom = apex;
    for (const auto& k : comp) {
      for (long dx = -1; dx <= 1; ++dx) {
        for (long dy = -1; dy <= 1; ++dy) {
          auto it = cells.find({k.first + dx, k.second + dy});
          if (it == cells.end()) continue;
          for (auto i : it->second.points) {
            const auto& p = cloud[i];
            if (p.x < xmin - kMargin || p.x > xmax + kMargin || p.y < ymin - kMargin || p.y > ymax + kMargin) continue;
            if (p.z < cloud[bottom].z || (p.z == cloud[bottom].z && i < bottom)) bottom = i;
          }
        }
      }
    }

    const auto& a = cloud[apex];
    const auto& b = cloud[bottom];
    Detection d;
    d.id = "pole-" + padded(out.size(), 4);
    d.descriptor = make_pole(Vec3(a.x, a.y, a.z), Vec3(b.x, b.y, b.z));
    d.confidence = std::min(1.0, extent / (2.0 * config.min_height));
    d.source = Source::Baseline;
    validate(d);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace thma
