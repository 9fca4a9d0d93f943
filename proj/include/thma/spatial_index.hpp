#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "thma/pointcloud.hpp"

namespace thma {

// Uniform xy grid over a cloud, stored CSR-style: one contiguous index array
// bucketed by cell. Read-only after construction, so one index can serve many
// concurrent tile queries.
class GridIndex {
 public:
  GridIndex(const PointCloud& cloud, double cell_size);

  const PointCloud& cloud() const { return cloud_; }
  double cell_size() const { return cell_; }

  // Indices of all points in cells overlapping the box. A superset of the points
  // inside the box; callers do their own exact test.
  std::vector<std::uint32_t> query(double xmin, double ymin, double xmax, double ymax) const;

  template <typename Fn>
  void visit(double xmin, double ymin, double xmax, double ymax, Fn&& fn) const {
    if (cloud_.empty()) return;
    auto [c0, r0] = clamp_cell(xmin, ymin);
    auto [c1, r1] = clamp_cell(xmax, ymax);
    if (xmax < min_x_ || ymax < min_y_ || xmin > max_x_ || ymin > max_y_) return;
    for (std::size_t r = r0; r <= r1; ++r) {
      for (std::size_t c = c0; c <= c1; ++c) {
        const std::size_t cell = r * cols_ + c;
        for (std::size_t k = start_[cell]; k < start_[cell + 1]; ++k) fn(order_[k]);
      }
    }
  }

 private:
  std::pair<std::size_t, std::size_t> clamp_cell(double x, double y) const;

  PointCloud cloud_;
  double cell_ = 1.0;
  double min_x_ = 0.0, min_y_ = 0.0, max_x_ = 0.0, max_y_ = 0.0;
  std::size_t cols_ = 0, rows_ = 0;
  std::vector<std::size_t> start_;
  std::vector<std::uint32_t> order_;
};

}  // namespace thma
