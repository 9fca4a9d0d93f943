#include "thma/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "thma/error.hpp"

namespace thma {

namespace {
constexpr std::size_t kMaxCells = std::size_t{1} << 24;
}

GridIndex::GridIndex(const PointCloud& cloud, double cell_size) : cloud_(cloud), cell_(cell_size) {
  if (!(cell_size > 0.0)) throw Error(ErrorCode::InvalidArgument, "grid cell size must be > 0");
  if (cloud.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::InvalidArgument, "cloud too large for a 32-bit index");
  }
  if (cloud.empty()) {
    start_.assign(1, 0);
    return;
  }

  min_x_ = max_x_ = cloud[0].x;
  min_y_ = max_y_ = cloud[0].y;
  for (const auto& p : cloud.points()) {
    min_x_ = std::min(min_x_, p.x);
    max_x_ = std::max(max_x_, p.x);
    min_y_ = std::min(min_y_, p.y);
    max_y_ = std::max(max_y_, p.y);
  }
  auto dims = [&] {
    cols_ = static_cast<std::size_t>(std::floor((max_x_ - min_x_) / cell_)) + 1;
    rows_ = static_cast<std::size_t>(std::floor((max_y_ - min_y_) / cell_)) + 1;
  };
  dims();
  while (static_cast<double>(cols_) * static_cast<double>(rows_) > static_cast<double>(kMaxCells)) {
    cell_ *= 2.0;
    dims();
  }

  std::vector<std::uint32_t> cell_of(cloud.size());
  start_.assign(cols_ * rows_ + 1, 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto [c, r] = clamp_cell(cloud[i].x, cloud[i].y);
    cell_of[i] = static_cast<std::uint32_t>(r * cols_ + c);
    ++start_[cell_of[i] + 1];
  }
  for (std::size_t k = 1; k < start_.size(); ++k) start_[k] += start_[k - 1];
  order_.resize(cloud.size());
  std::vector<std::size_t> cursor(start_.begin(), start_.end() - 1);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    order_[cursor[cell_of[i]]++] = static_cast<std::uint32_t>(i);
  }
}

std::pair<std::size_t, std::size_t> GridIndex::clamp_cell(double x, double y) const {
  auto axis = [this](double v, double lo, std::size_t n) -> std::size_t {
    double f = std::floor((v - lo) / cell_);
    if (!(f > 0.0)) return 0;
    return std::min(static_cast<std::size_t>(f), n - 1);
  };
  return {axis(x, min_x_, cols_), axis(y, min_y_, rows_)};
}

std::vector<std::uint32_t> GridIndex::query(double xmin, double ymin, double xmax, double ymax) const {
  std::vector<std::uint32_t> out;
  visit(xmin, ymin, xmax, ymax, [&](std::uint32_t i) { out.push_back(i); });
  return out;
}

}  // namespace thma
