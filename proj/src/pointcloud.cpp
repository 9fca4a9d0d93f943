#include "thma/pointcloud.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>

#include "thma/error.hpp"

namespace thma {

namespace {

constexpr std::array<char, 4> kMagic = {'T', 'H', 'P', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 4 + 1 + 8;
constexpr std::size_t kRecordSize = 8 * 3 + 2 + 2 + 8;

constexpr double kDegToRad = std::numbers::pi / 180.0;

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                  std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                                     std::uint8_t>>>;
  auto bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
  }
}

template <typename T>
T get_le(const unsigned char* in) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                  std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                                     std::uint8_t>>>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<U>(static_cast<U>(in[i]) << (8 * i));
  }
  return std::bit_cast<T>(bits);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

[[noreturn]] void bad_line(const std::filesystem::path& path, std::size_t line, const std::string& why) {
  throw Error(ErrorCode::MalformedRecord,
              path.string() + " line " + std::to_string(line) + ": " + why);
}

// Iterates non-empty data lines after checking the header; calls fn(fields, line_no).
template <typename Fn>
void for_each_csv_record(const std::filesystem::path& path, std::string_view expected_header, Fn&& fn) {
  std::string text = read_file(path);
  std::string_view rest(text);
  std::size_t line_no = 0;
  bool header_seen = false;
  while (!rest.empty()) {
    auto nl = rest.find('\n');
    std::string_view line = trim(rest.substr(0, nl));
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    ++line_no;
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.remove_prefix(3);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != expected_header) {
        bad_line(path, line_no, "expected header '" + std::string(expected_header) + "'");
      }
      header_seen = true;
      continue;
    }
    fn(split_fields(line), line_no);
  }
  if (!header_seen) bad_line(path, 1, "missing header");
}

void check_geographic(const Point3& p, const std::string& where) {
  if (!in_mercator_band(p.x, p.y)) {
    throw Error(ErrorCode::MalformedRecord,
                where + ": geographic point outside the Web-Mercator band");
  }
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

double normalize_angle(double radians) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double a = std::fmod(radians + std::numbers::pi, two_pi);
  if (a < 0.0) a += two_pi;
  a -= std::numbers::pi;
  // fmod rounding can land exactly on +pi.
  if (a >= std::numbers::pi) a -= two_pi;
  return a;
}

bool in_mercator_band(double lon_deg, double lat_deg) {
  return lon_deg >= -180.0 && lon_deg <= 180.0 && std::abs(lat_deg) < kMercatorMaxLatitude;
}

// ---------------------------------------------------------------------------
// Trajectory

Trajectory::Trajectory(std::vector<Pose> poses, Frame frame) : frame_(frame) {
  if (poses.empty()) throw Error(ErrorCode::DegenerateTrajectory, "trajectory has no poses");
  for (std::size_t i = 0; i < poses.size(); ++i) {
    auto& pose = poses[i];
    if (!std::isfinite(pose.position.x) || !std::isfinite(pose.position.y) ||
        !std::isfinite(pose.position.z) || !std::isfinite(pose.heading) ||
        !std::isfinite(pose.time)) {
      throw Error(ErrorCode::InvalidArgument, "non-finite pose " + std::to_string(i));
    }
    if (i > 0 && !(pose.time > poses[i - 1].time)) {
      throw Error(ErrorCode::InvalidArgument,
                  "pose times must be strictly increasing (pose " + std::to_string(i) + ")");
    }
    pose.heading = normalize_angle(pose.heading);
    pose.position.time = pose.time;
  }

  arc_length_.resize(poses.size(), 0.0);
  for (std::size_t i = 1; i < poses.size(); ++i) {
    arc_length_[i] = arc_length_[i - 1] + std::hypot(poses[i].position.x - poses[i - 1].position.x,
                                                     poses[i].position.y - poses[i - 1].position.y);
  }

  poses_ = std::make_shared<const std::vector<Pose>>(std::move(poses));

  std::vector<std::uint32_t> ids(poses_->size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint32_t>(i);
  kd_.reserve(ids.size());
  kd_root_ = build(ids, 0, ids.size(), 0);
}

std::int32_t Trajectory::build(std::vector<std::uint32_t>& ids, std::size_t lo, std::size_t hi, int depth) {
  if (lo >= hi) return -1;
  const auto axis = static_cast<std::uint8_t>(depth % 2);
  const auto& poses = *poses_;
  auto key = [&](std::uint32_t id) {
    return axis == 0 ? poses[id].position.x : poses[id].position.y;
  };
  std::size_t mid = lo + (hi - lo) / 2;
  std::nth_element(ids.begin() + static_cast<std::ptrdiff_t>(lo),
                   ids.begin() + static_cast<std::ptrdiff_t>(mid),
                   ids.begin() + static_cast<std::ptrdiff_t>(hi),
                   [&](std::uint32_t a, std::uint32_t b) { return key(a) < key(b); });
  auto node = static_cast<std::int32_t>(kd_.size());
  kd_.push_back({ids[mid], -1, -1, axis});
  auto left = build(ids, lo, mid, depth + 1);
  auto right = build(ids, mid + 1, hi, depth + 1);
  kd_[static_cast<std::size_t>(node)].left = left;
  kd_[static_cast<std::size_t>(node)].right = right;
  return node;
}

void Trajectory::search(std::int32_t node, double x, double y, std::size_t& best, double& best_d2) const {
  if (node < 0) return;
  const auto& n = kd_[static_cast<std::size_t>(node)];
  const auto& p = (*poses_)[n.pose].position;
  double dx = p.x - x;
  double dy = p.y - y;
  double d2 = dx * dx + dy * dy;
  if (d2 < best_d2 || (d2 == best_d2 && n.pose < best)) {
    best_d2 = d2;
    best = n.pose;
  }
  double diff = n.axis == 0 ? x - p.x : y - p.y;
  auto near = diff < 0.0 ? n.left : n.right;
  auto far = diff < 0.0 ? n.right : n.left;
  search(near, x, y, best, best_d2);
  // <= keeps equal-distance candidates on the far side reachable for tie-breaking.
  if (diff * diff <= best_d2) search(far, x, y, best, best_d2);
}

std::size_t Trajectory::nearest_pose(double x, double y) const {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(kd_root_, x, y, best, best_d2);
  return best;
}

// ---------------------------------------------------------------------------
// PointCloud

PointCloud::PointCloud(std::vector<Point3> points, Frame frame)
    : points_(std::make_shared<const std::vector<Point3>>(std::move(points))), frame_(frame) {}

CloudFormat cloud_format_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".csv" ? CloudFormat::Csv : CloudFormat::BinaryV1;
}

namespace {

PointCloud load_binary(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  auto fail = [&](std::size_t offset, const std::string& why) -> Error {
    return Error(ErrorCode::MalformedRecord,
                 path.string() + " offset " + std::to_string(offset) + ": " + why);
  };

  if (bytes.size() < kHeaderSize) throw fail(0, "truncated header");
  if (std::memcmp(data, kMagic.data(), kMagic.size()) != 0) throw fail(0, "bad magic");
  if (get_le<std::uint32_t>(data + 4) != kVersion) throw fail(4, "unsupported version");
  const std::uint8_t flag = data[8];
  if (flag > 1) throw fail(8, "bad frame flag");
  const auto frame = static_cast<Frame>(flag);
  const auto count = get_le<std::uint64_t>(data + 9);

  const std::size_t body = bytes.size() - kHeaderSize;
  const std::size_t records = body / kRecordSize;
  if (body % kRecordSize != 0) {
    throw fail(kHeaderSize + records * kRecordSize, "partial record");
  }
  if (records != count) {
    throw Error(ErrorCode::HeaderMismatch, path.string() + ": header count " + std::to_string(count) +
                                               ", file holds " + std::to_string(records));
  }
  if (count == 0) throw Error(ErrorCode::EmptyCloud, path.string());

  std::vector<Point3> points(records);
  for (std::size_t i = 0; i < records; ++i) {
    const std::size_t offset = kHeaderSize + i * kRecordSize;
    const unsigned char* r = data + offset;
    Point3& p = points[i];
    p.x = get_le<double>(r);
    p.y = get_le<double>(r + 8);
    p.z = get_le<double>(r + 16);
    p.intensity = get_le<std::uint16_t>(r + 24);
    p.time = get_le<double>(r + 28);
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) || !std::isfinite(p.time)) {
      throw fail(offset, "non-finite coordinate");
    }
    if (frame == Frame::Geographic) check_geographic(p, path.string() + " offset " + std::to_string(offset));
  }
  return PointCloud(std::move(points), frame);
}

PointCloud load_csv(const std::filesystem::path& path, Frame frame) {
  std::vector<Point3> points;
  for_each_csv_record(path, "x,y,z,intensity,time", [&](const auto& f, std::size_t line) {
    if (f.size() != 5 && f.size() != 4) bad_line(path, line, "expected 5 fields");
    Point3 p;
    if (!parse_double(f[0], p.x) || !parse_double(f[1], p.y) || !parse_double(f[2], p.z)) {
      bad_line(path, line, "bad coordinate");
    }
    unsigned long intensity = 0;
    auto [ptr, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), intensity);
    if (ec != std::errc{} || ptr != f[3].data() + f[3].size() || f[3].empty() || intensity > 0xFFFFu) {
      bad_line(path, line, "intensity must be an integer in [0, 65535]");
    }
    p.intensity = static_cast<std::uint16_t>(intensity);
    if (f.size() == 5 && !f[4].empty() && !parse_double(f[4], p.time)) bad_line(path, line, "bad time");
    if (frame == Frame::Geographic) check_geographic(p, path.string() + " line " + std::to_string(line));
    points.push_back(p);
  });
  if (points.empty()) throw Error(ErrorCode::EmptyCloud, path.string());
  return PointCloud(std::move(points), frame);
}

}  // namespace

PointCloud load_point_cloud(const std::filesystem::path& path, CloudFormat format, Frame csv_frame) {
  return format == CloudFormat::BinaryV1 ? load_binary(path) : load_csv(path, csv_frame);
}

void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format) {
  std::string out;
  if (format == CloudFormat::BinaryV1) {
    out.reserve(kHeaderSize + cloud.size() * kRecordSize);
    out.append(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(cloud.frame()));
    put_le<std::uint64_t>(out, cloud.size());
    for (const auto& p : cloud.points()) {
      put_le(out, p.x);
      put_le(out, p.y);
      put_le(out, p.z);
      put_le<std::uint16_t>(out, p.intensity);
      put_le<std::uint16_t>(out, 0);
      put_le(out, p.time);
    }
  } else {
    out = "x,y,z,intensity,time\n";
    for (const auto& p : cloud.points()) {
      out += format_double(p.x) + ',' + format_double(p.y) + ',' + format_double(p.z) + ',' +
             std::to_string(p.intensity) + ',' + format_double(p.time) + '\n';
    }
  }
  write_file(path, out);
}

Trajectory load_trajectory(const std::filesystem::path& path, Frame frame) {
  std::vector<Pose> poses;
  for_each_csv_record(path, "x,y,z,heading,time", [&](const auto& f, std::size_t line) {
    if (f.size() != 5) bad_line(path, line, "expected 5 fields");
    Pose pose;
    if (!parse_double(f[0], pose.position.x) || !parse_double(f[1], pose.position.y) ||
        !parse_double(f[2], pose.position.z) || !parse_double(f[3], pose.heading) ||
        !parse_double(f[4], pose.time)) {
      bad_line(path, line, "bad number");
    }
    if (frame == Frame::Geographic) check_geographic(pose.position, path.string() + " line " + std::to_string(line));
    poses.push_back(pose);
  });
  return Trajectory(std::move(poses), frame);
}

void save_trajectory(const Trajectory& trajectory, const std::filesystem::path& path) {
  std::string out = "x,y,z,heading,time\n";
  for (const auto& pose : trajectory.poses()) {
    out += format_double(pose.position.x) + ',' + format_double(pose.position.y) + ',' +
           format_double(pose.position.z) + ',' + format_double(pose.heading) + ',' +
           format_double(pose.time) + '\n';
  }
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Projection

Point3 to_mercator(const Point3& g) {
  if (!in_mercator_band(g.x, g.y)) {
    throw Error(ErrorCode::OutOfMercatorBand,
                "lon " + format_double(g.x) + ", lat " + format_double(g.y));
  }
  Point3 p = g;
  p.x = kEarthRadius * g.x * kDegToRad;
  p.y = kEarthRadius * std::atanh(std::sin(g.y * kDegToRad));
  return p;
}

Point3 from_mercator(const Point3& m) {
  Point3 g = m;
  g.x = m.x / kEarthRadius / kDegToRad;
  g.y = (2.0 * std::atan(std::exp(m.y / kEarthRadius)) - std::numbers::pi / 2.0) / kDegToRad;
  return g;
}

PointCloud to_mercator(const PointCloud& cloud) {
  if (cloud.frame() != Frame::Geographic) {
    throw Error(ErrorCode::FrameMismatch, "to_mercator expects a geographic cloud");
  }
  std::vector<Point3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points()) out.push_back(to_mercator(p));
  return PointCloud(std::move(out), Frame::PlanarMeters);
}

Trajectory to_mercator(const Trajectory& trajectory) {
  if (trajectory.frame() != Frame::Geographic) {
    throw Error(ErrorCode::FrameMismatch, "to_mercator expects a geographic trajectory");
  }
  std::vector<Pose> poses(trajectory.poses().begin(), trajectory.poses().end());
  for (auto& pose : poses) pose.position = to_mercator(pose.position);
  return Trajectory(std::move(poses), Frame::PlanarMeters);
}

// ---------------------------------------------------------------------------
// Elevation filtering

PointCloud elevation_filter(const PointCloud& cloud, const Trajectory& trajectory, const ElevationBand& band) {
  if (cloud.frame() != Frame::PlanarMeters || trajectory.frame() != Frame::PlanarMeters) {
    throw Error(ErrorCode::FrameMismatch, "elevation_filter needs a planar cloud and trajectory");
  }
  if (!(band.below >= 0.0) || !(band.above >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "elevation band widths must be >= 0");
  }
  if (std::isinf(band.below) && std::isinf(band.above)) return cloud;

  std::vector<Point3> kept;
  kept.reserve(cloud.size());
  for (const auto& p : cloud.points()) {
    const auto& pose = trajectory[trajectory.nearest_pose(p.x, p.y)];
    const double ground = pose.position.z - band.sensor_height;
    if (p.z >= ground - band.below && p.z <= ground + band.above) kept.push_back(p);
  }
  return PointCloud(std::move(kept), Frame::PlanarMeters);
}

}  // namespace thma
