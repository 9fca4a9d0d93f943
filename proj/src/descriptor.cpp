#include "thma/descriptor.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "thma/error.hpp"

namespace thma {

namespace {

struct ClassName {
  ObjectClass cls;
  std::string_view name;
};

constexpr std::array<ClassName, 8> kClassNames = {{
    {ObjectClass::Pole, "pole"},
    {ObjectClass::TrafficLight, "traffic_light"},
    {ObjectClass::TrafficSign, "traffic_sign"},
    {ObjectClass::TrafficCone, "traffic_cone"},
    {ObjectClass::Tunnel, "tunnel"},
    {ObjectClass::Barrier, "barrier"},
    {ObjectClass::Curb, "curb"},
    {ObjectClass::LaneMarking, "lane_marking"},
}};

[[noreturn]] void invalid(ObjectClass cls, const std::string& why) {
  throw Error(ErrorCode::InvalidDescriptor, std::string(to_string(cls)) + ": " + why);
}

void require_class(const DescriptorVector& v, ObjectClass cls) {
  if (v.cls != cls) {
    throw Error(ErrorCode::ClassMismatch,
                "expected " + std::string(to_string(cls)) + ", got " + std::string(to_string(v.cls)));
  }
  const auto len = schema_length(cls);
  if (len && v.values.size() != *len) {
    invalid(cls, "expected " + std::to_string(*len) + " values, got " + std::to_string(v.values.size()));
  }
}

double point_to_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = (p - a).dot(ab) / len2;
  if (t <= 0.0) return (p - a).norm();
  if (t >= 1.0) return (p - b).norm();
  return (p - (a + t * ab)).norm();
}

double point_to_polyline(const Vec3& p, const DescriptorVector& line) {
  const std::size_t n = line.point_count();
  if (n == 1) return (p - line.point(0)).norm();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < n; ++k) best = std::min(best, point_to_segment(p, line.point(k), line.point(k + 1)));
  return best;
}

double mean_to_polyline(const DescriptorVector& from, const DescriptorVector& to) {
  double sum = 0.0;
  for (std::size_t k = 0; k < from.point_count(); ++k) sum += point_to_polyline(from.point(k), to);
  return sum / static_cast<double>(from.point_count());
}

// Keypoints and scalar attributes compared by descriptor_distance.
struct Keypoints {
  std::vector<Vec3> points;
  std::vector<double> scalars;
};

Keypoints keypoints(const DescriptorVector& v) {
  const auto& x = v.values;
  switch (v.cls) {
    case ObjectClass::Pole:
      return {{v.point(0), v.point(1)}, {}};
    case ObjectClass::TrafficCone:
      return {{v.point(0), v.point(1)}, {x[6]}};
    case ObjectClass::TrafficSign: {
      auto c = sign_corners(v);
      return {{c.begin(), c.end()}, {}};
    }
    case ObjectClass::TrafficLight:
      return {{v.point(0), v.point(0) + v.point(1)}, {x[6], x[7], x[8]}};
    case ObjectClass::Tunnel:
      return {{v.point(0), v.point(1)}, {x[6], x[7]}};
    default:
      return {};
  }
}

}  // namespace

std::string_view to_string(ObjectClass cls) {
  for (const auto& entry : kClassNames) {
    if (entry.cls == cls) return entry.name;
  }
  return "unknown";
}

ObjectClass object_class_from_string(std::string_view name) {
  for (const auto& entry : kClassNames) {
    if (entry.name == name) return entry.cls;
  }
  throw Error(ErrorCode::InvalidDescriptor, "unknown object class '" + std::string(name) + "'");
}

bool is_polyline(ObjectClass cls) {
  return cls == ObjectClass::Barrier || cls == ObjectClass::Curb || cls == ObjectClass::LaneMarking;
}

std::optional<std::size_t> schema_length(ObjectClass cls, std::size_t polyline_vertices) {
  switch (cls) {
    case ObjectClass::Pole: return 6;
    case ObjectClass::TrafficCone: return 7;
    case ObjectClass::TrafficSign: return 11;
    case ObjectClass::TrafficLight: return 9;
    case ObjectClass::Tunnel: return 8;
    case ObjectClass::Barrier:
    case ObjectClass::Curb: return 3 * polyline_vertices;
    case ObjectClass::LaneMarking: return std::nullopt;
  }
  return std::nullopt;
}

DescriptorVector make_pole(const Vec3& apex, const Vec3& bottom) {
  return {ObjectClass::Pole, {apex.x(), apex.y(), apex.z(), bottom.x(), bottom.y(), bottom.z()}};
}

DescriptorVector make_cone(const Vec3& vertex, const Vec3& bottom_center, double radius) {
  return {ObjectClass::TrafficCone,
          {vertex.x(), vertex.y(), vertex.z(), bottom_center.x(), bottom_center.y(), bottom_center.z(), radius}};
}

DescriptorVector make_sign(const Vec3& center, const Vec3& u, const Vec3& v, double half_width,
                           double half_height) {
  return {ObjectClass::TrafficSign,
          {center.x(), center.y(), center.z(), u.x(), u.y(), u.z(), v.x(), v.y(), v.z(), half_width, half_height}};
}

DescriptorVector make_polyline(ObjectClass cls, const std::vector<Vec3>& vertices) {
  DescriptorVector v{cls, {}};
  v.values.reserve(vertices.size() * 3);
  for (const auto& p : vertices) v.values.insert(v.values.end(), {p.x(), p.y(), p.z()});
  return v;
}

void validate(const DescriptorVector& v, std::size_t polyline_vertices) {
  for (double x : v.values) {
    if (!std::isfinite(x)) invalid(v.cls, "non-finite value");
  }
  const auto len = schema_length(v.cls, polyline_vertices);
  if (len && v.values.size() != *len) {
    invalid(v.cls, "expected " + std::to_string(*len) + " values, got " + std::to_string(v.values.size()));
  }
  const auto& x = v.values;
  switch (v.cls) {
    case ObjectClass::TrafficCone:
      if (!(x[6] > 0.0)) invalid(v.cls, "radius must be > 0");
      break;
    case ObjectClass::TrafficSign: {
      const Vec3 u = v.point(1);
      const Vec3 w = v.point(2);
      if (std::abs(u.norm() - 1.0) > 1e-6 || std::abs(w.norm() - 1.0) > 1e-6) invalid(v.cls, "axes must be unit");
      if (std::abs(u.dot(w)) > 1e-6) invalid(v.cls, "axes must be orthogonal");
      if (!(x[9] > 0.0) || !(x[10] > 0.0)) invalid(v.cls, "half extents must be > 0");
      break;
    }
    case ObjectClass::LaneMarking:
      if (x.size() % 3 != 0 || x.size() < 6) invalid(v.cls, "polyline needs at least two xyz vertices");
      break;
    default:
      break;
  }
}

void MultiObjectDescriptor::validate(std::size_t max_extra_slots) const {
  if (slots.size() > max_extra_slots + 1) {
    throw Error(ErrorCode::InvalidDescriptor,
                "descriptor holds " + std::to_string(slots.size()) + " slots, limit is " +
                    std::to_string(max_extra_slots + 1));
  }
  for (const auto& slot : slots) {
    if (!(slot.activation >= 0.0 && slot.activation <= 1.0)) {
      throw Error(ErrorCode::InvalidDescriptor, "slot activation outside [0, 1]");
    }
    thma::validate(slot.vector);
  }
}

std::vector<DescriptorVector> activate(const MultiObjectDescriptor& d, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "activation threshold outside [0, 1]");
  }
  std::vector<DescriptorVector> out;
  for (const auto& slot : d.slots) {
    if (slot.activation > threshold) out.push_back(slot.vector);
  }
  return out;
}

double pole_yaw(const DescriptorVector& pole, double eps) {
  require_class(pole, ObjectClass::Pole);
  const double dx = pole.values[0] - pole.values[3];
  const double dy = pole.values[1] - pole.values[4];
  if (std::hypot(dx, dy) < eps) {
    throw Error(ErrorCode::DegenerateOrientation, "pole has no horizontal displacement");
  }
  double yaw = std::atan2(dy, dx);
  if (yaw >= std::numbers::pi) yaw -= 2.0 * std::numbers::pi;
  return yaw;
}

std::array<Vec3, 4> sign_corners(const DescriptorVector& sign) {
  require_class(sign, ObjectClass::TrafficSign);
  const Vec3 c = sign.point(0);
  const Vec3 u = sign.point(1);
  const Vec3 v = sign.point(2);
  if (std::abs(u.norm() - 1.0) > 1e-6 || std::abs(v.norm() - 1.0) > 1e-6 || std::abs(u.dot(v)) > 1e-6) {
    throw Error(ErrorCode::InvalidAxes, "sign axes must be unit length and orthogonal");
  }
  const Vec3 du = sign.values[9] * u;
  const Vec3 dv = sign.values[10] * v;
  return {c + du + dv, c - du + dv, c - du - dv, c + du - dv};
}

ConeGeometry cone_geometry(const DescriptorVector& cone, double eps) {
  require_class(cone, ObjectClass::TrafficCone);
  const Vec3 d = cone.point(0) - cone.point(1);
  const double height = d.norm();
  if (height < eps) throw Error(ErrorCode::DegenerateCone, "vertex coincides with bottom center");
  return {height, d / height};
}

double descriptor_distance(const DescriptorVector& a, const DescriptorVector& b) {
  if (a.cls != b.cls) {
    throw Error(ErrorCode::ClassMismatch,
                std::string(to_string(a.cls)) + " vs " + std::string(to_string(b.cls)));
  }
  if (is_polyline(a.cls)) {
    if (a.values.empty() || b.values.empty()) throw Error(ErrorCode::InvalidDescriptor, "empty polyline");
    return 0.5 * (mean_to_polyline(a, b) + mean_to_polyline(b, a));
  }
  const auto len = schema_length(a.cls);
  if (a.values.size() != *len || b.values.size() != *len) {
    throw Error(ErrorCode::InvalidDescriptor, std::string(to_string(a.cls)) + ": wrong value count");
  }
  const auto ka = keypoints(a);
  const auto kb = keypoints(b);
  double sum = 0.0;
  for (std::size_t i = 0; i < ka.points.size(); ++i) sum += (ka.points[i] - kb.points[i]).norm();
  for (std::size_t i = 0; i < ka.scalars.size(); ++i) sum += std::abs(ka.scalars[i] - kb.scalars[i]);
  return sum / static_cast<double>(ka.points.size() + ka.scalars.size());
}

std::string_view to_string(Source source) {
  switch (source) {
    case Source::Model: return "model";
    case Source::Human: return "human";
    case Source::Baseline: return "baseline";
  }
  return "unknown";
}

Source source_from_string(std::string_view name) {
  if (name == "model") return Source::Model;
  if (name == "human") return Source::Human;
  if (name == "baseline") return Source::Baseline;
  throw Error(ErrorCode::InvalidDescriptor, "unknown source '" + std::string(name) + "'");
}

void validate(const Detection& d) {
  if (d.id.empty()) throw Error(ErrorCode::InvalidDescriptor, "detection id is empty");
  if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
    throw Error(ErrorCode::InvalidDescriptor, "detection " + d.id + ": confidence outside [0, 1]");
  }
  validate(d.descriptor);
  d.multi.validate();
}

}  // namespace thma
