#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace thma {

using Vec3 = Eigen::Vector3d;

enum class ObjectClass {
  Pole,
  TrafficLight,
  TrafficSign,
  TrafficCone,
  Tunnel,
  Barrier,
  Curb,
  LaneMarking,  // emitted by the baseline lane detector
};

std::string_view to_string(ObjectClass cls);
ObjectClass object_class_from_string(std::string_view name);

bool is_polyline(ObjectClass cls);

inline constexpr std::size_t kDefaultPolylineVertices = 8;
inline constexpr std::size_t kDefaultMaxExtraSlots = 2;  // N_max: up to N_max + 1 slots

// Fixed value count for the class. LaneMarking polylines have free length and
// yield nullopt.
std::optional<std::size_t> schema_length(ObjectClass cls,
                                         std::size_t polyline_vertices = kDefaultPolylineVertices);

// Value layouts:
//   Pole         apex xyz, bottom xyz
//   TrafficCone  vertex xyz, bottom-center xyz, radius
//   TrafficSign  center xyz, axis-u xyz, axis-v xyz, half-width, half-height
//   TrafficLight center xyz, axis xyz, width, height, depth
//   Tunnel       entry-center xyz, exit-center xyz, width, height
//   Barrier/Curb/LaneMarking  polyline vertices xyz...
struct DescriptorVector {
  ObjectClass cls = ObjectClass::Pole;
  std::vector<double> values;

  // k-th xyz triple starting at values[3k].
  Vec3 point(std::size_t k) const { return {values[3 * k], values[3 * k + 1], values[3 * k + 2]}; }
  std::size_t point_count() const { return values.size() / 3; }

  friend bool operator==(const DescriptorVector&, const DescriptorVector&) = default;
};

DescriptorVector make_pole(const Vec3& apex, const Vec3& bottom);
DescriptorVector make_cone(const Vec3& vertex, const Vec3& bottom_center, double radius);
DescriptorVector make_sign(const Vec3& center, const Vec3& u, const Vec3& v, double half_width,
                           double half_height);
DescriptorVector make_polyline(ObjectClass cls, const std::vector<Vec3>& vertices);

// Throws InvalidDescriptor when the vector breaks its class schema.
void validate(const DescriptorVector& v, std::size_t polyline_vertices = kDefaultPolylineVertices);

struct Slot {
  double activation = 0.0;  // probability that `vector` describes a real object
  DescriptorVector vector;

  friend bool operator==(const Slot&, const Slot&) = default;
};

// Co-located objects at one location; slots keep producer order.
struct MultiObjectDescriptor {
  std::vector<Slot> slots;

  void validate(std::size_t max_extra_slots = kDefaultMaxExtraSlots) const;

  friend bool operator==(const MultiObjectDescriptor&, const MultiObjectDescriptor&) = default;
};

// Vectors of the slots whose activation is strictly above `threshold`.
std::vector<DescriptorVector> activate(const MultiObjectDescriptor& d, double threshold);

inline constexpr double kGeometryEpsilon = 1e-6;

// atan2 of the apex-minus-bottom horizontal displacement, in [-pi, pi).
double pole_yaw(const DescriptorVector& pole, double eps = kGeometryEpsilon);

// Corners at center +/- hw*u +/- hh*v, counterclockwise about u x v starting at
// (+u, +v).
std::array<Vec3, 4> sign_corners(const DescriptorVector& sign);

struct ConeGeometry {
  double height = 0.0;
  Vec3 axis = Vec3::Zero();  // unit vector from bottom center to vertex
};
ConeGeometry cone_geometry(const DescriptorVector& cone, double eps = kGeometryEpsilon);

// Mean keypoint distance (keypoint classes) or symmetric mean
// vertex-to-segment distance (polyline classes). Throws ClassMismatch.
double descriptor_distance(const DescriptorVector& a, const DescriptorVector& b);

enum class Source { Model, Human, Baseline };
std::string_view to_string(Source source);
Source source_from_string(std::string_view name);

struct Detection {
  std::string id;
  DescriptorVector descriptor;
  MultiObjectDescriptor multi;  // optional co-located slots; empty when unused
  double confidence = 0.0;
  Source source = Source::Model;
  std::string tile;  // id of the BEV tile the detection belongs to, may be empty

  ObjectClass cls() const { return descriptor.cls; }

  friend bool operator==(const Detection&, const Detection&) = default;
};

// Descriptor validation plus confidence range and non-empty id.
void validate(const Detection& d);

}  // namespace thma
