#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace facade_gp {

using Point3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

/// Ordered points with optional per-point unit normals.
struct PointCloud {
  std::vector<Point3> points;
  std::vector<Eigen::Vector3d> normals;  // empty, or one per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }

  /// Throws InvalidArgument on non-finite coordinates, length mismatch or
  /// non-unit normals.
  void validate() const;

  PointCloud subset(std::span<const std::size_t> indices) const;
  void append(const PointCloud& other);
};

/// Local coordinate system of one wall: origin, in-plane axes u and v, and
/// the depth axis n (positive toward the sensor).
struct FacadeFrame {
  Point3 origin = Point3::Zero();
  Eigen::Vector3d u = Eigen::Vector3d::UnitX();
  Eigen::Vector3d v = Eigen::Vector3d::UnitY();
  Eigen::Vector3d n = Eigen::Vector3d::UnitZ();

  bool is_orthonormal(double tol = 1e-9) const;
};

/// 2.5D sample in a facade frame.
struct LocalPoint {
  Vec2 x = Vec2::Zero();
  double d = 0.0;
  std::optional<double> n_z;
};

LocalPoint to_local(const FacadeFrame& frame, const Point3& p);
LocalPoint to_local(const FacadeFrame& frame, const Point3& p, const Eigen::Vector3d& normal);
std::vector<LocalPoint> to_local(const FacadeFrame& frame, const PointCloud& cloud);

Point3 from_local(const FacadeFrame& frame, const Vec2& x, double d);
inline Point3 from_local(const FacadeFrame& frame, const LocalPoint& lp) {
  return from_local(frame, lp.x, lp.d);
}

struct Rect2 {
  Vec2 lo = Vec2::Zero();
  Vec2 hi = Vec2::Zero();

  bool contains(const Vec2& p) const {
    return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y();
  }
  Rect2 padded(double pad) const {
    return {(lo.array() - pad).matrix(), (hi.array() + pad).matrix()};
  }
  double area() const { return std::max(0.0, hi.x() - lo.x()) * std::max(0.0, hi.y() - lo.y()); }
};

Rect2 bounding_rect(std::span<const LocalPoint> points);

struct Box3 {
  Point3 lo = Point3::Zero();
  Point3 hi = Point3::Zero();
};

/// Integer index of a square cell in a facade plane.
struct CellIndex {
  int i = 0;
  int j = 0;

  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

inline CellIndex cell_of(const Vec2& x, double cell, const Vec2& origin = Vec2::Zero()) {
  return {static_cast<int>(std::floor((x.x() - origin.x()) / cell)),
          static_cast<int>(std::floor((x.y() - origin.y()) / cell))};
}

struct CellIndexHash {
  std::size_t operator()(const CellIndex& c) const noexcept {
    const auto a = static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.i));
    const auto b = static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.j));
    return std::hash<std::uint64_t>{}((a << 32) | b);
  }
};

}  // namespace facade_gp
