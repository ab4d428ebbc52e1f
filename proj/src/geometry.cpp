#include "facade_gp/geometry.hpp"

#include "facade_gp/error.hpp"

#include <limits>
#include <string>

namespace facade_gp {

void PointCloud::validate() const {
  if (!normals.empty() && normals.size() != points.size()) {
    throw InvalidArgument("normal count " + std::to_string(normals.size()) +
                          " does not match point count " + std::to_string(points.size()));
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].allFinite()) {
      throw InvalidArgument("point " + std::to_string(i) + " is not finite");
    }
  }
  for (std::size_t i = 0; i < normals.size(); ++i) {
    if (std::abs(normals[i].norm() - 1.0) > 1e-6) {
      throw InvalidArgument("normal " + std::to_string(i) + " is not unit length");
    }
  }
}

PointCloud PointCloud::subset(std::span<const std::size_t> indices) const {
  PointCloud out;
  out.points.reserve(indices.size());
  for (auto i : indices) out.points.push_back(points.at(i));
  if (has_normals()) {
    out.normals.reserve(indices.size());
    for (auto i : indices) out.normals.push_back(normals.at(i));
  }
  return out;
}

void PointCloud::append(const PointCloud& other) {
  const bool keep_normals = (empty() || has_normals()) && other.has_normals();
  points.insert(points.end(), other.points.begin(), other.points.end());
  if (keep_normals) {
    normals.insert(normals.end(), other.normals.begin(), other.normals.end());
  } else {
    normals.clear();
  }
}

bool FacadeFrame::is_orthonormal(double tol) const {
  return std::abs(u.norm() - 1.0) <= tol && std::abs(v.norm() - 1.0) <= tol &&
         std::abs(n.norm() - 1.0) <= tol && std::abs(u.dot(v)) <= tol &&
         std::abs(u.dot(n)) <= tol && std::abs(v.dot(n)) <= tol;
}

LocalPoint to_local(const FacadeFrame& frame, const Point3& p) {
  const Eigen::Vector3d r = p - frame.origin;
  return {Vec2(r.dot(frame.u), r.dot(frame.v)), r.dot(frame.n), std::nullopt};
}

LocalPoint to_local(const FacadeFrame& frame, const Point3& p, const Eigen::Vector3d& normal) {
  LocalPoint lp = to_local(frame, p);
  lp.n_z = std::clamp(normal.dot(frame.n), -1.0, 1.0);
  return lp;
}

std::vector<LocalPoint> to_local(const FacadeFrame& frame, const PointCloud& cloud) {
  std::vector<LocalPoint> out;
  out.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    out.push_back(cloud.has_normals() ? to_local(frame, cloud.points[i], cloud.normals[i])
                                      : to_local(frame, cloud.points[i]));
  }
  return out;
}

Point3 from_local(const FacadeFrame& frame, const Vec2& x, double d) {
  return frame.origin + x.x() * frame.u + x.y() * frame.v + d * frame.n;
}

Rect2 bounding_rect(std::span<const LocalPoint> points) {
  if (points.empty()) return {};
  constexpr double inf = std::numeric_limits<double>::infinity();
  Rect2 r{Vec2(inf, inf), Vec2(-inf, -inf)};
  for (const auto& p : points) {
    r.lo = r.lo.cwiseMin(p.x);
    r.hi = r.hi.cwiseMax(p.x);
  }
  return r;
}

}  // namespace facade_gp
