#pragma once

#include "facade_gp/geometry.hpp"

#include <cstdint>
#include <vector>

namespace facade_gp {

struct RansacConfig {
  double inlier_threshold = 0.10;  // m
  int max_iterations = 2000;       // per plane
  int min_inliers = 500;
  int max_planes = 12;
  double verticality_max_tilt = 30.0;  // degrees
  std::uint64_t rng_seed = 42;

  void validate() const;
};

/// Plane {p : normal . p = offset} with the cloud indices it explains.
struct PlaneHypothesis {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitX();
  double offset = 0.0;
  std::vector<std::size_t> inlier_indices;

  double distance(const Point3& p) const { return std::abs(normal.dot(p) - offset); }
};

/// Greedy sequential RANSAC over vertical planes. Each accepted plane is
/// refit by PCA on its inliers and its inlier set recomputed against the
/// refined plane; inliers are then removed from the pool. Deterministic in
/// cfg.rng_seed. Throws InvalidArgument for fewer than 3 points.
std::vector<PlaneHypothesis> extract_facades(const PointCloud& cloud, const RansacConfig& cfg);

/// PCA frame of the given points: origin at the centroid, n along the
/// smallest-variance axis, u along the largest. The depth sign follows the
/// majority of point normals when the cloud carries them, otherwise the side
/// holding most of the remaining (non-inlier) points. Throws DegenerateError
/// for collinear or too few points.
FacadeFrame pca_frame(const PointCloud& cloud, std::span<const std::size_t> inliers);

/// Rule shared by every frame builder: u sign-fixed so u.x >= 0 (ties:
/// u.y >= 0), v = n x u.
FacadeFrame make_frame(const Point3& origin, const Eigen::Vector3d& n, const Eigen::Vector3d& u);

struct AllocationConfig {
  // Parallel planes closer than this (and overlapping in-plane) are depth
  // layers of one facade; stray points within it are allocated too.
  double merge_distance = 0.5;   // m
  double merge_angle = 10.0;     // degrees
};

struct FacadeSegment {
  FacadeFrame frame;
  std::vector<std::size_t> members;  // ascending cloud indices
};

/// Groups RANSAC planes into facades (parallel offset planes become layers
/// of the larger facade), allocates the leftover points to the nearest
/// facade within merge_distance and inside its padded footprint. Each frame
/// is the PCA frame of the main plane's inliers, re-fit on the points within
/// 2.5 robust sigmas of it.
std::vector<FacadeSegment> allocate_facades(const PointCloud& cloud,
                                            const std::vector<PlaneHypothesis>& planes,
                                            const AllocationConfig& cfg);

std::vector<FacadeSegment> segment_facades(const PointCloud& cloud, const RansacConfig& ransac,
                                           const AllocationConfig& allocation);

}  // namespace facade_gp
