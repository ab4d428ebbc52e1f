#include "facade_gp/segmentation.hpp"

#include "facade_gp/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace facade_gp {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct PcaResult {
  Point3 centroid;
  Eigen::Vector3d eigenvalues;   // ascending
  Eigen::Matrix3d eigenvectors;  // columns match eigenvalues
};

PcaResult pca(const PointCloud& cloud, std::span<const std::size_t> indices) {
  Point3 centroid = Point3::Zero();
  for (auto i : indices) centroid += cloud.points[i];
  centroid /= static_cast<double>(indices.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (auto i : indices) {
    const Eigen::Vector3d r = cloud.points[i] - centroid;
    cov.noalias() += r * r.transpose();
  }
  cov /= static_cast<double>(indices.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  return {centroid, solver.eigenvalues(), solver.eigenvectors()};
}

double tilt_from_vertical_deg(const Eigen::Vector3d& normal) {
  return std::asin(std::min(1.0, std::abs(normal.z()))) / kDegToRad;
}

std::vector<std::size_t> collect_inliers(const PointCloud& cloud,
                                         const std::vector<std::size_t>& pool,
                                         const Eigen::Vector3d& normal, double offset,
                                         double threshold) {
  std::vector<std::size_t> inliers;
  for (auto i : pool) {
    if (std::abs(normal.dot(cloud.points[i]) - offset) <= threshold) inliers.push_back(i);
  }
  return inliers;
}

}  // namespace

void RansacConfig::validate() const {
  if (!(inlier_threshold > 0.0) || max_iterations <= 0 || min_inliers <= 0 || max_planes <= 0) {
    throw InvalidArgument("RANSAC parameters must be positive");
  }
  if (!(verticality_max_tilt > 0.0 && verticality_max_tilt < 90.0)) {
    throw InvalidArgument("verticality_max_tilt must lie in (0, 90) degrees");
  }
}

std::vector<PlaneHypothesis> extract_facades(const PointCloud& cloud, const RansacConfig& cfg) {
  cfg.validate();
  if (cloud.size() < 3) {
    throw InvalidArgument("plane extraction needs at least 3 points, got " +
                          std::to_string(cloud.size()));
  }
  std::mt19937_64 rng(cfg.rng_seed);
  std::vector<std::size_t> pool(cloud.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;

  std::vector<PlaneHypothesis> planes;
  while (static_cast<int>(planes.size()) < cfg.max_planes && pool.size() >= 3) {
    std::size_t best_count = 0;
    Eigen::Vector3d best_normal = Eigen::Vector3d::Zero();
    double best_offset = 0.0;
    const std::size_t n = pool.size();
    for (int it = 0; it < cfg.max_iterations; ++it) {
      const std::size_t a = rng() % n;
      std::size_t b = rng() % n;
      std::size_t c = rng() % n;
      if (a == b || a == c || b == c) continue;
      const Point3& p0 = cloud.points[pool[a]];
      Eigen::Vector3d normal = (cloud.points[pool[b]] - p0).cross(cloud.points[pool[c]] - p0);
      const double len = normal.norm();
      if (len < 1e-12) continue;
      normal /= len;
      if (tilt_from_vertical_deg(normal) > cfg.verticality_max_tilt) continue;
      const double offset = normal.dot(p0);
      std::size_t count = 0;
      for (auto i : pool) {
        if (std::abs(normal.dot(cloud.points[i]) - offset) <= cfg.inlier_threshold) ++count;
      }
      if (count > best_count) {
        best_count = count;
        best_normal = normal;
        best_offset = offset;
      }
    }
    if (best_count < static_cast<std::size_t>(cfg.min_inliers)) break;

    auto inliers = collect_inliers(cloud, pool, best_normal, best_offset, cfg.inlier_threshold);
    // Total-least-squares refinement on the consensus set.
    const auto fit = pca(cloud, inliers);
    Eigen::Vector3d refined = fit.eigenvectors.col(0);
    if (refined.dot(best_normal) < 0.0) refined = -refined;
    if (tilt_from_vertical_deg(refined) <= cfg.verticality_max_tilt) {
      const double refined_offset = refined.dot(fit.centroid);
      auto refined_inliers =
          collect_inliers(cloud, pool, refined, refined_offset, cfg.inlier_threshold);
      if (refined_inliers.size() >= static_cast<std::size_t>(cfg.min_inliers)) {
        best_normal = refined;
        best_offset = refined_offset;
        inliers = std::move(refined_inliers);
      }
    }

    std::vector<std::size_t> rest;
    rest.reserve(pool.size() - inliers.size());
    std::set_difference(pool.begin(), pool.end(), inliers.begin(), inliers.end(),
                        std::back_inserter(rest));
    pool = std::move(rest);
    planes.push_back({best_normal, best_offset, std::move(inliers)});
  }
  return planes;
}

FacadeFrame make_frame(const Point3& origin, const Eigen::Vector3d& n_in,
                       const Eigen::Vector3d& u_in) {
  const Eigen::Vector3d n = n_in.normalized();
  Eigen::Vector3d u = u_in - u_in.dot(n) * n;
  if (u.norm() < 1e-12) {
    // Any in-plane direction; prefer world x, then world y.
    u = Eigen::Vector3d::UnitX() - n.x() * n;
    if (u.norm() < 1e-6) u = Eigen::Vector3d::UnitY() - n.y() * n;
  }
  u.normalize();
  if (u.x() < 0.0 || (u.x() == 0.0 && u.y() < 0.0)) u = -u;
  FacadeFrame frame;
  frame.origin = origin;
  frame.n = n;
  frame.u = u;
  frame.v = n.cross(u).normalized();
  return frame;
}

FacadeFrame pca_frame(const PointCloud& cloud, std::span<const std::size_t> inliers) {
  if (inliers.size() < 3) throw DegenerateError("PCA frame needs at least 3 points");
  const auto fit = pca(cloud, inliers);
  const double scale = std::max(fit.eigenvalues(2), 1e-300);
  if (fit.eigenvalues(1) <= 1e-12 * scale) {
    throw DegenerateError("rank-deficient covariance: points are collinear");
  }
  Eigen::Vector3d n = fit.eigenvectors.col(0);

  long vote = 0;
  if (cloud.has_normals()) {
    for (auto i : inliers) {
      const double s = cloud.normals[i].dot(n);
      vote += (s > 0.0) - (s < 0.0);
    }
  } else {
    std::vector<std::size_t> sorted(inliers.begin(), inliers.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      if (std::binary_search(sorted.begin(), sorted.end(), i)) continue;
      const double s = (cloud.points[i] - fit.centroid).dot(n);
      vote += (s > 0.0) - (s < 0.0);
    }
  }
  if (vote < 0) {
    n = -n;
  } else if (vote == 0) {
    // No evidence either way: canonical sign on the dominant component.
    Eigen::Index k = 0;
    n.cwiseAbs().maxCoeff(&k);
    if (n(k) < 0.0) n = -n;
  }
  return make_frame(fit.centroid, n, fit.eigenvectors.col(2));
}

namespace {

// PCA frame of the main plane, re-estimated on the points within 2.5 robust
// sigmas of the previous estimate so that offset structure does not tilt it.
FacadeFrame core_frame(const PointCloud& cloud, const std::vector<std::size_t>& inliers) {
  FacadeFrame frame = pca_frame(cloud, inliers);
  std::vector<std::size_t> core = inliers;
  for (int round = 0; round < 3; ++round) {
    std::vector<double> d;
    d.reserve(inliers.size());
    for (auto i : inliers) d.push_back(to_local(frame, cloud.points[i]).d);
    std::vector<double> sorted = d;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
    const double med = sorted[sorted.size() / 2];
    for (auto& v : sorted) v = std::abs(v - med);
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
    const double sigma = std::max(1.4826 * sorted[sorted.size() / 2], 0.005);
    std::vector<std::size_t> next;
    for (std::size_t k = 0; k < inliers.size(); ++k) {
      if (std::abs(d[k] - med) <= 2.5 * sigma) next.push_back(inliers[k]);
    }
    if (next.size() < 3 || next == core) break;
    core = std::move(next);
    frame = pca_frame(cloud, core);
  }
  return frame;
}

}  // namespace

std::vector<FacadeSegment> allocate_facades(const PointCloud& cloud,
                                            const std::vector<PlaneHypothesis>& planes,
                                            const AllocationConfig& cfg) {
  struct Group {
    std::vector<std::size_t> members;
    std::vector<std::size_t> primary;  // inliers of the first (largest) plane
    Eigen::Vector3d normal;
    FacadeFrame frame;
    Rect2 rect;
  };
  auto refresh = [&](Group& g) {
    const auto fit = pca(cloud, g.members);
    g.frame = make_frame(fit.centroid, g.normal, fit.eigenvectors.col(2));
    double lo0 = 1e300, lo1 = 1e300, hi0 = -1e300, hi1 = -1e300;
    for (auto i : g.members) {
      const auto lp = to_local(g.frame, cloud.points[i]);
      lo0 = std::min(lo0, lp.x.x());
      lo1 = std::min(lo1, lp.x.y());
      hi0 = std::max(hi0, lp.x.x());
      hi1 = std::max(hi1, lp.x.y());
    }
    g.rect = {Vec2(lo0, lo1), Vec2(hi0, hi1)};
  };

  const double cos_merge = std::cos(cfg.merge_angle * kDegToRad);
  std::vector<Group> groups;
  for (const auto& plane : planes) {
    Point3 centroid = Point3::Zero();
    for (auto i : plane.inlier_indices) centroid += cloud.points[i];
    centroid /= static_cast<double>(plane.inlier_indices.size());

    Group* parent = nullptr;
    for (auto& g : groups) {
      if (std::abs(g.normal.dot(plane.normal)) < cos_merge) continue;
      const auto lp = to_local(g.frame, centroid);
      if (std::abs(lp.d) <= cfg.merge_distance && g.rect.padded(cfg.merge_distance).contains(lp.x)) {
        parent = &g;
        break;
      }
    }
    if (parent) {
      parent->members.insert(parent->members.end(), plane.inlier_indices.begin(),
                             plane.inlier_indices.end());
      refresh(*parent);
    } else {
      Group g;
      g.members = plane.inlier_indices;
      g.primary = plane.inlier_indices;
      g.normal = plane.normal;
      refresh(g);
      groups.push_back(std::move(g));
    }
  }

  std::vector<char> taken(cloud.size(), 0);
  for (const auto& g : groups)
    for (auto i : g.members) taken[i] = 1;
  std::vector<std::vector<std::size_t>> extra(groups.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (taken[i]) continue;
    double best = cfg.merge_distance;
    int owner = -1;
    for (std::size_t k = 0; k < groups.size(); ++k) {
      const auto lp = to_local(groups[k].frame, cloud.points[i]);
      if (std::abs(lp.d) <= best && groups[k].rect.padded(cfg.merge_distance).contains(lp.x)) {
        best = std::abs(lp.d);
        owner = static_cast<int>(k);
      }
    }
    if (owner >= 0) extra[owner].push_back(i);
  }

  std::vector<FacadeSegment> out;
  out.reserve(groups.size());
  for (std::size_t k = 0; k < groups.size(); ++k) {
    FacadeSegment seg;
    seg.members = std::move(groups[k].members);
    seg.members.insert(seg.members.end(), extra[k].begin(), extra[k].end());
    std::sort(seg.members.begin(), seg.members.end());
    seg.frame = core_frame(cloud, groups[k].primary);
    out.push_back(std::move(seg));
  }
  return out;
}

std::vector<FacadeSegment> segment_facades(const PointCloud& cloud, const RansacConfig& ransac,
                                           const AllocationConfig& allocation) {
  return allocate_facades(cloud, extract_facades(cloud, ransac), allocation);
}

}  // namespace facade_gp
