#pragma once

#include "facade_gp/facade_model.hpp"
#include "facade_gp/geometry.hpp"
#include "facade_gp/occupancy.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace facade_gp {

/// Region of space scored for one facade: voxels whose projection falls in
/// `rect` and whose depth lies in [depth_lo, depth_hi].
struct FacadeExtent {
  FacadeFrame frame;
  Rect2 rect;
  double depth_lo = -std::numeric_limits<double>::infinity();
  double depth_hi = std::numeric_limits<double>::infinity();

  bool contains(const Point3& p) const;
};

struct GroundTruthGrid {
  GridGeometry geometry;
  std::vector<std::uint8_t> occupied;
  std::vector<std::uint8_t> evaluable;

  std::size_t occupied_evaluable() const;
};

/// Exact 2.5D surface d = depth(x) over `domain` in `frame`.
struct AnalyticSurface {
  FacadeFrame frame;
  Rect2 domain;
  std::function<double(const Vec2&)> depth;
};

/// Occupied = voxel holds at least one point; evaluable = inside any extent.
GroundTruthGrid gt_from_points(const PointCloud& cloud, const GridGeometry& geometry,
                               std::span<const FacadeExtent> extents);

/// Occupied = voxel intersected by a surface, found by sampling each surface
/// on a lattice of spacing resolution/4 (or `spacing` when positive).
GroundTruthGrid gt_from_surfaces(std::span<const AnalyticSurface> surfaces, const GridGeometry& geometry,
                                 std::span<const FacadeExtent> extents, double spacing = 0.0);

/// Scored voxels: evaluable ones, minus unknowns when the grid is masked.
/// Unknown voxels of an unmasked grid keep their p = 0.5.
struct VoxelScores {
  std::vector<double> score;
  std::vector<std::uint8_t> label;

  std::size_t positives() const;
};

VoxelScores collect_scores(const OccupancyGrid& pred, const GroundTruthGrid& gt);

struct PrPoint {
  double threshold = 0.0;
  double precision = 1.0;
  double recall = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;  // threshold descending
  double auc = 0.0;
};

/// Area under the PR curve traced by every distinct score as threshold,
/// starting from (recall 0, precision 1); trapezoids in recall.
double pr_auc(const VoxelScores& scores);

/// Sweep over thresholds i/(n+1), i = n..1, plus the exact AUC.
PrCurve pr_curve(const VoxelScores& scores, std::size_t n_thresholds = 256);
PrCurve pr_curve(const OccupancyGrid& pred, const GroundTruthGrid& gt, std::size_t n_thresholds = 256);

struct CurvePoint {
  double key = 0.0;             // variance threshold or bin lower edge
  double upper = 0.0;           // bin upper edge (distance sweep)
  std::optional<double> auc;    // nullopt when nothing positive is scored
  std::size_t scored = 0;
};

/// AUC of the masked grid for each threshold; a non-finite threshold scores
/// the unmasked grid.
std::vector<CurvePoint> auc_vs_uncertainty(const VoxelEvaluation& eval, const GroundTruthGrid& gt,
                                           std::span<const double> thresholds);

/// AUC per bin [edges[i], edges[i+1]) of 2D distance from the voxel's
/// projection to the nearest training point of its source facade. Voxels
/// without a source facade are skipped.
std::vector<CurvePoint> auc_vs_distance(const VoxelEvaluation& eval, const GroundTruthGrid& gt,
                                        std::span<const FacadeModel> models, std::span<const double> edges);

/// Nearest-neighbour lookup over 2D points on a uniform bucket grid.
class PointIndex2 {
 public:
  explicit PointIndex2(std::span<const Vec2> points, double cell = 0.25);
  double nearest_distance(const Vec2& q) const;
  bool empty() const { return points_.empty(); }

 private:
  std::vector<Vec2> points_;
  double cell_;
  CellIndex lo_{};
  int width_ = 0;
  int height_ = 0;
  std::vector<std::size_t> start_;  // bucket offsets into order_
  std::vector<std::size_t> order_;
};

/// Fraction of held-out points with |d - mean| <= 1.96 sqrt(variance).
double calibration(const FacadeModel& model, std::span<const LocalPoint> held_out);

struct LabeledCurve {
  std::string label;
  PrCurve curve;
};

void write_pr_csv(const std::filesystem::path& path, std::span<const LabeledCurve> curves);
void write_pr_svg(const std::filesystem::path& path, std::span<const LabeledCurve> curves);

}  // namespace facade_gp
