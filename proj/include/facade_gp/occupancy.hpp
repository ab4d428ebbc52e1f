#pragma once

#include "facade_gp/facade_model.hpp"
#include "facade_gp/geometry.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace facade_gp {

inline constexpr int kGridFormatVersion = 1;

/// Axis-aligned voxel lattice; voxel (ix, iy, iz) spans
/// origin + [ix, ix+1) * resolution etc. Linear order is x fastest.
struct GridGeometry {
  Point3 origin = Point3::Zero();
  double resolution = 0.1;
  std::array<std::size_t, 3> dims{0, 0, 0};

  std::size_t size() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t linear(std::size_t ix, std::size_t iy, std::size_t iz) const {
    return (iz * dims[1] + iy) * dims[0] + ix;
  }
  Point3 center(std::size_t ix, std::size_t iy, std::size_t iz) const {
    return origin + resolution * Point3(static_cast<double>(ix) + 0.5, static_cast<double>(iy) + 0.5,
                                        static_cast<double>(iz) + 0.5);
  }
  Point3 center(std::size_t linear_index) const;
  std::optional<std::size_t> locate(const Point3& p) const;

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// dims = ceil(extent / resolution), origin = box.lo.
GridGeometry make_geometry(const Box3& box, double resolution);

struct OccupancyGrid {
  GridGeometry geometry;
  std::vector<double> p_occ;          // [0, 1]; 0.5 where unknown
  std::vector<std::uint8_t> unknown;  // 1 = no usable prediction
  bool masked = false;                // a variance threshold was applied

  friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;
};

struct OccupancyConfig {
  double resolution = 0.1;  // m
  double gamma = 1.0;       // steepness of the cumulative-Gaussian map
  std::optional<double> variance_threshold;  // m^2; set -> accurate mode

  void validate() const;
};

/// Phi(gamma * (r/2 - |offset|) / sigma): probability that a voxel whose
/// centre lies `offset` from the predicted surface is occupied.
double occupancy_probability(double offset, double variance, double resolution, double gamma);

/// Unmasked voxel evaluation plus the per-voxel data needed for masking and
/// distance binning.
struct VoxelEvaluation {
  OccupancyGrid grid;
  std::vector<double> min_variance;           // +inf without a contributing facade
  std::vector<int> source;                    // facade attaining the max, -1 if none
  std::vector<std::array<float, 2>> local_x;  // projection in that facade's frame
};

/// Evaluates every voxel against every facade whose padded extent contains
/// the voxel's projection; p_occ is the max over those facades.
VoxelEvaluation evaluate_voxels(std::span<const FacadeModel> models, const GridGeometry& geometry,
                                double gamma, int threads = 1);

/// Marks known voxels whose smallest contributing variance exceeds the
/// threshold as unknown (p = 0.5). nullopt returns the unmasked grid.
OccupancyGrid apply_variance_threshold(const VoxelEvaluation& eval, std::optional<double> threshold);

OccupancyGrid to_occupancy(std::span<const FacadeModel> models, const Box3& bbox,
                           const OccupancyConfig& cfg, int threads = 1);

/// Text header + one "p unknown" line per voxel in x-fastest order; doubles
/// are written with 17 significant digits so reading back is bit exact.
void write_grid(const OccupancyGrid& grid, const std::filesystem::path& path);
OccupancyGrid read_grid(const std::filesystem::path& path);

}  // namespace facade_gp
