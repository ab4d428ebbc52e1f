#pragma once

#include "facade_gp/evaluation.hpp"
#include "facade_gp/geometry.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace facade_gp {

/// Planar layer: depth inside rect (protrusion > 0, extrusion < 0).
struct LayerRegion {
  Rect2 rect;
  double depth = 0.0;
};

/// Inclined patch: adds gradient * (x2 - rect.lo.y) inside rect.
struct SlopeRegion {
  Rect2 rect;
  double gradient = 0.0;
};

/// Smooth compact bump a * exp(1 - 1 / (1 - (rho/R)^2)) for rho < R.
struct BumpRegion {
  Vec2 center = Vec2::Zero();
  double radius = 1.0;
  double amplitude = 0.0;
};

struct FacadeSpec {
  std::string name;
  FacadeFrame frame;  // placement of the local (x1, x2, d) frame in the world
  double width = 8.0;
  double height = 6.0;
  std::vector<LayerRegion> layers;  // later entries override earlier ones
  std::optional<SlopeRegion> slope;
  std::optional<BumpRegion> bump;
  std::vector<Rect2> occlusions;
  double noise_std = 0.02;
  double density = 400.0;  // points / m^2
  std::uint64_t seed = 42;

  void validate() const;
  Rect2 domain() const { return {Vec2::Zero(), Vec2(width, height)}; }
  bool occluded(const Vec2& x) const;
  double unoccluded_area() const;
};

struct TruthOracle {
  FacadeSpec spec;

  double depth(const Vec2& x) const;
  Vec2 gradient(const Vec2& x) const;
  Eigen::Vector3d normal(const Vec2& x) const;  // world frame
};

/// Exact noiseless depth at x; throws InvalidArgument outside the facade.
double truth_depth(const TruthOracle& oracle, const Vec2& x);

struct SynthFacade {
  PointCloud cloud;  // with analytic normals
  TruthOracle oracle;
};

SynthFacade generate(const FacadeSpec& spec);

/// Three 8 x 6 m facades along a street: flat; protrusion, extrusion and
/// occlusion; slope and bump.
std::vector<FacadeSpec> default_scene(std::uint64_t seed = 42);

AnalyticSurface surface_of(const FacadeSpec& spec);

void write_truth_samples(const std::filesystem::path& path, std::span<const FacadeSpec> specs,
                         double spacing = 0.1);

nlohmann::json scene_to_json(std::span<const FacadeSpec> specs);
std::vector<FacadeSpec> scene_from_json(const nlohmann::json& j);

}  // namespace facade_gp
