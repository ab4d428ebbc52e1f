#include "support.hpp"

#include "facade_gp/error.hpp"
#include "facade_gp/occupancy.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace facade_gp;

namespace {

// Planar model at depth `mean` over [0, w] x [0, h] in the identity frame.
FacadeModel flat_model(double mean, double layer_std, double w = 1.0, double h = 1.0) {
  FacadeModel m;
  m.gmm.layers = {{1.0, mean, layer_std}};
  m.noise_std = 0.02;
  m.block_cell = 0.2;
  m.facets.cell_size = m.block_cell;
  m.extent = Rect2{Vec2::Zero(), Vec2(w, h)};
  return m;
}

double std_normal_cdf(double z) {
  // Midpoint rule on the density, independent of erfc.
  const int n = 200000;
  const double lo = -12.0, h = (z - lo) / n;
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = lo + (i + 0.5) * h;
    s += std::exp(-0.5 * t * t);
  }
  return s * h / std::sqrt(2.0 * 3.14159265358979323846);
}

}  // namespace

TEST_CASE("voxel on the predicted surface") {
  const double p = occupancy_probability(0.0, 0.02 * 0.02, 0.1, 1.0);
  CHECK(p == doctest::Approx(std_normal_cdf(2.5)).epsilon(1e-9));
  CHECK(p == doctest::Approx(0.99379).epsilon(1e-5));
  CHECK(occupancy_probability(1.0, 0.02 * 0.02, 0.1, 1.0) < 1e-100);
}

TEST_CASE("occupancy probability is symmetric and monotone") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> off(0.0, 0.3), var(1e-4, 0.05);
  for (int i = 0; i < 1000; ++i) {
    const double d = off(rng), v = var(rng);
    CHECK(occupancy_probability(d, v, 0.1, 1.0) == occupancy_probability(-d, v, 0.1, 1.0));
    CHECK(occupancy_probability(d + 0.01, v, 0.1, 1.0) <= occupancy_probability(d, v, 0.1, 1.0));
  }
  // Inside the slab, more variance pulls p toward one half from above.
  double prev = 1.0;
  for (double v = 1e-4; v < 1.0; v *= 2.0) {
    const double p = occupancy_probability(0.02, v, 0.1, 1.0);
    CHECK(p <= prev);
    CHECK(p > 0.5);
    prev = p;
  }
}

TEST_CASE("geometry lattice") {
  const auto g = make_geometry(Box3{Point3(0, 0, 0), Point3(1.0, 0.55, 0.3)}, 0.1);
  CHECK(g.dims == std::array<std::size_t, 3>{10, 6, 3});
  CHECK(g.linear(1, 2, 1) == 1 + 2 * 10 + 60);
  CHECK((g.center(g.linear(3, 4, 2)) - g.center(3, 4, 2)).norm() == 0.0);
  CHECK(g.locate(Point3(0.35, 0.41, 0.29)) == g.linear(3, 4, 2));
  CHECK_FALSE(g.locate(Point3(-0.01, 0, 0)).has_value());
  CHECK_FALSE(g.locate(Point3(0.5, 0.5, 0.31)).has_value());
  CHECK_THROWS_AS(make_geometry(Box3{Point3(0, 0, 0), Point3(1, 0, 1)}, 0.1), InvalidArgument);
  CHECK_THROWS_AS(make_geometry(Box3{Point3(0, 0, 0), Point3(1, 1, 1)}, 0.0), InvalidArgument);
}

TEST_CASE("planar model fills one voxel slab") {
  const std::vector<FacadeModel> models{flat_model(0.05, 0.005)};
  const Box3 box{Point3(0, 0, -0.3), Point3(1, 1, 0.3)};
  OccupancyConfig cfg;
  const auto grid = to_occupancy(models, box, cfg);
  const auto& g = grid.geometry;
  REQUIRE(g.dims == std::array<std::size_t, 3>{10, 10, 6});
  CHECK_FALSE(grid.masked);
  for (std::size_t iz = 0; iz < g.dims[2]; ++iz) {
    for (std::size_t iy = 0; iy < g.dims[1]; ++iy) {
      for (std::size_t ix = 0; ix < g.dims[0]; ++ix) {
        const auto i = g.linear(ix, iy, iz);
        CHECK(grid.unknown[i] == 0);
        // Voxel [0, 0.1) holds the surface at 0.05.
        if (iz == 3) CHECK(grid.p_occ[i] > 0.99);
        else CHECK(grid.p_occ[i] < 0.01);
      }
    }
  }
}

TEST_CASE("voxels outside every padded extent are unknown") {
  const std::vector<FacadeModel> models{flat_model(0.0, 0.01)};
  const auto g = make_geometry(Box3{Point3(-1, -1, -0.1), Point3(2, 2, 0.1)}, 0.1);
  const auto ev = evaluate_voxels(models, g, 1.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Point3 c = g.center(i);
    const bool inside = c.x() >= -0.2 && c.x() <= 1.2 && c.y() >= -0.2 && c.y() <= 1.2;
    CHECK(ev.grid.unknown[i] == (inside ? 0 : 1));
    if (!inside) {
      CHECK(ev.grid.p_occ[i] == 0.5);
      CHECK(ev.source[i] == -1);
    }
  }
}

TEST_CASE("max fusion over facades") {
  FacadeModel a = flat_model(0.05, 0.005);
  FacadeModel b = flat_model(0.15, 0.005);
  const std::vector<FacadeModel> both{a, b};
  const auto g = make_geometry(Box3{Point3(0, 0, 0), Point3(1, 1, 0.3)}, 0.1);
  const auto ea = evaluate_voxels(std::span(&a, 1), g, 1.0);
  const auto eb = evaluate_voxels(std::span(&b, 1), g, 1.0);
  const auto e = evaluate_voxels(both, g, 1.0, 2);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(e.grid.p_occ[i] == std::max(ea.grid.p_occ[i], eb.grid.p_occ[i]));
    CHECK(e.source[i] == (eb.grid.p_occ[i] > ea.grid.p_occ[i] ? 1 : 0));
  }
}

TEST_CASE("variance threshold masks uncertain voxels") {
  // Layer variance 0.0196 plus noise 0.0004 gives 0.02 > 0.01.
  const std::vector<FacadeModel> models{flat_model(0.0, 0.14)};
  const Box3 box{Point3(-0.5, -0.5, -0.2), Point3(1.5, 1.5, 0.2)};
  OccupancyConfig cfg;
  const auto open = to_occupancy(models, box, cfg);
  cfg.variance_threshold = 0.01;
  const auto masked = to_occupancy(models, box, cfg);
  CHECK(masked.masked);
  for (std::size_t i = 0; i < masked.p_occ.size(); ++i) {
    CHECK(masked.unknown[i] == 1);
    CHECK(masked.p_occ[i] == 0.5);
  }
  CHECK(std::count(open.unknown.begin(), open.unknown.end(), 0) > 0);
  cfg.variance_threshold = 0.0;
  CHECK_THROWS_AS(to_occupancy(models, box, cfg), InvalidArgument);
}

TEST_CASE("masking only adds unknowns") {
  std::vector<FacadeModel> models{flat_model(0.0, 0.05), flat_model(0.0, 0.12)};
  models[1].frame.origin = Point3(0.6, 0, 0);
  const auto g = make_geometry(Box3{Point3(-0.5, -0.5, -0.2), Point3(2, 1.5, 0.2)}, 0.1);
  const auto ev = evaluate_voxels(models, g, 1.0);
  for (double t : {0.001, 0.005, 0.01, 0.1}) {
    const auto m = apply_variance_threshold(ev, t);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (ev.grid.unknown[i]) CHECK(m.unknown[i] == 1);
      if (!m.unknown[i]) CHECK(m.p_occ[i] == ev.grid.p_occ[i]);
    }
  }
  CHECK(apply_variance_threshold(ev, std::nullopt) == ev.grid);
}

TEST_CASE("halving the resolution keeps a planar surface connected") {
  const std::vector<FacadeModel> models{flat_model(0.013, 0.005, 2.0, 2.0)};
  for (double r : {0.1, 0.05}) {
    OccupancyConfig cfg;
    cfg.resolution = r;
    const auto grid = to_occupancy(models, Box3{Point3(0, 0, -0.2), Point3(2, 2, 0.2)}, cfg);
    const auto& g = grid.geometry;
    for (std::size_t iy = 0; iy < g.dims[1]; ++iy) {
      for (std::size_t ix = 0; ix < g.dims[0]; ++ix) {
        bool hit = false;
        for (std::size_t iz = 0; iz < g.dims[2]; ++iz) hit = hit || grid.p_occ[g.linear(ix, iy, iz)] > 0.5;
        CHECK(hit);
      }
    }
  }
}

TEST_CASE("grid files round-trip bit for bit") {
  test_support::TempDir dir;
  OccupancyGrid empty;
  write_grid(empty, dir / "empty.grid");
  CHECK(read_grid(dir / "empty.grid") == empty);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  OccupancyGrid g;
  g.geometry = make_geometry(Box3{Point3(-0.3, 1.7, 0.1), Point3(1.3, 3.3, 1.7)}, 0.1);
  REQUIRE(g.geometry.size() == 16 * 16 * 16);
  g.masked = true;
  for (std::size_t i = 0; i < g.geometry.size(); ++i) {
    const bool unknown = u(rng) < 0.2;
    g.unknown.push_back(unknown ? 1 : 0);
    g.p_occ.push_back(unknown ? 0.5 : u(rng));
  }
  write_grid(g, dir / "rand.grid");
  CHECK(read_grid(dir / "rand.grid") == g);
}

TEST_CASE("grid files with another version or bad data are rejected") {
  test_support::TempDir dir;
  OccupancyGrid g;
  g.geometry = make_geometry(Box3{Point3(0, 0, 0), Point3(0.1, 0.1, 0.2)}, 0.1);
  g.p_occ = {0.25, 0.75};
  g.unknown = {0, 0};
  write_grid(g, dir / "g.grid");
  auto text = test_support::read_text(dir / "g.grid");
  const auto at = text.find("format_version 1");
  REQUIRE(at != std::string::npos);
  auto bumped = text;
  bumped.replace(at, 16, "format_version 7");
  test_support::write_text(dir / "v.grid", bumped);
  CHECK_THROWS_AS(read_grid(dir / "v.grid"), FormatError);
  test_support::write_text(dir / "t.grid", text.substr(0, text.size() - 4));
  CHECK_THROWS_AS(read_grid(dir / "t.grid"), ParseError);
  CHECK_THROWS_AS(read_grid(dir / "none.grid"), NotFoundError);
}
