#include "support.hpp"

#include "facade_gp/error.hpp"
#include "facade_gp/synth.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace facade_gp;

namespace {

std::vector<double> depths(const FacadeSpec& spec, const PointCloud& cloud) {
  std::vector<double> d;
  for (const auto& lp : to_local(spec.frame, cloud)) d.push_back(lp.d);
  return d;
}

}  // namespace

TEST_CASE("flat noiseless facade has zero depth") {
  FacadeSpec spec;
  spec.noise_std = 0.0;
  const auto s = generate(spec);
  CHECK(s.cloud.size() == 19200);
  for (double d : depths(spec, s.cloud)) CHECK(d == 0.0);
  for (const auto& n : s.cloud.normals) CHECK(n == Eigen::Vector3d::UnitZ());
}

TEST_CASE("flat facade noise level") {
  FacadeSpec spec;
  spec.density = 10000.0 / 48.0;
  const auto d = depths(spec, generate(spec).cloud);
  REQUIRE(d.size() >= 10000);
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(d.size()));
  CHECK(std::abs(sd - 0.02) <= 0.05 * 0.02);
}

TEST_CASE("protrusion over a quarter of the facade is bimodal") {
  FacadeSpec spec;
  spec.layers.push_back({Rect2{Vec2(0, 0), Vec2(4, 3)}, 0.3});
  const auto d = depths(spec, generate(spec).cloud);
  // 5 cm bins centred on -0.1, -0.05, ..., 0.4.
  std::vector<int> bins(11, 0);
  for (double v : d) {
    const int b = static_cast<int>(std::lround(v / 0.05)) + 2;
    if (b >= 0 && b < 11) ++bins[static_cast<std::size_t>(b)];
  }
  const auto peak_low = std::max_element(bins.begin(), bins.begin() + 5) - bins.begin();
  const auto peak_high = std::max_element(bins.begin() + 5, bins.end()) - bins.begin();
  CHECK(peak_low == 2);   // 0
  CHECK(peak_high == 8);  // 0.3
  CHECK(bins[5] < bins[2] / 50);
  const auto high = std::count_if(d.begin(), d.end(), [](double v) { return v > 0.15; });
  CHECK(static_cast<double>(high) / static_cast<double>(d.size()) == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("occluded rectangle has no points") {
  FacadeSpec spec;
  spec.occlusions.push_back(Rect2{Vec2(0, 0), Vec2(4, 6)});
  const auto s = generate(spec);
  CHECK(s.cloud.size() == 9600);
  for (const auto& lp : to_local(spec.frame, s.cloud)) CHECK(lp.x.x() > 4.0);

  spec.occlusions = {Rect2{Vec2(0, 0), Vec2(8, 6)}};
  CHECK(generate(spec).cloud.empty());
}

TEST_CASE("truth depth") {
  FacadeSpec spec;
  spec.layers.push_back({Rect2{Vec2(4, 0), Vec2(8, 6)}, 0.3});
  spec.slope = SlopeRegion{Rect2{Vec2(0.5, 1.0), Vec2(3.5, 4.0)}, 0.1};
  spec.bump = BumpRegion{Vec2(6.0, 3.0), 0.8, 0.15};
  const TruthOracle o{spec};
  CHECK(truth_depth(o, Vec2(1.0, 5.0)) == 0.0);
  CHECK(truth_depth(o, Vec2(6.0, 3.0)) == doctest::Approx(0.15 + 0.3).epsilon(1e-15));
  CHECK(truth_depth(o, Vec2(2.0, 3.0)) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(truth_depth(o, Vec2(6.0, 3.7)) > 0.3);
  CHECK(truth_depth(o, Vec2(6.0, 3.81)) == 0.3);
  CHECK_THROWS_AS(truth_depth(o, Vec2(8.5, 1.0)), InvalidArgument);
  CHECK_THROWS_AS(truth_depth(o, Vec2(1.0, -0.1)), InvalidArgument);
}

TEST_CASE("analytic gradient matches finite differences inside the bump") {
  FacadeSpec spec;
  spec.bump = BumpRegion{Vec2(4.0, 3.0), 1.0, 0.15};
  const TruthOracle o{spec};
  const double h = 1e-6;
  for (const Vec2 x : {Vec2(4.3, 3.1), Vec2(3.5, 2.4), Vec2(4.0, 3.95), Vec2(4.0, 3.0)}) {
    const Vec2 fd((o.depth(x + Vec2(h, 0)) - o.depth(x - Vec2(h, 0))) / (2 * h),
                  (o.depth(x + Vec2(0, h)) - o.depth(x - Vec2(0, h))) / (2 * h));
    CHECK((o.gradient(x) - fd).norm() < 1e-6);
  }
  // The profile flattens toward the rim.
  CHECK(o.gradient(Vec2(4.0, 3.999)).norm() < 1e-12);
}

TEST_CASE("spec validation") {
  FacadeSpec spec;
  spec.layers.push_back({Rect2{Vec2(7, 0), Vec2(9, 1)}, 0.3});
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
  spec.layers.clear();
  spec.density = 0.0;
  CHECK_THROWS_AS(generate(spec), InvalidArgument);
  spec.density = 400.0;
  spec.bump = BumpRegion{Vec2(0.5, 3.0), 0.8, 0.1};
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
}

TEST_CASE("default scene") {
  const auto scene = default_scene();
  REQUIRE(scene.size() == 3);
  std::size_t total = 0;
  for (const auto& s : scene) {
    CHECK(s.width == 8.0);
    CHECK(s.height == 6.0);
    CHECK(s.noise_std == 0.02);
    CHECK(s.frame.is_orthonormal());
    total += generate(s).cloud.size();
  }
  // Facade B loses its 3 m^2 occlusion.
  CHECK(total == 2 * 19200 + 18000);
  CHECK(scene[1].layers.size() == 2);
  CHECK(scene[1].layers[0].depth == 0.30);
  CHECK(scene[1].layers[1].depth == -0.20);
  CHECK(scene[1].layers[0].rect.area() == doctest::Approx(3.0));
  CHECK(scene[1].layers[1].rect.area() == doctest::Approx(2.0));
  REQUIRE(scene[2].slope.has_value());
  CHECK(scene[2].slope->gradient == 0.08);
  REQUIRE(scene[2].bump.has_value());
  CHECK(scene[2].bump->amplitude == 0.15);
  CHECK(scene[2].bump->radius == 0.8);
}

TEST_CASE("generation is deterministic per seed") {
  const auto a = default_scene(42), b = default_scene(42), c = default_scene(43);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto ga = generate(a[i]), gb = generate(b[i]), gc = generate(c[i]);
    CHECK(ga.cloud.points == gb.cloud.points);
    CHECK(ga.cloud.normals == gb.cloud.normals);
    CHECK_FALSE(ga.cloud.points == gc.cloud.points);
  }
}

TEST_CASE("scene json round-trip and truth samples") {
  const auto scene = default_scene(7);
  const auto back = scene_from_json(nlohmann::json::parse(scene_to_json(scene).dump()));
  REQUIRE(back.size() == scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    CHECK(generate(back[i]).cloud.points == generate(scene[i]).cloud.points);
  }
  test_support::TempDir dir;
  write_truth_samples(dir / "truth.csv", scene, 0.5);
  const auto text = test_support::read_text(dir / "truth.csv");
  // 17 x 13 samples per facade plus the header.
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 3 * 17 * 13);
  CHECK_THROWS_AS(scene_from_json(nlohmann::json::parse(R"([{"name": "A", "frame": 3}])")), FormatError);
}
