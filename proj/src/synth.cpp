#include "facade_gp/synth.hpp"

#include "facade_gp/diagnostics.hpp"
#include "facade_gp/error.hpp"
#include "facade_gp/model_io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

namespace facade_gp {

namespace {

bool within(const Rect2& inner, const Rect2& outer) {
  return inner.lo.x() >= outer.lo.x() && inner.lo.y() >= outer.lo.y() && inner.hi.x() <= outer.hi.x() &&
         inner.hi.y() <= outer.hi.y() && inner.lo.x() <= inner.hi.x() && inner.lo.y() <= inner.hi.y();
}

}  // namespace

void FacadeSpec::validate() const {
  if (!(width > 0.0) || !(height > 0.0)) throw InvalidArgument("facade size must be positive");
  if (!(density > 0.0)) throw InvalidArgument("density must be positive");
  if (!(noise_std >= 0.0)) throw InvalidArgument("noise std must be non-negative");
  if (!frame.is_orthonormal()) throw InvalidArgument("facade frame must be orthonormal");
  const Rect2 dom = domain();
  for (const auto& l : layers) {
    if (!within(l.rect, dom)) throw InvalidArgument("layer region outside facade " + name);
  }
  for (const auto& o : occlusions) {
    if (!within(o, dom)) throw InvalidArgument("occlusion outside facade " + name);
  }
  if (slope && !within(slope->rect, dom)) throw InvalidArgument("slope region outside facade " + name);
  if (bump) {
    if (!(bump->radius > 0.0)) throw InvalidArgument("bump radius must be positive");
    const Rect2 r{(bump->center.array() - bump->radius).matrix(), (bump->center.array() + bump->radius).matrix()};
    if (!within(r, dom)) throw InvalidArgument("bump region outside facade " + name);
  }
}

bool FacadeSpec::occluded(const Vec2& x) const {
  return std::any_of(occlusions.begin(), occlusions.end(), [&](const Rect2& r) { return r.contains(x); });
}

double FacadeSpec::unoccluded_area() const {
  // exact union area of the occlusions via coordinate compression
  std::set<double> xs{0.0, width}, ys{0.0, height};
  for (const auto& o : occlusions) {
    xs.insert(o.lo.x());
    xs.insert(o.hi.x());
    ys.insert(o.lo.y());
    ys.insert(o.hi.y());
  }
  const std::vector<double> vx(xs.begin(), xs.end()), vy(ys.begin(), ys.end());
  double covered = 0.0;
  for (std::size_t i = 0; i + 1 < vx.size(); ++i) {
    for (std::size_t j = 0; j + 1 < vy.size(); ++j) {
      const Vec2 mid(0.5 * (vx[i] + vx[i + 1]), 0.5 * (vy[j] + vy[j + 1]));
      if (occluded(mid)) covered += (vx[i + 1] - vx[i]) * (vy[j + 1] - vy[j]);
    }
  }
  return width * height - covered;
}

double TruthOracle::depth(const Vec2& x) const {
  double d = 0.0;
  for (const auto& l : spec.layers) {
    if (l.rect.contains(x)) d = l.depth;
  }
  if (spec.slope && spec.slope->rect.contains(x)) d += spec.slope->gradient * (x.y() - spec.slope->rect.lo.y());
  if (spec.bump) {
    const double s = (x - spec.bump->center).squaredNorm() / (spec.bump->radius * spec.bump->radius);
    if (s < 1.0) d += spec.bump->amplitude * std::exp(1.0 - 1.0 / (1.0 - s));
  }
  return d;
}

Vec2 TruthOracle::gradient(const Vec2& x) const {
  Vec2 g = Vec2::Zero();
  if (spec.slope && spec.slope->rect.contains(x)) g.y() += spec.slope->gradient;
  if (spec.bump) {
    const double r2 = spec.bump->radius * spec.bump->radius;
    const Vec2 dx = x - spec.bump->center;
    const double s = dx.squaredNorm() / r2;
    if (s < 1.0) {
      const double f = spec.bump->amplitude * std::exp(1.0 - 1.0 / (1.0 - s));
      g += f * (-2.0 / (r2 * (1.0 - s) * (1.0 - s))) * dx;
    }
  }
  return g;
}

Eigen::Vector3d TruthOracle::normal(const Vec2& x) const {
  const Vec2 g = gradient(x);
  return (spec.frame.n - g.x() * spec.frame.u - g.y() * spec.frame.v).normalized();
}

double truth_depth(const TruthOracle& oracle, const Vec2& x) {
  if (!oracle.spec.domain().padded(1e-12).contains(x)) {
    throw InvalidArgument("query outside facade " + oracle.spec.name);
  }
  return oracle.depth(x);
}

SynthFacade generate(const FacadeSpec& spec) {
  spec.validate();
  SynthFacade out{{}, TruthOracle{spec}};
  const double area = spec.unoccluded_area();
  if (area <= 1e-12) {
    log::warn("facade " + spec.name + " is fully occluded; no points generated");
    return out;
  }
  const auto count = static_cast<std::size_t>(std::ceil(spec.density * area));
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> ux(0.0, spec.width), uy(0.0, spec.height);
  std::normal_distribution<double> noise(0.0, 1.0);
  out.cloud.points.reserve(count);
  out.cloud.normals.reserve(count);
  while (out.cloud.points.size() < count) {
    const Vec2 x(ux(rng), uy(rng));
    if (spec.occluded(x)) continue;
    const double eps = noise(rng);
    const double d = out.oracle.depth(x) + spec.noise_std * eps;
    out.cloud.points.push_back(from_local(spec.frame, x, d));
    out.cloud.normals.push_back(out.oracle.normal(x));
  }
  return out;
}

std::vector<FacadeSpec> default_scene(std::uint64_t seed) {
  auto frame_at = [](double x, double y) {
    FacadeFrame f;
    f.origin = Point3(x, y, 0.0);
    f.u = Eigen::Vector3d::UnitX();
    f.n = -Eigen::Vector3d::UnitY();
    f.v = f.n.cross(f.u);
    return f;
  };
  std::vector<FacadeSpec> scene(3);
  scene[0].name = "A";
  scene[0].frame = frame_at(0.0, 0.0);

  scene[1].name = "B";
  scene[1].frame = frame_at(9.0, 1.0);
  scene[1].layers = {{{Vec2(1.0, 3.0), Vec2(3.0, 4.5)}, 0.30}, {{Vec2(5.0, 0.5), Vec2(6.0, 2.5)}, -0.20}};
  scene[1].occlusions = {{Vec2(3.5, 0.0), Vec2(5.0, 2.0)}};

  scene[2].name = "C";
  scene[2].frame = frame_at(18.0, -1.0);
  scene[2].slope = SlopeRegion{{Vec2(0.5, 0.5), Vec2(3.5, 3.5)}, 0.08};
  scene[2].bump = BumpRegion{Vec2(6.0, 3.0), 0.8, 0.15};

  for (std::size_t i = 0; i < scene.size(); ++i) scene[i].seed = seed + i;
  return scene;
}

AnalyticSurface surface_of(const FacadeSpec& spec) {
  TruthOracle oracle{spec};
  return {spec.frame, spec.domain(), [oracle](const Vec2& x) { return oracle.depth(x); }};
}

void write_truth_samples(const std::filesystem::path& path, std::span<const FacadeSpec> specs, double spacing) {
  if (!(spacing > 0.0)) throw InvalidArgument("sample spacing must be positive");
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "facade,x1,x2,depth,x,y,z\n";
  char buf[256];
  for (const auto& spec : specs) {
    const TruthOracle oracle{spec};
    const auto n1 = static_cast<std::size_t>(std::floor(spec.width / spacing + 1e-9));
    const auto n2 = static_cast<std::size_t>(std::floor(spec.height / spacing + 1e-9));
    for (std::size_t j = 0; j <= n2; ++j) {
      for (std::size_t i = 0; i <= n1; ++i) {
        const Vec2 x(static_cast<double>(i) * spacing, static_cast<double>(j) * spacing);
        const double d = oracle.depth(x);
        const Point3 p = from_local(spec.frame, x, d);
        std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.9f,%.9f,%.9f,%.9f\n", x.x(), x.y(), d, p.x(), p.y(), p.z());
        out << spec.name << buf;
      }
    }
  }
}

namespace {

nlohmann::json rect_json(const Rect2& r) { return {r.lo.x(), r.lo.y(), r.hi.x(), r.hi.y()}; }

Rect2 rect_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("rectangle must be [x1_lo, x2_lo, x1_hi, x2_hi]");
  return {Vec2(j[0].get<double>(), j[1].get<double>()), Vec2(j[2].get<double>(), j[3].get<double>())};
}

}  // namespace

nlohmann::json scene_to_json(std::span<const FacadeSpec> specs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : specs) {
    nlohmann::json j;
    j["name"] = s.name;
    j["frame"] = frame_to_json(s.frame);
    j["width"] = s.width;
    j["height"] = s.height;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : s.layers) j["layers"].push_back({{"rect", rect_json(l.rect)}, {"depth", l.depth}});
    if (s.slope) j["slope"] = {{"rect", rect_json(s.slope->rect)}, {"gradient", s.slope->gradient}};
    if (s.bump) {
      j["bump"] = {{"center", {s.bump->center.x(), s.bump->center.y()}},
                   {"radius", s.bump->radius},
                   {"amplitude", s.bump->amplitude}};
    }
    j["occlusions"] = nlohmann::json::array();
    for (const auto& o : s.occlusions) j["occlusions"].push_back(rect_json(o));
    j["noise_std"] = s.noise_std;
    j["density"] = s.density;
    j["seed"] = s.seed;
    arr.push_back(std::move(j));
  }
  return {{"format_version", 1}, {"facades", arr}};
}

std::vector<FacadeSpec> scene_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != 1) throw FormatError("unsupported scene format_version");
    std::vector<FacadeSpec> specs;
    for (const auto& f : j.at("facades")) {
      FacadeSpec s;
      s.name = f.at("name").get<std::string>();
      s.frame = frame_from_json(f.at("frame"));
      s.width = f.at("width").get<double>();
      s.height = f.at("height").get<double>();
      for (const auto& l : f.at("layers")) s.layers.push_back({rect_from(l.at("rect")), l.at("depth").get<double>()});
      if (f.contains("slope")) {
        s.slope = SlopeRegion{rect_from(f["slope"].at("rect")), f["slope"].at("gradient").get<double>()};
      }
      if (f.contains("bump")) {
        const auto& b = f["bump"];
        s.bump = BumpRegion{Vec2(b.at("center").at(0).get<double>(), b.at("center").at(1).get<double>()),
                            b.at("radius").get<double>(), b.at("amplitude").get<double>()};
      }
      for (const auto& o : f.at("occlusions")) s.occlusions.push_back(rect_from(o));
      s.noise_std = f.at("noise_std").get<double>();
      s.density = f.at("density").get<double>();
      s.seed = f.at("seed").get<std::uint64_t>();
      s.validate();
      specs.push_back(std::move(s));
    }
    return specs;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed scene: ") + e.what());
  }
}

}  // namespace facade_gp
