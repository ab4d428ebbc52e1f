#include "facade_gp/occupancy.hpp"

#include "facade_gp/error.hpp"
#include "facade_gp/parallel.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

namespace facade_gp {

Point3 GridGeometry::center(std::size_t linear_index) const {
  const std::size_t ix = linear_index % dims[0];
  const std::size_t iy = (linear_index / dims[0]) % dims[1];
  const std::size_t iz = linear_index / (dims[0] * dims[1]);
  return center(ix, iy, iz);
}

std::optional<std::size_t> GridGeometry::locate(const Point3& p) const {
  std::array<std::size_t, 3> idx{};
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor((p(a) - origin(a)) / resolution);
    if (!(f >= 0.0) || f >= static_cast<double>(dims[static_cast<std::size_t>(a)])) return std::nullopt;
    idx[static_cast<std::size_t>(a)] = static_cast<std::size_t>(f);
  }
  return linear(idx[0], idx[1], idx[2]);
}

GridGeometry make_geometry(const Box3& box, double resolution) {
  if (!(resolution > 0.0)) throw InvalidArgument("grid resolution must be positive");
  GridGeometry g;
  g.origin = box.lo;
  g.resolution = resolution;
  for (int a = 0; a < 3; ++a) {
    const double extent = box.hi(a) - box.lo(a);
    if (!(extent > 0.0)) throw InvalidArgument("bounding box is degenerate");
    g.dims[static_cast<std::size_t>(a)] =
        static_cast<std::size_t>(std::ceil(extent / resolution - 1e-9));
  }
  return g;
}

void OccupancyConfig::validate() const {
  if (!(resolution > 0.0)) throw InvalidArgument("resolution must be positive");
  if (!(gamma > 0.0)) throw InvalidArgument("gamma must be positive");
  if (variance_threshold && !(*variance_threshold > 0.0)) {
    throw InvalidArgument("variance threshold must be positive");
  }
}

double occupancy_probability(double offset, double variance, double resolution, double gamma) {
  const double z = gamma * (0.5 * resolution - std::abs(offset)) / std::sqrt(variance);
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

VoxelEvaluation evaluate_voxels(std::span<const FacadeModel> models, const GridGeometry& geometry,
                                double gamma, int threads) {
  VoxelEvaluation ev;
  ev.grid.geometry = geometry;
  const std::size_t n = geometry.size();
  ev.grid.p_occ.assign(n, 0.5);
  ev.grid.unknown.assign(n, 1);
  ev.min_variance.assign(n, std::numeric_limits<double>::infinity());
  ev.source.assign(n, -1);
  ev.local_x.assign(n, {0.0f, 0.0f});

  std::vector<Rect2> extents;
  for (const auto& m : models) extents.push_back(m.extent.padded(m.block_cell));

  const std::size_t slab = geometry.dims[0] * geometry.dims[1];
  parallel_for(geometry.dims[2], resolve_threads(threads), [&](std::size_t iz) {
    for (std::size_t idx = iz * slab; idx < (iz + 1) * slab; ++idx) {
      const Point3 c = geometry.center(idx);
      double best_p = -1.0;
      for (std::size_t f = 0; f < models.size(); ++f) {
        const auto lp = to_local(models[f].frame, c);
        if (!extents[f].contains(lp.x)) continue;
        const auto est = query_surface(models[f], lp.x);
        const double p = occupancy_probability(lp.d - est.mean, est.variance, geometry.resolution, gamma);
        ev.min_variance[idx] = std::min(ev.min_variance[idx], est.variance);
        if (p > best_p) {
          best_p = p;
          ev.source[idx] = static_cast<int>(f);
          ev.local_x[idx] = {static_cast<float>(lp.x.x()), static_cast<float>(lp.x.y())};
        }
      }
      if (best_p >= 0.0) {
        ev.grid.p_occ[idx] = best_p;
        ev.grid.unknown[idx] = 0;
      }
    }
  });
  return ev;
}

OccupancyGrid apply_variance_threshold(const VoxelEvaluation& eval, std::optional<double> threshold) {
  OccupancyGrid grid = eval.grid;
  if (!threshold) return grid;
  grid.masked = true;
  for (std::size_t i = 0; i < grid.p_occ.size(); ++i) {
    if (!grid.unknown[i] && eval.min_variance[i] > *threshold) {
      grid.unknown[i] = 1;
      grid.p_occ[i] = 0.5;
    }
  }
  return grid;
}

OccupancyGrid to_occupancy(std::span<const FacadeModel> models, const Box3& bbox,
                           const OccupancyConfig& cfg, int threads) {
  cfg.validate();
  const auto geometry = make_geometry(bbox, cfg.resolution);
  return apply_variance_threshold(evaluate_voxels(models, geometry, cfg.gamma, threads),
                                  cfg.variance_threshold);
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_number(const std::string& token, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw ParseError("cannot parse number '" + token + "'", line);
  }
  return v;
}

}  // namespace

void write_grid(const OccupancyGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const auto& g = grid.geometry;
  out << "facade_gp_occupancy\n"
      << "format_version " << kGridFormatVersion << '\n'
      << "dims " << g.dims[0] << ' ' << g.dims[1] << ' ' << g.dims[2] << '\n'
      << "origin " << fmt17(g.origin.x()) << ' ' << fmt17(g.origin.y()) << ' ' << fmt17(g.origin.z()) << '\n'
      << "resolution " << fmt17(g.resolution) << '\n'
      << "masked " << (grid.masked ? 1 : 0) << '\n'
      << "end_header\n";
  for (std::size_t i = 0; i < grid.p_occ.size(); ++i) {
    out << fmt17(grid.p_occ[i]) << ' ' << static_cast<int>(grid.unknown[i]) << '\n';
  }
}

OccupancyGrid read_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("grid file not found: " + path.string());
  std::string line;
  std::size_t line_no = 0;
  auto next_fields = [&](const char* key, std::size_t count) {
    if (!std::getline(in, line)) throw ParseError(std::string("missing '") + key + "'", line_no + 1);
    ++line_no;
    std::istringstream ss(line);
    std::string k;
    ss >> k;
    if (k != key) throw ParseError(std::string("expected '") + key + "'", line_no);
    std::vector<std::string> fields(count);
    for (auto& f : fields) {
      if (!(ss >> f)) throw ParseError(std::string("too few values for '") + key + "'", line_no);
    }
    return fields;
  };
  if (!std::getline(in, line) || line != "facade_gp_occupancy") {
    throw ParseError("not an occupancy grid file", 1);
  }
  ++line_no;
  const auto version = next_fields("format_version", 1);
  if (version[0] != std::to_string(kGridFormatVersion)) {
    throw FormatError("unsupported grid format_version " + version[0]);
  }
  OccupancyGrid grid;
  auto& g = grid.geometry;
  const auto dims = next_fields("dims", 3);
  for (std::size_t a = 0; a < 3; ++a) g.dims[a] = static_cast<std::size_t>(std::stoull(dims[a]));
  const auto origin = next_fields("origin", 3);
  for (int a = 0; a < 3; ++a) g.origin(a) = parse_number(origin[static_cast<std::size_t>(a)], line_no);
  g.resolution = parse_number(next_fields("resolution", 1)[0], line_no);
  grid.masked = next_fields("masked", 1)[0] == "1";
  if (!std::getline(in, line) || line != "end_header") throw ParseError("missing end_header", line_no + 1);
  ++line_no;

  const std::size_t n = g.size();
  grid.p_occ.resize(n);
  grid.unknown.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw ParseError("truncated voxel data", line_no + 1);
    ++line_no;
    const auto space = line.find(' ');
    if (space == std::string::npos) throw ParseError("malformed voxel line", line_no);
    grid.p_occ[i] = parse_number(line.substr(0, space), line_no);
    const auto flag = line.substr(space + 1);
    if (flag != "0" && flag != "1") throw ParseError("unknown flag must be 0 or 1", line_no);
    grid.unknown[i] = flag == "1" ? 1 : 0;
  }
  return grid;
}

}  // namespace facade_gp
