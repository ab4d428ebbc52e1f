#include "facade_gp/cloud_io.hpp"

#include "facade_gp/error.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace facade_gp {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

double parse_double(std::string_view token, std::size_t line_no) {
  double value = 0.0;
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  if (!token.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ParseError("cannot parse number '" + std::string(token) + "'", line_no);
  }
  if (!std::isfinite(value)) {
    throw ParseError("non-finite value '" + std::string(token) + "'", line_no);
  }
  return value;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw NotFoundError("file not found: " + path.string());
  }
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open: " + path.string());
  return in;
}

void push_normal(PointCloud& cloud, const Eigen::Vector3d& raw, std::size_t line_no) {
  const double len = raw.norm();
  if (!(len > 0.0)) throw ParseError("zero-length normal", line_no);
  // Renormalise only normals that are visibly off unit length.
  cloud.normals.push_back(std::abs(len - 1.0) > 1e-12 ? Eigen::Vector3d(raw / len) : raw);
}

PointCloud read_xyz(std::istream& in) {
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty() || tokens.front().front() == '#') continue;
    if (columns == 0) {
      if (tokens.size() != 3 && tokens.size() != 6) {
        throw ParseError("expected 3 or 6 columns, found " + std::to_string(tokens.size()),
                         line_no);
      }
      columns = tokens.size();
    } else if (tokens.size() != columns) {
      throw ParseError("expected " + std::to_string(columns) + " columns, found " +
                           std::to_string(tokens.size()),
                       line_no);
    }
    cloud.points.emplace_back(parse_double(tokens[0], line_no), parse_double(tokens[1], line_no),
                              parse_double(tokens[2], line_no));
    if (columns == 6) {
      push_normal(cloud,
                  {parse_double(tokens[3], line_no), parse_double(tokens[4], line_no),
                   parse_double(tokens[5], line_no)},
                  line_no);
    }
  }
  return cloud;
}

PointCloud read_ply(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || split_ws(line) != std::vector<std::string_view>{"ply"}) {
    throw ParseError("missing 'ply' magic", 1);
  }
  ++line_no;

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> properties;
    bool is_list = false;
  };
  std::vector<Element> elements;
  bool header_done = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    const auto& key = tokens[0];
    if (key == "comment" || key == "obj_info") continue;
    if (key == "format") {
      if (tokens.size() < 2 || tokens[1] != "ascii") {
        throw ParseError("only ASCII PLY is supported", line_no);
      }
    } else if (key == "element") {
      if (tokens.size() != 3) throw ParseError("malformed element line", line_no);
      Element e;
      e.name = std::string(tokens[1]);
      e.count = static_cast<std::size_t>(parse_double(tokens[2], line_no));
      elements.push_back(std::move(e));
    } else if (key == "property") {
      if (elements.empty() || tokens.size() < 3) {
        throw ParseError("property outside element", line_no);
      }
      if (tokens[1] == "list") elements.back().is_list = true;
      elements.back().properties.emplace_back(tokens.back());
    } else if (key == "end_header") {
      header_done = true;
      break;
    } else {
      throw ParseError("unknown header keyword '" + std::string(key) + "'", line_no);
    }
  }
  if (!header_done) throw ParseError("missing end_header", line_no);

  PointCloud cloud;
  for (const auto& element : elements) {
    const bool is_vertex = element.name == "vertex";
    auto column = [&](const char* name) -> int {
      const auto it = std::find(element.properties.begin(), element.properties.end(), name);
      return it == element.properties.end() ? -1
                                            : static_cast<int>(it - element.properties.begin());
    };
    const int ix = column("x"), iy = column("y"), iz = column("z");
    const int inx = column("nx"), iny = column("ny"), inz = column("nz");
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) {
      throw ParseError("vertex element lacks x/y/z properties", line_no);
    }
    const bool with_normals = is_vertex && inx >= 0 && iny >= 0 && inz >= 0;
    std::size_t read = 0;
    while (read < element.count) {
      if (!std::getline(in, line)) {
        throw ParseError("unexpected end of file in element '" + element.name + "'", line_no + 1);
      }
      ++line_no;
      const auto tokens = split_ws(line);
      if (tokens.empty()) continue;
      ++read;
      if (!is_vertex) continue;
      if (tokens.size() < element.properties.size()) {
        throw ParseError("expected " + std::to_string(element.properties.size()) +
                             " values, found " + std::to_string(tokens.size()),
                         line_no);
      }
      cloud.points.emplace_back(parse_double(tokens[ix], line_no), parse_double(tokens[iy], line_no),
                                parse_double(tokens[iz], line_no));
      if (with_normals) {
        push_normal(cloud,
                    {parse_double(tokens[inx], line_no), parse_double(tokens[iny], line_no),
                     parse_double(tokens[inz], line_no)},
                    line_no);
      }
    }
  }
  return cloud;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

CloudFormat format_from_extension(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".ply" ? CloudFormat::ply_ascii : CloudFormat::xyz_ascii;
}

PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format) {
  auto in = open_or_throw(path);
  return format == CloudFormat::ply_ascii ? read_ply(in) : read_xyz(in);
}

PointCloud read_cloud(const std::filesystem::path& path) {
  return read_cloud(path, format_from_extension(path));
}

void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    out << format_number(p.x()) << ' ' << format_number(p.y()) << ' ' << format_number(p.z());
    if (cloud.has_normals()) {
      const auto& n = cloud.normals[i];
      out << ' ' << format_number(n.x()) << ' ' << format_number(n.y()) << ' '
          << format_number(n.z());
    }
    out << '\n';
  }
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << '\n'
      << "property double x\nproperty double y\nproperty double z\n";
  if (cloud.has_normals()) out << "property double nx\nproperty double ny\nproperty double nz\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    out << format_number(p.x()) << ' ' << format_number(p.y()) << ' ' << format_number(p.z());
    if (cloud.has_normals()) {
      const auto& n = cloud.normals[i];
      out << ' ' << format_number(n.x()) << ' ' << format_number(n.y()) << ' '
          << format_number(n.z());
    }
    out << '\n';
  }
}

}  // namespace facade_gp
