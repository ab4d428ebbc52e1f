#include "facade_gp/model_io.hpp"

#include "facade_gp/error.hpp"

#include <fstream>

namespace facade_gp {

using nlohmann::json;

namespace {

json vec(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }
json vec(const Vec2& v) { return json::array({v.x(), v.y()}); }
Eigen::Vector3d vec3(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
Vec2 vec2(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json state_to_json(const GpSolveState& s) {
  json xs = json::array();
  for (const auto& x : s.inputs()) xs.push_back(vec(x));
  return {{"prior_mean", s.prior_mean()}, {"inputs", std::move(xs)}, {"targets", s.targets()}};
}

GpSolveState state_from_json(const json& j, const KernelParams& params) {
  std::vector<Vec2> xs;
  for (const auto& x : j.at("inputs")) xs.push_back(vec2(x));
  return GpSolveState(params, j.at("prior_mean").get<double>(), std::move(xs),
                      j.at("targets").get<std::vector<double>>());
}

}  // namespace

json frame_to_json(const FacadeFrame& f) {
  return {{"origin", vec(f.origin)}, {"u", vec(f.u)}, {"v", vec(f.v)}, {"n", vec(f.n)}};
}

FacadeFrame frame_from_json(const json& j) {
  FacadeFrame f;
  f.origin = vec3(j.at("origin"));
  f.u = vec3(j.at("u"));
  f.v = vec3(j.at("v"));
  f.n = vec3(j.at("n"));
  if (!f.is_orthonormal(1e-9)) throw FormatError("stored facade frame is not orthonormal");
  return f;
}

json gmm_to_json(const GmmModel& gmm) {
  json layers = json::array();
  for (const auto& l : gmm.layers) layers.push_back({{"weight", l.weight}, {"mean", l.mean}, {"std", l.std}});
  return {{"layers", std::move(layers)}, {"main_index", gmm.main_index}};
}

GmmModel gmm_from_json(const json& j) {
  GmmModel gmm;
  for (const auto& l : j.at("layers")) {
    gmm.layers.push_back({l.at("weight").get<double>(), l.at("mean").get<double>(), l.at("std").get<double>()});
  }
  gmm.main_index = j.at("main_index").get<std::size_t>();
  gmm.validate();
  return gmm;
}

json kernel_to_json(const KernelParams& p) {
  return {{"signal_std", p.signal_std}, {"inv_length2", vec(p.inv_length2)}, {"noise_std", p.noise_std}};
}

KernelParams kernel_from_json(const json& j) {
  KernelParams p;
  p.signal_std = j.at("signal_std").get<double>();
  p.inv_length2 = vec2(j.at("inv_length2"));
  p.noise_std = j.at("noise_std").get<double>();
  p.validate();
  return p;
}

json model_to_json(const FacadeModel& m) {
  json facets = json::array();
  for (const auto& [c, layer] : m.facets.cells) facets.push_back({c.i, c.j, layer});
  json blocks = json::array();
  for (const auto& b : m.blocks) {
    blocks.push_back({{"cell", {b.cell.i, b.cell.j}},
                      {"layer", b.layer},
                      {"prior_mean", b.prior_mean},
                      {"params", kernel_to_json(b.params)},
                      {"training_indices", b.training_indices},
                      {"state", state_to_json(b.state)}});
  }
  json training = json::array();
  for (const auto& x : m.training_xy) training.push_back(vec(x));
  json global = nullptr;
  if (m.global_gp) {
    global = {{"params", kernel_to_json(m.global_gp->params)}, {"state", state_to_json(m.global_gp->state)}};
  }
  return {{"frame", frame_to_json(m.frame)},
          {"gmm", gmm_to_json(m.gmm)},
          {"facets", {{"cell_size", m.facets.cell_size}, {"origin", vec(m.facets.origin)}, {"cells", std::move(facets)}}},
          {"block_cell", m.block_cell},
          {"noise_std", m.noise_std},
          {"extent", {vec(m.extent.lo), vec(m.extent.hi)}},
          {"training_xy", std::move(training)},
          {"blocks", std::move(blocks)},
          {"global_gp", std::move(global)}};
}

FacadeModel model_from_json(const json& j) {
  FacadeModel m;
  m.frame = frame_from_json(j.at("frame"));
  m.gmm = gmm_from_json(j.at("gmm"));
  const auto& facets = j.at("facets");
  m.facets.cell_size = facets.at("cell_size").get<double>();
  m.facets.origin = vec2(facets.at("origin"));
  for (const auto& c : facets.at("cells")) {
    const auto layer = c.at(2).get<std::size_t>();
    if (layer >= m.gmm.size()) throw FormatError("facet layer index out of range");
    m.facets.cells.emplace(CellIndex{c.at(0).get<int>(), c.at(1).get<int>()}, layer);
  }
  m.block_cell = j.at("block_cell").get<double>();
  m.noise_std = j.at("noise_std").get<double>();
  m.extent = {vec2(j.at("extent").at(0)), vec2(j.at("extent").at(1))};
  for (const auto& x : j.at("training_xy")) m.training_xy.push_back(vec2(x));
  for (const auto& jb : j.at("blocks")) {
    GpBlock b;
    b.cell = {jb.at("cell").at(0).get<int>(), jb.at("cell").at(1).get<int>()};
    b.layer = jb.at("layer").get<std::size_t>();
    if (b.layer >= m.gmm.size()) throw FormatError("block layer index out of range");
    b.prior_mean = jb.at("prior_mean").get<double>();
    b.params = kernel_from_json(jb.at("params"));
    b.training_indices = jb.at("training_indices").get<std::vector<std::size_t>>();
    b.state = state_from_json(jb.at("state"), b.params);
    m.blocks.push_back(std::move(b));
  }
  if (!j.at("global_gp").is_null()) {
    const auto& g = j.at("global_gp");
    const auto params = kernel_from_json(g.at("params"));
    m.global_gp = GlobalGp{params, state_from_json(g.at("state"), params), {}};
    m.global_gp->prepare(m.extent.padded(m.block_cell));
  }
  m.index_blocks();
  return m;
}

void save_models(const std::filesystem::path& path, const std::vector<FacadeModel>& models,
                 const json& config) {
  json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["config"] = config;
  doc["facades"] = json::array();
  for (const auto& m : models) doc["facades"].push_back(model_to_json(m));
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

std::vector<FacadeModel> load_models(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("model file not found: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), 0);
  }
  const int version = doc.value("format_version", -1);
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format_version " + std::to_string(version));
  }
  std::vector<FacadeModel> models;
  for (const auto& f : doc.at("facades")) models.push_back(model_from_json(f));
  return models;
}

}  // namespace facade_gp
