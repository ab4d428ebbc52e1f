#include "facade_gp/pipeline.hpp"

#include "facade_gp/cloud_io.hpp"
#include "facade_gp/diagnostics.hpp"
#include "facade_gp/error.hpp"
#include "facade_gp/evaluation.hpp"
#include "facade_gp/model_io.hpp"
#include "facade_gp/parallel.hpp"
#include "facade_gp/synth.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace facade_gp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Reads known keys of one config object and rejects everything else.
class SectionReader {
 public:
  SectionReader(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) throw ConfigError("config section '" + prefix_ + "' must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    known_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + prefix_ + key + "' has the wrong type");
    }
  }

  void get_optional(const std::string& key, std::optional<double>& out) {
    known_.insert(key);
    if (!obj_.contains(key)) return;
    const auto& v = obj_.at(key);
    if (v.is_null()) {
      out.reset();
    } else if (v.is_number()) {
      out = v.get<double>();
    } else {
      throw ConfigError("config key '" + prefix_ + key + "' must be a number or null");
    }
  }

  void get_path(const std::string& key, fs::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  const json* section(const std::string& key) {
    known_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : obj_.items()) {
      if (!known_.count(item.key())) throw ConfigError("unknown config key '" + prefix_ + item.key() + "'");
    }
  }

 private:
  const json& obj_;
  std::string prefix_;
  std::set<std::string> known_;
};

}  // namespace

void PipelineConfig::validate() const {
  if (threads < 0) throw ConfigError("threads must be non-negative");
  if (verbosity < 0 || verbosity > 3) throw ConfigError("verbosity must be in [0, 3]");
  if (!(synth.noise_std >= 0.0)) throw ConfigError("synth.noise_std must be non-negative");
  if (!(synth.density > 0.0)) throw ConfigError("synth.density must be positive");
  if (!(bbox_padding >= 0.0)) throw ConfigError("occupancy.bbox_padding must be non-negative");
  if (eval.n_thresholds == 0) throw ConfigError("evaluation.n_thresholds must be positive");
  if (!(eval.accurate_threshold > 0.0)) throw ConfigError("evaluation.accurate_threshold must be positive");
  for (std::size_t i = 0; i < eval.uncertainty_thresholds.size(); ++i) {
    if (!(eval.uncertainty_thresholds[i] > 0.0) ||
        (i > 0 && !(eval.uncertainty_thresholds[i] > eval.uncertainty_thresholds[i - 1]))) {
      throw ConfigError("evaluation.uncertainty_thresholds must be positive and ascending");
    }
  }
  if (eval.distance_edges.empty()) throw ConfigError("evaluation.distance_edges must not be empty");
  for (std::size_t i = 1; i < eval.distance_edges.size(); ++i) {
    if (!(eval.distance_edges[i] > eval.distance_edges[i - 1])) {
      throw ConfigError("evaluation.distance_edges must be ascending");
    }
  }
  try {
    ransac.validate();
    model.validate();
    occupancy.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

json config_to_json(const PipelineConfig& cfg, bool with_output_dir) {
  json paths = {{"input_cloud", cfg.paths.input_cloud.string()}};
  if (with_output_dir) paths["output_dir"] = cfg.paths.output_dir.string();
  const auto& m = cfg.model;
  return {
      {"rng_seed", cfg.rng_seed},
      {"verbosity", cfg.verbosity},
      {"threads", cfg.threads},
      {"paths", paths},
      {"synth", {{"noise_std", cfg.synth.noise_std}, {"density", cfg.synth.density}}},
      {"segmentation",
       {{"inlier_threshold", cfg.ransac.inlier_threshold},
        {"max_iterations", cfg.ransac.max_iterations},
        {"min_inliers", cfg.ransac.min_inliers},
        {"max_planes", cfg.ransac.max_planes},
        {"max_tilt", cfg.ransac.verticality_max_tilt},
        {"merge_distance", cfg.allocation.merge_distance},
        {"merge_angle", cfg.allocation.merge_angle}}},
      {"depth_layers",
       {{"bin_width", m.histogram.bin_width},
        {"min_prominence_fraction", m.histogram.min_prominence_fraction},
        {"min_peak_separation_bins", m.histogram.min_peak_separation_bins},
        {"max_iter", m.em.max_iter},
        {"tol", m.em.tol},
        {"sigma_floor", m.em.sigma_floor},
        {"init_std", m.em.init_std}}},
      {"local_gp",
       {{"normal_angle", m.normal_angle},
        {"length_scale2", m.length_scale2},
        {"noise_std", m.noise_std},
        {"c_min", m.c_min},
        {"chi2_alpha", m.chi2_alpha},
        {"hyperopt_subset", m.hyperopt_subset},
        {"global_subset", m.global_subset}}},
      {"occupancy",
       {{"resolution", cfg.occupancy.resolution},
        {"gamma", cfg.occupancy.gamma},
        {"variance_threshold",
         cfg.occupancy.variance_threshold ? json(*cfg.occupancy.variance_threshold) : json(nullptr)},
        {"bbox_padding", cfg.bbox_padding}}},
      {"evaluation",
       {{"n_thresholds", cfg.eval.n_thresholds},
        {"uncertainty_thresholds", cfg.eval.uncertainty_thresholds},
        {"distance_edges", cfg.eval.distance_edges},
        {"holdout_every", cfg.eval.holdout_every},
        {"accurate_threshold", cfg.eval.accurate_threshold}}},
  };
}

PipelineConfig config_from_json(const json& j) {
  PipelineConfig cfg;
  SectionReader top(j, "");
  top.get("rng_seed", cfg.rng_seed);
  top.get("verbosity", cfg.verbosity);
  top.get("threads", cfg.threads);
  if (const auto* s = top.section("paths")) {
    SectionReader r(*s, "paths.");
    r.get_path("output_dir", cfg.paths.output_dir);
    r.get_path("input_cloud", cfg.paths.input_cloud);
    r.finish();
  }
  if (const auto* s = top.section("synth")) {
    SectionReader r(*s, "synth.");
    r.get("noise_std", cfg.synth.noise_std);
    r.get("density", cfg.synth.density);
    r.finish();
  }
  if (const auto* s = top.section("segmentation")) {
    SectionReader r(*s, "segmentation.");
    r.get("inlier_threshold", cfg.ransac.inlier_threshold);
    r.get("max_iterations", cfg.ransac.max_iterations);
    r.get("min_inliers", cfg.ransac.min_inliers);
    r.get("max_planes", cfg.ransac.max_planes);
    r.get("max_tilt", cfg.ransac.verticality_max_tilt);
    r.get("merge_distance", cfg.allocation.merge_distance);
    r.get("merge_angle", cfg.allocation.merge_angle);
    r.finish();
  }
  auto& m = cfg.model;
  if (const auto* s = top.section("depth_layers")) {
    SectionReader r(*s, "depth_layers.");
    r.get("bin_width", m.histogram.bin_width);
    r.get("min_prominence_fraction", m.histogram.min_prominence_fraction);
    r.get("min_peak_separation_bins", m.histogram.min_peak_separation_bins);
    r.get("max_iter", m.em.max_iter);
    r.get("tol", m.em.tol);
    r.get("sigma_floor", m.em.sigma_floor);
    r.get("init_std", m.em.init_std);
    r.finish();
  }
  if (const auto* s = top.section("local_gp")) {
    SectionReader r(*s, "local_gp.");
    r.get("normal_angle", m.normal_angle);
    r.get("length_scale2", m.length_scale2);
    r.get("noise_std", m.noise_std);
    r.get("c_min", m.c_min);
    r.get("chi2_alpha", m.chi2_alpha);
    r.get("hyperopt_subset", m.hyperopt_subset);
    r.get("global_subset", m.global_subset);
    r.finish();
  }
  if (const auto* s = top.section("occupancy")) {
    SectionReader r(*s, "occupancy.");
    r.get("resolution", cfg.occupancy.resolution);
    r.get("gamma", cfg.occupancy.gamma);
    r.get_optional("variance_threshold", cfg.occupancy.variance_threshold);
    r.get("bbox_padding", cfg.bbox_padding);
    r.finish();
  }
  if (const auto* s = top.section("evaluation")) {
    SectionReader r(*s, "evaluation.");
    r.get("n_thresholds", cfg.eval.n_thresholds);
    r.get("uncertainty_thresholds", cfg.eval.uncertainty_thresholds);
    r.get("distance_edges", cfg.eval.distance_edges);
    r.get("holdout_every", cfg.eval.holdout_every);
    r.get("accurate_threshold", cfg.eval.accurate_threshold);
    r.finish();
  }
  top.finish();
  m.em.histogram = m.histogram;
  cfg.ransac.rng_seed = cfg.rng_seed;
  m.threads = cfg.threads;
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::synth: return "synth";
    case Stage::segment: return "segment";
    case Stage::fit: return "fit";
    case Stage::export_grid: return "export";
    case Stage::eval: return "eval";
  }
  return "?";
}

std::vector<Stage> all_stages() {
  return {Stage::synth, Stage::segment, Stage::fit, Stage::export_grid, Stage::eval};
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot hash missing file " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

void save_segments(const fs::path& path, const std::vector<FacadeSegment>& segments) {
  json arr = json::array();
  for (const auto& s : segments) arr.push_back({{"frame", frame_to_json(s.frame)}, {"members", s.members}});
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << json{{"format_version", 1}, {"facades", arr}}.dump() << '\n';
}

std::vector<FacadeSegment> load_segments(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("segments file not found: " + path.string());
  try {
    const json j = json::parse(in);
    if (j.at("format_version").get<int>() != 1) throw FormatError("unsupported segments format_version");
    std::vector<FacadeSegment> out;
    for (const auto& f : j.at("facades")) {
      out.push_back({frame_from_json(f.at("frame")), f.at("members").get<std::vector<std::size_t>>()});
    }
    return out;
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed segments file: ") + e.what(), 0);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed segments file: ") + e.what());
  }
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_holdout(
    const std::vector<std::size_t>& members, std::size_t every) {
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
  for (std::size_t k = 0; k < members.size(); ++k) {
    ((every > 0 && k % every == every - 1) ? out.second : out.first).push_back(members[k]);
  }
  return out;
}

Box3 grid_box(const PointCloud& cloud, double padding, double resolution) {
  if (cloud.empty()) throw InvalidArgument("cannot size a grid from an empty cloud");
  Point3 lo = cloud.points[0], hi = cloud.points[0];
  for (const auto& p : cloud.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  Box3 box;
  for (int a = 0; a < 3; ++a) {
    box.lo(a) = (std::floor((lo(a) - padding) / resolution + 0.5) - 0.5) * resolution;
    box.hi(a) = (std::ceil((hi(a) + padding) / resolution - 0.5) + 0.5) * resolution;
  }
  return box;
}

namespace {

struct StageIo {
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
};

bool up_to_date(const StageIo& io) {
  fs::file_time_type oldest_output = fs::file_time_type::max();
  for (const auto& o : io.outputs) {
    if (!fs::exists(o)) return false;
    oldest_output = std::min(oldest_output, fs::last_write_time(o));
  }
  for (const auto& i : io.inputs) {
    if (!fs::exists(i) || fs::last_write_time(i) > oldest_output) return false;
  }
  return true;
}

void require_inputs(const StageIo& io, Stage stage) {
  for (const auto& i : io.inputs) {
    if (!fs::exists(i)) {
      throw NotFoundError(std::string("stage ") + to_string(stage) + " is missing input " + i.string());
    }
  }
}

/// Writes text only when it differs from the file's content, keeping the
/// modification time of unchanged files.
void write_if_changed(const fs::path& path, const std::string& text) {
  if (fs::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    const std::string current((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (current == text) return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

class Runner {
 public:
  explicit Runner(const PipelineConfig& cfg) : cfg_(cfg), out_(cfg.paths.output_dir) {}

  bool synthetic() const { return cfg_.paths.input_cloud.empty(); }
  fs::path out(const char* name) const { return out_ / name; }
  fs::path cloud_path() const { return synthetic() ? out("cloud.xyz") : cfg_.paths.input_cloud; }

  StageIo io(Stage stage) const {
    const fs::path config = out("config.json");
    switch (stage) {
      case Stage::synth:
        return {{config}, {out("cloud.xyz"), out("truth_samples.csv"), out("scene.json")}};
      case Stage::segment:
        return {{config, cloud_path()}, {out("segments.json")}};
      case Stage::fit:
        return {{config, cloud_path(), out("segments.json")}, {out("model.json"), out("baseline.json")}};
      case Stage::export_grid:
        return {{config, cloud_path(), out("model.json")}, {out("grid.txt")}};
      case Stage::eval: {
        StageIo r{{config, cloud_path(), out("segments.json"), out("model.json"), out("baseline.json")},
                  {out("pr_curve.csv"), out("auc_summary.csv"), out("auc_vs_uncertainty.csv"),
                   out("auc_vs_distance.csv"), out("calibration.csv"), out("pr_curves.svg")}};
        if (synthetic()) r.inputs.push_back(out("scene.json"));
        return r;
      }
    }
    return {};
  }

  void run(Stage stage) {
    switch (stage) {
      case Stage::synth: return synth();
      case Stage::segment: return segment();
      case Stage::fit: return fit();
      case Stage::export_grid: return export_grid();
      case Stage::eval: return eval();
    }
  }

 private:
  ModelConfig model_config() const {
    ModelConfig m = cfg_.model;
    m.em.histogram = m.histogram;
    m.threads = cfg_.threads;
    return m;
  }

  std::vector<FacadeSpec> scene() const {
    auto specs = default_scene(cfg_.rng_seed);
    for (auto& s : specs) {
      s.noise_std = cfg_.synth.noise_std;
      s.density = cfg_.synth.density;
    }
    return specs;
  }

  void synth() {
    const auto specs = scene();
    PointCloud cloud;
    for (const auto& s : specs) cloud.append(generate(s).cloud);
    write_xyz(out("cloud.xyz"), cloud);
    write_truth_samples(out("truth_samples.csv"), specs);
    std::ofstream(out("scene.json")) << scene_to_json(specs).dump(1) << '\n';
    log::info("synth: " + std::to_string(cloud.size()) + " points on " + std::to_string(specs.size()) + " facades");
  }

  void segment() {
    const auto cloud = read_cloud(cloud_path());
    RansacConfig ransac = cfg_.ransac;
    ransac.rng_seed = cfg_.rng_seed;
    const auto segments = segment_facades(cloud, ransac, cfg_.allocation);
    if (segments.empty()) throw DegenerateError("no facade found in " + cloud_path().string());
    save_segments(out("segments.json"), segments);
    log::info("segment: " + std::to_string(segments.size()) + " facades");
  }

  void fit() {
    const auto cloud = read_cloud(cloud_path());
    const auto segments = load_segments(out("segments.json"));
    const ModelConfig mc = model_config();
    std::vector<FacadeModel> models, baselines;
    for (std::size_t f = 0; f < segments.size(); ++f) {
      const auto [train, held] = split_holdout(segments[f].members, cfg_.eval.holdout_every);
      const auto local = to_local(segments[f].frame, cloud.subset(train));
      BuildStats stats;
      models.push_back(build_facade_model(local, segments[f].frame, mc, &stats));
      baselines.push_back(baseline_plane_only(local, segments[f].frame, mc.noise_std, mc.em.sigma_floor));
      log::info("fit: facade " + std::to_string(f) + ": " + std::to_string(models.back().gmm.size()) +
                " layers, " + std::to_string(stats.training) + " training points, " +
                std::to_string(stats.blocks) + " blocks");
    }
    const json config = config_to_json(cfg_, false);
    save_models(out("model.json"), models, config);
    save_models(out("baseline.json"), baselines, config);
  }

  GridGeometry geometry(const PointCloud& cloud) const {
    return make_geometry(grid_box(cloud, cfg_.bbox_padding, cfg_.occupancy.resolution), cfg_.occupancy.resolution);
  }

  void export_grid() {
    const auto cloud = read_cloud(cloud_path());
    const auto models = load_models(out("model.json"));
    const auto geo = geometry(cloud);
    const auto grid = apply_variance_threshold(
        evaluate_voxels(models, geo, cfg_.occupancy.gamma, resolve_threads(cfg_.threads)),
        cfg_.occupancy.variance_threshold);
    write_grid(grid, out("grid.txt"));
    log::info("export: " + std::to_string(geo.size()) + " voxels");
  }

  void eval() {
    const auto cloud = read_cloud(cloud_path());
    const auto segments = load_segments(out("segments.json"));
    const auto models = load_models(out("model.json"));
    const auto baselines = load_models(out("baseline.json"));
    const auto geo = geometry(cloud);
    const int threads = resolve_threads(cfg_.threads);

    std::vector<FacadeExtent> extents;
    for (const auto& m : models) extents.push_back({m.frame, m.extent.padded(m.block_cell)});
    GroundTruthGrid gt;
    if (synthetic()) {
      std::ifstream in(out("scene.json"));
      std::vector<AnalyticSurface> surfaces;
      for (const auto& s : scene_from_json(json::parse(in))) surfaces.push_back(surface_of(s));
      gt = gt_from_surfaces(surfaces, geo, extents);
    } else {
      gt = gt_from_points(cloud, geo, extents);
    }

    const auto ev = evaluate_voxels(models, geo, cfg_.occupancy.gamma, threads);
    const auto ev_base = evaluate_voxels(baselines, geo, cfg_.occupancy.gamma, threads);
    char label[64];
    std::snprintf(label, sizeof label, "full_masked_%g", cfg_.eval.accurate_threshold);
    const std::vector<LabeledCurve> curves{
        {"full", pr_curve(apply_variance_threshold(ev, std::nullopt), gt, cfg_.eval.n_thresholds)},
        {label, pr_curve(apply_variance_threshold(ev, cfg_.eval.accurate_threshold), gt, cfg_.eval.n_thresholds)},
        {"plane_only", pr_curve(apply_variance_threshold(ev_base, std::nullopt), gt, cfg_.eval.n_thresholds)},
    };
    write_pr_csv(out("pr_curve.csv"), curves);
    write_pr_svg(out("pr_curves.svg"), curves);
    {
      std::ofstream s(out("auc_summary.csv"));
      s << "curve,auc\n";
      char buf[64];
      for (const auto& c : curves) {
        std::snprintf(buf, sizeof buf, "%.9f", c.curve.auc);
        s << c.label << ',' << buf << '\n';
      }
    }
    {
      std::vector<double> thresholds = cfg_.eval.uncertainty_thresholds;
      std::reverse(thresholds.begin(), thresholds.end());
      thresholds.insert(thresholds.begin(), std::numeric_limits<double>::infinity());
      std::ofstream s(out("auc_vs_uncertainty.csv"));
      s << "variance_threshold,auc,scored_voxels\n";
      char buf[96];
      for (const auto& pt : auc_vs_uncertainty(ev, gt, thresholds)) {
        std::snprintf(buf, sizeof buf, "%g,", pt.key);
        s << (std::isfinite(pt.key) ? std::string(buf) : std::string("none,"));
        if (pt.auc) {
          std::snprintf(buf, sizeof buf, "%.9f", *pt.auc);
          s << buf;
        }
        s << ',' << pt.scored << '\n';
      }
    }
    {
      std::vector<double> edges = cfg_.eval.distance_edges;
      edges.push_back(std::numeric_limits<double>::infinity());
      std::ofstream s(out("auc_vs_distance.csv"));
      s << "distance_lo,distance_hi,auc,scored_voxels\n";
      char buf[96];
      for (const auto& pt : auc_vs_distance(ev, gt, models, edges)) {
        std::snprintf(buf, sizeof buf, "%g,%g,", pt.key, pt.upper);
        s << buf;
        if (pt.auc) {
          std::snprintf(buf, sizeof buf, "%.9f", *pt.auc);
          s << buf;
        }
        s << ',' << pt.scored << '\n';
      }
    }
    {
      std::ofstream s(out("calibration.csv"));
      s << "facade,held_out,coverage\n";
      std::size_t total = 0;
      double inside = 0.0;
      char buf[96];
      for (std::size_t f = 0; f < segments.size() && f < models.size(); ++f) {
        const auto held = split_holdout(segments[f].members, cfg_.eval.holdout_every).second;
        if (held.empty()) continue;
        const auto local = to_local(segments[f].frame, cloud.subset(held));
        const double cov = calibration(models[f], local);
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f\n", f, held.size(), cov);
        s << buf;
        total += held.size();
        inside += cov * static_cast<double>(held.size());
      }
      if (total > 0) {
        std::snprintf(buf, sizeof buf, "all,%zu,%.6f\n", total, inside / static_cast<double>(total));
        s << buf;
      }
    }
    log::info("eval: AUC full " + std::to_string(curves[0].curve.auc) + ", plane only " +
              std::to_string(curves[2].curve.auc));
  }

  const PipelineConfig& cfg_;
  fs::path out_;
};

}  // namespace

RunResult run_pipeline(const PipelineConfig& cfg, const RunOptions& options) {
  cfg.validate();
  log::set_verbosity(cfg.verbosity);
  const fs::path out = cfg.paths.output_dir;
  fs::create_directories(out);
  write_if_changed(out / "config.json", config_to_json(cfg, false).dump(1) + "\n");

  Runner runner(cfg);
  RunResult result;
  json stages = json::array();
  std::string failed_stage, error;
  for (const Stage stage : options.stages) {
    const char* name = to_string(stage);
    if (stage == Stage::synth && !runner.synthetic()) {
      stages.push_back({{"name", name}, {"status", "not_needed"}});
      continue;
    }
    const auto io = runner.io(stage);
    if (!options.force && up_to_date(io)) {
      log::info(std::string(name) + ": up to date, skipped");
      stages.push_back({{"name", name}, {"status", "skipped"}});
      continue;
    }
    try {
      require_inputs(io, stage);
      runner.run(stage);
      stages.push_back({{"name", name}, {"status", "ran"}});
    } catch (const std::exception& e) {
      stages.push_back({{"name", name}, {"status", "failed"}, {"error", e.what()}});
      failed_stage = name;
      error = e.what();
      log::warn(std::string(name) + " failed: " + e.what());
      break;
    }
  }

  // Every artifact present on disk, in a fixed order.
  json artifacts = json::array();
  std::vector<fs::path> files{out / "config.json"};
  for (const Stage stage : all_stages()) {
    for (const auto& o : runner.io(stage).outputs) files.push_back(o);
  }
  for (const auto& f : files) {
    if (!fs::exists(f)) continue;
    artifacts.push_back({{"path", fs::relative(f, out).generic_string()},
                         {"bytes", fs::file_size(f)},
                         {"sha256", sha256_file(f)}});
  }
  if (!runner.synthetic() && fs::exists(cfg.paths.input_cloud)) {
    artifacts.push_back({{"path", fs::absolute(cfg.paths.input_cloud).generic_string()},
                         {"bytes", fs::file_size(cfg.paths.input_cloud)},
                         {"sha256", sha256_file(cfg.paths.input_cloud)}});
  }
  result.manifest = {{"format_version", 1},
                     {"status", failed_stage.empty() ? "ok" : "failed"},
                     {"stages", stages},
                     {"artifacts", artifacts}};
  if (!failed_stage.empty()) {
    result.manifest["failed_stage"] = failed_stage;
    result.manifest["error"] = error;
    result.exit_code = 1;
  }
  std::ofstream(out / "manifest.json") << result.manifest.dump(1) << '\n';
  return result;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<BenchRow> bench(const PipelineConfig& cfg, int repetitions) {
  cfg.validate();
  if (repetitions < 1) throw ConfigError("repetitions must be positive");
  PointCloud cloud;
  if (cfg.paths.input_cloud.empty()) {
    for (auto s : default_scene(cfg.rng_seed)) {
      s.noise_std = cfg.synth.noise_std;
      s.density = cfg.synth.density;
      cloud.append(generate(s).cloud);
    }
  } else {
    cloud = read_cloud(cfg.paths.input_cloud);
  }
  RansacConfig ransac = cfg.ransac;
  ransac.rng_seed = cfg.rng_seed;
  ModelConfig mc = cfg.model;
  mc.em.histogram = mc.histogram;
  mc.threads = cfg.threads;
  const int threads = resolve_threads(cfg.threads);

  std::vector<double> t_seg, t_gmm, t_sel, t_block, t_chi2, t_global, t_query, t_export, t_dense;
  std::size_t training = 0, queries = 0, voxels = 0, dense_n = 0;
  for (int rep = 0; rep < repetitions; ++rep) {
    auto t0 = Clock::now();
    const auto segments = segment_facades(cloud, ransac, cfg.allocation);
    t_seg.push_back(seconds_since(t0));

    std::vector<FacadeModel> models;
    double gmm = 0, sel = 0, block = 0, chi2 = 0, global = 0;
    training = 0;
    for (const auto& seg : segments) {
      BuildStats st;
      models.push_back(build_facade_model(to_local(seg.frame, cloud.subset(seg.members)), seg.frame, mc, &st));
      gmm += st.gmm_seconds;
      sel += st.selection_seconds;
      block += st.block_fit_seconds;
      chi2 += st.chi2_seconds;
      global += st.global_seconds;
      training += st.training;
    }
    t_gmm.push_back(gmm);
    t_sel.push_back(sel);
    t_block.push_back(block);
    t_chi2.push_back(chi2);
    t_global.push_back(global);

    // single-worker query throughput on random in-extent positions
    std::mt19937_64 rng(cfg.rng_seed);
    std::vector<std::pair<std::size_t, Vec2>> qs;
    queries = 100000;
    for (std::size_t q = 0; q < queries && !models.empty(); ++q) {
      const auto f = static_cast<std::size_t>(rng() % models.size());
      const auto& e = models[f].extent;
      std::uniform_real_distribution<double> ux(e.lo.x(), e.hi.x()), uy(e.lo.y(), e.hi.y());
      const double a = ux(rng);
      qs.emplace_back(f, Vec2(a, uy(rng)));
    }
    double sink = 0.0;
    t0 = Clock::now();
    for (const auto& [f, x] : qs) sink += query_surface(models[f], x).mean;
    t_query.push_back(seconds_since(t0));
    if (!std::isfinite(sink)) log::warn("non-finite query result during bench");

    t0 = Clock::now();
    OccupancyConfig oc = cfg.occupancy;
    const auto grid = to_occupancy(models, grid_box(cloud, cfg.bbox_padding, oc.resolution), oc, threads);
    voxels = grid.p_occ.size();
    t_export.push_back(seconds_since(t0));

    // dense exact GP on up to 2000 training positions, for scale
    std::vector<Vec2> xs;
    for (const auto& m : models) xs.insert(xs.end(), m.training_xy.begin(), m.training_xy.end());
    const auto pick = stride_subsample(xs.size(), 2000);
    std::vector<Vec2> dx;
    for (auto i : pick) dx.push_back(xs[i]);
    dense_n = dx.size();
    t0 = Clock::now();
    if (dense_n > 0) GpSolveState(KernelParams{}, 0.0, dx, std::vector<double>(dx.size(), 0.0));
    t_dense.push_back(seconds_since(t0));
  }

  const double q_med = median(t_query);
  const double dense_med = median(t_dense);
  const double dense_scaled =
      dense_n > 0 ? dense_med * std::pow(static_cast<double>(training) / static_cast<double>(dense_n), 3.0) : 0.0;
  return {
      {"segmentation", median(t_seg), static_cast<double>(cloud.size()), "points"},
      {"gmm_fit", median(t_gmm), 0.0, ""},
      {"training_selection", median(t_sel), static_cast<double>(training), "training_points"},
      {"block_fit", median(t_block), static_cast<double>(training), "training_points"},
      {"chi2_filter", median(t_chi2), 0.0, ""},
      {"global_gp", median(t_global), 0.0, ""},
      {"query", q_med, q_med > 0 ? static_cast<double>(queries) / q_med : 0.0, "queries_per_s"},
      {"export", median(t_export), static_cast<double>(voxels), "voxels"},
      {"dense_gp_reference", dense_med, static_cast<double>(dense_n), "points"},
      {"dense_gp_extrapolated", dense_scaled, static_cast<double>(training), "points"},
  };
}

void write_bench_csv(const fs::path& path, const std::vector<BenchRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "stage,median_seconds,value,unit\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6g,", r.median_seconds, r.value);
    out << r.stage << buf << r.unit << '\n';
  }
}

}  // namespace facade_gp
