// facade_gp: synthetic scenes, facade segmentation, GMM + local GP surface
// models, occupancy export and PR evaluation from the command line.

#include "facade_gp/diagnostics.hpp"
#include "facade_gp/error.hpp"
#include "facade_gp/model_io.hpp"
#include "facade_gp/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace facade_gp;

namespace {

/// Binds flags to fields of a default-initialised config so --help shows the
/// module defaults, and copies only the flags actually given onto the
/// effective config.
class Flags {
 public:
  template <class Get>
  void add(CLI::App* app, const std::string& name, Get get, const std::string& help) {
    auto* opt = app->add_option(name, get(values_), help)->capture_default_str();
    bound_.push_back({opt, [this, get](PipelineConfig& c) { get(c) = get(values_); }});
  }

  void add_variance_threshold(CLI::App* app) {
    auto* opt = app->add_option("--variance-threshold", variance_threshold_,
                                "Mask voxels whose variance exceeds this (m^2), or 'none'")
                    ->capture_default_str();
    bound_.push_back({opt, [this](PipelineConfig& c) {
                        if (variance_threshold_ == "none") {
                          c.occupancy.variance_threshold.reset();
                          return;
                        }
                        try {
                          std::size_t used = 0;
                          c.occupancy.variance_threshold = std::stod(variance_threshold_, &used);
                          if (used != variance_threshold_.size()) throw std::invalid_argument("trailing");
                        } catch (const std::exception&) {
                          throw ConfigError("--variance-threshold expects a number or 'none'");
                        }
                      }});
  }

  void apply(PipelineConfig& cfg) const {
    for (const auto& [opt, copy] : bound_) {
      if (opt->count() > 0) copy(cfg);
    }
  }

 private:
  PipelineConfig values_;
  std::string variance_threshold_ = "none";
  std::vector<std::pair<CLI::Option*, std::function<void(PipelineConfig&)>>> bound_;
};

void add_synth_flags(Flags& f, CLI::App* app) {
  f.add(app, "--scan-noise", [](PipelineConfig& c) -> auto& { return c.synth.noise_std; },
        "Depth noise std of generated points (m)");
  f.add(app, "--density", [](PipelineConfig& c) -> auto& { return c.synth.density; },
        "Generated points per m^2");
}

void add_segment_flags(Flags& f, CLI::App* app) {
  f.add(app, "--input", [](PipelineConfig& c) -> auto& { return c.paths.input_cloud; },
        "Input cloud (.xyz/.ply); empty uses the synthetic scene");
  f.add(app, "--ransac-threshold", [](PipelineConfig& c) -> auto& { return c.ransac.inlier_threshold; },
        "RANSAC inlier distance (m)");
  f.add(app, "--ransac-iterations", [](PipelineConfig& c) -> auto& { return c.ransac.max_iterations; },
        "RANSAC iterations per plane");
  f.add(app, "--ransac-min-inliers", [](PipelineConfig& c) -> auto& { return c.ransac.min_inliers; },
        "Smallest accepted plane");
  f.add(app, "--ransac-max-planes", [](PipelineConfig& c) -> auto& { return c.ransac.max_planes; },
        "Maximum number of planes");
  f.add(app, "--ransac-max-tilt", [](PipelineConfig& c) -> auto& { return c.ransac.verticality_max_tilt; },
        "Largest tilt of a facade normal from horizontal (deg)");
  f.add(app, "--merge-distance", [](PipelineConfig& c) -> auto& { return c.allocation.merge_distance; },
        "Parallel planes closer than this join one facade (m)");
  f.add(app, "--merge-angle", [](PipelineConfig& c) -> auto& { return c.allocation.merge_angle; },
        "Angle below which planes count as parallel (deg)");
}

void add_fit_flags(Flags& f, CLI::App* app) {
  f.add(app, "--bin-width", [](PipelineConfig& c) -> auto& { return c.model.histogram.bin_width; },
        "Depth histogram bin width (m)");
  f.add(app, "--min-prominence", [](PipelineConfig& c) -> auto& { return c.model.histogram.min_prominence_fraction; },
        "Peak prominence as a fraction of the tallest bin");
  f.add(app, "--min-peak-separation", [](PipelineConfig& c) -> auto& { return c.model.histogram.min_peak_separation_bins; },
        "Minimum distance between peaks (bins)");
  f.add(app, "--em-iterations", [](PipelineConfig& c) -> auto& { return c.model.em.max_iter; },
        "EM iteration cap");
  f.add(app, "--em-tolerance", [](PipelineConfig& c) -> auto& { return c.model.em.tol; },
        "EM log-likelihood tolerance");
  f.add(app, "--sigma-floor", [](PipelineConfig& c) -> auto& { return c.model.em.sigma_floor; },
        "Smallest layer std (m)");
  f.add(app, "--normal-angle", [](PipelineConfig& c) -> auto& { return c.model.normal_angle; },
        "Normal deviation selecting training points (deg)");
  f.add(app, "--length-scale2", [](PipelineConfig& c) -> auto& { return c.model.length_scale2; },
        "Initial squared length-scale (m^2)");
  f.add(app, "--noise-std", [](PipelineConfig& c) -> auto& { return c.model.noise_std; },
        "GP noise std (m)");
  f.add(app, "--cmin", [](PipelineConfig& c) -> auto& { return c.model.c_min; },
        "Covariance cut-off sizing the blocks");
  f.add(app, "--chi2-alpha", [](PipelineConfig& c) -> auto& { return c.model.chi2_alpha; },
        "Significance level of the outlier test");
  f.add(app, "--hyperopt-subset", [](PipelineConfig& c) -> auto& { return c.model.hyperopt_subset; },
        "Points used to optimise a block's hyper-parameters");
  f.add(app, "--global-subset", [](PipelineConfig& c) -> auto& { return c.model.global_subset; },
        "Points kept by the fallback GP");
  f.add(app, "--holdout-every", [](PipelineConfig& c) -> auto& { return c.eval.holdout_every; },
        "Hold out every k-th facade point for calibration (0 = none)");
}

void add_export_flags(Flags& f, CLI::App* app) {
  f.add(app, "--resolution", [](PipelineConfig& c) -> auto& { return c.occupancy.resolution; },
        "Voxel size (m)");
  f.add(app, "--gamma", [](PipelineConfig& c) -> auto& { return c.occupancy.gamma; },
        "Steepness of the occupancy map");
  f.add(app, "--bbox-padding", [](PipelineConfig& c) -> auto& { return c.bbox_padding; },
        "Grid margin around the cloud (m)");
  f.add_variance_threshold(app);
}

void add_eval_flags(Flags& f, CLI::App* app) {
  f.add(app, "--n-thresholds", [](PipelineConfig& c) -> auto& { return c.eval.n_thresholds; },
        "Thresholds in the PR sweep");
  f.add(app, "--accurate-threshold", [](PipelineConfig& c) -> auto& { return c.eval.accurate_threshold; },
        "Variance threshold of the masked summary curve (m^2)");
  f.add(app, "--uncertainty-thresholds", [](PipelineConfig& c) -> auto& { return c.eval.uncertainty_thresholds; },
        "Variance thresholds of the uncertainty sweep (m^2)");
  f.add(app, "--distance-edges", [](PipelineConfig& c) -> auto& { return c.eval.distance_edges; },
        "Bin edges of the distance sweep (m); the last bin is open");
}

int run_query(const PipelineConfig& cfg, const std::string& model_path, std::size_t facade, double x1, double x2,
              const std::string& points_path) {
  const auto models = load_models(model_path.empty() ? cfg.paths.output_dir / "model.json" : std::filesystem::path(model_path));
  auto one = [&](std::size_t f, double a, double b) {
    if (f >= models.size()) throw InvalidArgument("facade index " + std::to_string(f) + " out of range");
    const auto est = query_surface(models[f], Vec2(a, b));
    std::printf("%zu,%.9g,%.9g,%.9g,%.9g,%s\n", f, a, b, est.mean, est.variance, to_string(est.source));
  };
  std::printf("facade,x1,x2,mean,variance,source\n");
  if (points_path.empty()) {
    one(facade, x1, x2);
    return 0;
  }
  std::ifstream in(points_path);
  if (!in) throw NotFoundError("points file not found: " + points_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    for (auto& ch : line) {
      if (ch == ',') ch = ' ';
    }
    std::istringstream ss(line);
    std::size_t f = 0;
    double a = 0, b = 0;
    if (!(ss >> f >> a >> b)) {
      if (line_no == 1) continue;  // header
      throw ParseError("expected 'facade x1 x2'", line_no);
    }
    one(f, a, b);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic 2.5D facade maps: GMM depth layers with local Gaussian processes"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  bool force = false;
  Flags flags;
  app.add_option("--config", config_path, "JSON config file; flags override it");
  app.add_flag("--force", force, "Rerun stages even when their outputs are up to date");
  flags.add(&app, "--out", [](PipelineConfig& c) -> auto& { return c.paths.output_dir; }, "Output directory");
  flags.add(&app, "--threads", [](PipelineConfig& c) -> auto& { return c.threads; },
            "Worker threads, 0 = available parallelism (FACADE_GP_THREADS overrides)");
  flags.add(&app, "--seed", [](PipelineConfig& c) -> auto& { return c.rng_seed; }, "Random seed");
  flags.add(&app, "--verbosity", [](PipelineConfig& c) -> auto& { return c.verbosity; },
            "0 quiet, 1 info, 2-3 debug");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic three-facade scene");
  add_synth_flags(flags, synth);
  auto* segment = app.add_subcommand("segment", "Extract facades with RANSAC");
  add_segment_flags(flags, segment);
  auto* fit = app.add_subcommand("fit", "Fit depth layers and local GPs per facade");
  add_fit_flags(flags, fit);
  auto* exp = app.add_subcommand("export", "Write the occupancy grid");
  add_export_flags(flags, exp);
  auto* eval = app.add_subcommand("eval", "PR curves, AUC sweeps and calibration");
  add_eval_flags(flags, eval);
  flags.add(eval, "--resolution", [](PipelineConfig& c) -> auto& { return c.occupancy.resolution; },
            "Voxel size (m)");
  flags.add(eval, "--gamma", [](PipelineConfig& c) -> auto& { return c.occupancy.gamma; },
            "Steepness of the occupancy map");

  auto* query = app.add_subcommand("query", "Surface depth and variance at facade positions");
  std::string model_path, points_path;
  std::size_t facade = 0;
  double x1 = 0.0, x2 = 0.0;
  query->add_option("--model", model_path, "Model file (default: <out>/model.json)");
  query->add_option("--facade", facade, "Facade index")->capture_default_str();
  query->add_option("--x1", x1, "In-plane coordinate along u (m)")->capture_default_str();
  query->add_option("--x2", x2, "In-plane coordinate along v (m)")->capture_default_str();
  query->add_option("--points", points_path, "CSV of 'facade,x1,x2' rows");

  auto* bench_cmd = app.add_subcommand("bench", "Time every stage (median of repetitions)");
  int repetitions = 3;
  bench_cmd->add_option("--repetitions", repetitions, "Repetitions per stage")->capture_default_str();
  add_synth_flags(flags, bench_cmd);
  add_segment_flags(flags, bench_cmd);
  add_fit_flags(flags, bench_cmd);
  add_export_flags(flags, bench_cmd);

  auto* run = app.add_subcommand("run", "Run every stage in order");
  add_synth_flags(flags, run);
  add_segment_flags(flags, run);
  add_fit_flags(flags, run);
  add_export_flags(flags, run);
  add_eval_flags(flags, run);

  for (auto* sub : {segment, fit, exp, eval}) {
    if (sub != segment) {
      flags.add(sub, "--input", [](PipelineConfig& c) -> auto& { return c.paths.input_cloud; },
                "Input cloud (.xyz/.ply); empty uses the synthetic scene");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  PipelineConfig cfg;
  try {
    if (!config_path.empty()) cfg = load_config(config_path);
    flags.apply(cfg);
    cfg.model.em.histogram = cfg.model.histogram;
    cfg.model.threads = cfg.threads;
    cfg.ransac.rng_seed = cfg.rng_seed;
    cfg.validate();
  } catch (const ConfigError& e) {
    std::cerr << "facade_gp: " << e.what() << '\n';
    return 2;
  } catch (const NotFoundError& e) {
    std::cerr << "facade_gp: " << e.what() << '\n';
    return 2;
  }
  log::set_verbosity(cfg.verbosity);

  try {
    if (query->parsed()) return run_query(cfg, model_path, facade, x1, x2, points_path);
    if (bench_cmd->parsed()) {
      std::filesystem::create_directories(cfg.paths.output_dir);
      const auto rows = bench(cfg, repetitions);
      const auto path = cfg.paths.output_dir / "bench.csv";
      write_bench_csv(path, rows);
      std::ifstream in(path);
      std::cout << in.rdbuf();
      return 0;
    }
    RunOptions options;
    options.force = force;
    if (synth->parsed()) options.stages = {Stage::synth};
    if (segment->parsed()) options.stages = {Stage::segment};
    if (fit->parsed()) options.stages = {Stage::fit};
    if (exp->parsed()) options.stages = {Stage::export_grid};
    if (eval->parsed()) options.stages = {Stage::eval};
    const auto result = run_pipeline(cfg, options);
    for (const auto& s : result.manifest["stages"]) {
      log::info(s["name"].get<std::string>() + ": " + s["status"].get<std::string>());
    }
    return result.exit_code;
  } catch (const ConfigError& e) {
    std::cerr << "facade_gp: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "facade_gp: " << e.what() << '\n';
    return 1;
  }
}
