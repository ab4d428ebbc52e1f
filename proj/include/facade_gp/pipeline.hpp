#pragma once

#include "facade_gp/facade_model.hpp"
#include "facade_gp/occupancy.hpp"
#include "facade_gp/segmentation.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace facade_gp {

struct PathsConfig {
  std::filesystem::path output_dir = "facade_gp_out";
  std::filesystem::path input_cloud;  // empty: generate the default scene
};

struct SynthConfig {
  double noise_std = 0.02;  // m
  double density = 400.0;   // points / m^2
};

struct EvalConfig {
  std::size_t n_thresholds = 256;
  std::vector<double> uncertainty_thresholds{0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1};
  std::vector<double> distance_edges{0.0, 0.1, 0.2, 0.5, 1.0, 2.0};  // last bin is open
  std::size_t holdout_every = 5;  // every k-th facade point is held out; 0 = none
  double accurate_threshold = 0.01;  // m^2, masked curve in the summary
};

struct PipelineConfig {
  std::uint64_t rng_seed = 42;
  int verbosity = 1;
  int threads = 0;  // 0 = available parallelism
  PathsConfig paths;
  SynthConfig synth;
  RansacConfig ransac;
  AllocationConfig allocation;
  ModelConfig model;
  OccupancyConfig occupancy;
  double bbox_padding = 0.5;  // m around the cloud for the exported grid
  EvalConfig eval;

  void validate() const;
};

/// Structured form; output_dir is left out when `with_output_dir` is false
/// so identical runs in different directories serialise identically.
nlohmann::json config_to_json(const PipelineConfig& cfg, bool with_output_dir = true);
/// Starts from the defaults; unknown keys and wrong types raise ConfigError
/// naming the offending key.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

enum class Stage { synth, segment, fit, export_grid, eval };

const char* to_string(Stage stage);
std::vector<Stage> all_stages();

struct RunOptions {
  bool force = false;
  std::vector<Stage> stages = all_stages();
};

struct RunResult {
  int exit_code = 0;
  nlohmann::json manifest;
};

/// Runs the stages in order, skipping those whose outputs are newer than
/// their inputs unless forced, and writes manifest.json with a SHA-256 per
/// artifact. A failing stage stops the run with exit code 1; its name and
/// message are recorded in the manifest.
RunResult run_pipeline(const PipelineConfig& cfg, const RunOptions& options = {});

std::string sha256_file(const std::filesystem::path& path);

/// Facades stored by the segment stage.
void save_segments(const std::filesystem::path& path, const std::vector<FacadeSegment>& segments);
std::vector<FacadeSegment> load_segments(const std::filesystem::path& path);

/// Splits members into (training, held out): position k is held out when
/// every > 0 and k % every == every - 1.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_holdout(
    const std::vector<std::size_t>& members, std::size_t every);

/// Cloud bounding box, padded and grown so that voxel centres fall on
/// integer multiples of the resolution.
Box3 grid_box(const PointCloud& cloud, double padding, double resolution);

struct BenchRow {
  std::string stage;
  double median_seconds = 0.0;
  double value = 0.0;  // stage-specific quantity, see unit
  std::string unit;
};

/// Times each stage `repetitions` times and reports medians.
std::vector<BenchRow> bench(const PipelineConfig& cfg, int repetitions = 3);
void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows);

}  // namespace facade_gp
