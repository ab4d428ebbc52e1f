#pragma once

#include "facade_gp/depth_layers.hpp"
#include "facade_gp/geometry.hpp"
#include "facade_gp/local_gp.hpp"

#include <optional>
#include <span>
#include <vector>

namespace facade_gp {

struct ModelConfig {
  HistogramConfig histogram;
  EmConfig em;
  double normal_angle = 25.0;      // alpha_z, degrees
  double length_scale2 = 0.0025;   // initial 1/b, m^2
  double noise_std = 0.02;         // sigma_eta, m
  double c_min = 1e-4;             // covariance cut-off sizing the blocks
  double chi2_alpha = 0.05;
  std::size_t hyperopt_subset = 500;
  std::size_t global_subset = 2000;
  int threads = 1;

  double block_cell() const;
  void validate() const;
};

enum class EstimateSource { block, global, planar };

const char* to_string(EstimateSource source);

struct SurfaceEstimate {
  double mean = 0.0;      // depth, m
  double variance = 0.0;  // m^2
  EstimateSource source = EstimateSource::planar;
};

/// Regular grid of posterior values, read back by bilinear interpolation.
struct PosteriorLattice {
  Vec2 origin = Vec2::Zero();
  Vec2 step = Vec2::Ones();
  int n1 = 0;
  int n2 = 0;
  std::vector<double> mean;
  std::vector<double> variance;

  bool empty() const { return mean.empty(); }
  bool covers(const Vec2& x) const;
  GpPrediction interpolate(const Vec2& x) const;
};

/// Facade-wide fallback GP. Kernel terms below kGlobalCutoff * sigma_p^2 are
/// dropped; when the length-scales are long enough that most training points
/// still contribute, predictions inside the prepared region come from a
/// lattice at one eighth of the length-scale.
struct GlobalGp {
  static constexpr double kGlobalCutoff = 1e-15;

  KernelParams params;
  GpSolveState state;
  PosteriorLattice lattice;

  /// Builds the lattice over `region` if exact queries would be expensive.
  void prepare(const Rect2& region);
  GpPrediction predict(const Vec2& x) const;
};

struct BuildStats {
  std::size_t points = 0;
  std::size_t training = 0;
  std::size_t outliers = 0;
  std::size_t blocks = 0;
  double gmm_seconds = 0.0;
  double selection_seconds = 0.0;
  double block_fit_seconds = 0.0;
  double chi2_seconds = 0.0;
  double global_seconds = 0.0;

  double selected_fraction() const {
    return points == 0 ? 0.0 : static_cast<double>(training) / static_cast<double>(points);
  }
};

/// Surface model of one facade: GMM depth layers as the planar prior plus
/// local GP blocks on the residual structure, with a facade-wide fallback GP.
struct FacadeModel {
  FacadeFrame frame;
  GmmModel gmm;
  FacetGrid facets;
  double block_cell = 0.0;
  double noise_std = 0.02;
  std::vector<GpBlock> blocks;  // sorted by cell
  std::optional<GlobalGp> global_gp;
  Rect2 extent;                    // bounding rectangle of all facade points
  std::vector<Vec2> training_xy;   // positions of the selected training points

  /// Rebuilds the cell -> block lookup; call after changing `blocks`.
  void index_blocks();
  const GpBlock* block_at(const Vec2& x) const;

 private:
  CellIndex table_origin_;
  int table_width_ = 0;
  int table_height_ = 0;
  std::vector<int> table_;
};

/// Indices of points the planar layers do not explain:
/// |d - mu_k| > 1.96 sigma_k for the assigned layer k, or n_z < cos(alpha_z).
std::vector<std::size_t> select_training_points(std::span<const LocalPoint> points,
                                                const GmmModel& gmm, double normal_angle_deg);

FacadeModel build_facade_model(std::span<const LocalPoint> points, const FacadeFrame& frame,
                               const ModelConfig& cfg, BuildStats* stats = nullptr);

SurfaceEstimate query_surface(const FacadeModel& model, const Vec2& x);
std::vector<SurfaceEstimate> query_batch(const FacadeModel& model, std::span<const Vec2> xs);

/// Single-plane reference: mean depth everywhere, variance = depth variance
/// + sigma_eta^2.
FacadeModel baseline_plane_only(std::span<const LocalPoint> points, const FacadeFrame& frame,
                                double noise_std, double sigma_floor = 0.005);

}  // namespace facade_gp
