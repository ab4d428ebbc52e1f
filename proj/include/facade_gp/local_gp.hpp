#pragma once

#include "facade_gp/geometry.hpp"

#include <Eigen/Core>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace facade_gp {

/// ARD squared-exponential kernel parameters plus the noise level.
struct KernelParams {
  double signal_std = 1.0;                   // sigma_p, m
  Vec2 inv_length2 = Vec2::Constant(400.0);  // b_m = 1 / l_m^2, 1/m^2
  double noise_std = 0.02;                   // sigma_eta, m

  void validate() const;
};

inline double kernel_eval(const KernelParams& p, const Vec2& a, const Vec2& b) {
  const double d0 = a.x() - b.x();
  const double d1 = a.y() - b.y();
  return p.signal_std * p.signal_std *
         std::exp(-0.5 * (p.inv_length2.x() * d0 * d0 + p.inv_length2.y() * d1 * d1));
}

/// Distance at which an isotropic unit-variance kernel with inverse squared
/// length-scale b decays to c_min.
double block_size(double b, double c_min);

Eigen::MatrixXd gram_matrix(const KernelParams& p, std::span<const Vec2> inputs);

/// log N(y | prior_mean, K + sigma_eta^2 I). Throws NumericalError when the
/// covariance is not positive definite.
double log_marginal_likelihood(const KernelParams& p, double prior_mean,
                               std::span<const Vec2> inputs, std::span<const double> targets);

struct GpPrediction {
  double mean = 0.0;
  double variance = 0.0;  // includes sigma_eta^2
};

/// Trained exact GP: inputs, centred targets and the inverse of
/// K + sigma_eta^2 I. Immutable once built.
class GpSolveState {
 public:
  GpSolveState() = default;
  GpSolveState(const KernelParams& params, double prior_mean, std::vector<Vec2> inputs,
               std::vector<double> targets);

  const KernelParams& params() const { return params_; }
  double prior_mean() const { return prior_mean_; }
  std::size_t size() const { return inputs_.size(); }
  const std::vector<Vec2>& inputs() const { return inputs_; }
  const std::vector<double>& targets() const { return targets_; }

  GpPrediction predict(const Vec2& x) const { return predict(x, 0.0); }
  /// Skips training points whose kernel value is below cutoff * sigma_p^2;
  /// cutoff 0 drops only exact zeros and is exact.
  GpPrediction predict(const Vec2& x, double cutoff) const;
  /// Dense batched prediction (matrix products); agrees with predict() up to
  /// summation order.
  void predict_many(std::span<const Vec2> xs, std::span<GpPrediction> out) const;
  Eigen::VectorXd apply_inverse(const Eigen::VectorXd& rhs) const { return inverse_ * rhs; }

 private:
  KernelParams params_;
  double prior_mean_ = 0.0;
  std::vector<Vec2> inputs_;
  std::vector<double> targets_;
  Eigen::VectorXd alpha_;
  Eigen::MatrixXd inverse_;
};

inline GpPrediction gp_posterior(const GpSolveState& state, const Vec2& x) {
  return state.predict(x);
}

struct HyperoptOptions {
  std::vector<double> start_multipliers{1.0, 4.0, 0.25};
  int iterations = 40;
  double initial_step = 0.6931471805599453;  // ln 2, in log b
  double min_step = 1e-3;
  double min_b = 1e-2;
  double max_b = 1e8;
  // Optimised b replaces the initial one only if the likelihood ratio test
  // with two degrees of freedom rejects it: 0.5 * chi2_2(0.95).
  double min_gain = 2.9957322735539909;
};

struct HyperoptResult {
  KernelParams params;
  double initial_lml = 0.0;
  double final_lml = 0.0;
  bool improved = false;
  std::string warning;
};

/// Deterministic stride subsample of at most subset_size indices out of n.
std::vector<std::size_t> stride_subsample(std::size_t n, std::size_t subset_size);

/// Maximises the marginal likelihood over log b_1, log b_2 with a
/// multi-start coordinate search; signal and noise std stay fixed.
HyperoptResult optimize_hyperparams(const KernelParams& init, double prior_mean,
                                    std::span<const Vec2> inputs, std::span<const double> targets,
                                    std::size_t subset_size, const HyperoptOptions& options = {});

struct CellMembers {
  CellIndex cell;
  std::vector<std::size_t> members;
};

/// Buckets points by floor(x / cell); result sorted by cell index.
std::vector<CellMembers> partition_blocks(std::span<const LocalPoint> points, double cell);

/// One local GP over the 3x3 extended neighbourhood of a cell.
struct GpBlock {
  CellIndex cell;
  std::size_t layer = 0;
  double prior_mean = 0.0;
  KernelParams params;
  GpSolveState state;
  std::vector<std::size_t> training_indices;  // into the caller's point list
};

/// Fits the block for `cell` on the given extended members. Hyper-parameters
/// are optimised when there are at least two members. Returns nullopt when
/// the extended set is empty.
std::optional<GpBlock> fit_block(const CellIndex& cell, std::span<const std::size_t> extended,
                                 std::span<const LocalPoint> points, std::size_t layer,
                                 double prior_mean, const KernelParams& init,
                                 std::size_t subset_size, const HyperoptOptions& options = {},
                                 bool optimize = true);

/// Rebuilds the solve state on a subset of the block's training points,
/// keeping its hyper-parameters.
GpBlock refit_block(const GpBlock& block, std::span<const std::size_t> kept,
                    std::span<const LocalPoint> points);

/// Upper (1 - alpha) quantile of chi-squared with one degree of freedom.
double chi2_critical_value(double alpha);

struct Chi2Result {
  std::vector<std::size_t> kept;      // point indices
  std::vector<std::size_t> outliers;  // point indices
  std::vector<double> statistics;     // v^2 per training point, block order
  bool all_flagged = false;
};

/// Single-pass chi-squared outlier test of a trained block on its own
/// training points: v^2 = (d - mu)^2 / sigma^2 against chi2_1(1 - alpha).
Chi2Result chi2_filter(const GpBlock& block, double alpha);

}  // namespace facade_gp
