#include "facade_gp/local_gp.hpp"

#include "facade_gp/error.hpp"

#include <Eigen/Cholesky>
#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

namespace facade_gp {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Eigen::MatrixXd noisy_gram(const KernelParams& p, std::span<const Vec2> inputs) {
  Eigen::MatrixXd a = gram_matrix(p, inputs);
  a.diagonal().array() += p.noise_std * p.noise_std;
  return a;
}

}  // namespace

void KernelParams::validate() const {
  if (!(signal_std > 0.0) || !(inv_length2.x() > 0.0) || !(inv_length2.y() > 0.0) ||
      !(noise_std > 0.0)) {
    throw InvalidArgument("kernel parameters must be strictly positive");
  }
}

double block_size(double b, double c_min) {
  if (!(b > 0.0)) throw InvalidArgument("block_size: b must be positive");
  if (!(c_min > 0.0 && c_min < 1.0)) throw InvalidArgument("block_size: c_min must lie in (0, 1)");
  return std::sqrt(2.0 * std::log(1.0 / c_min) / b);
}

Eigen::MatrixXd gram_matrix(const KernelParams& p, std::span<const Vec2> inputs) {
  const auto n = static_cast<Eigen::Index>(inputs.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    k(j, j) = p.signal_std * p.signal_std;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = kernel_eval(p, inputs[i], inputs[j]);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

double log_marginal_likelihood(const KernelParams& p, double prior_mean,
                               std::span<const Vec2> inputs, std::span<const double> targets) {
  if (inputs.size() != targets.size() || inputs.empty()) {
    throw InvalidArgument("log_marginal_likelihood: need matching, non-empty inputs and targets");
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(noisy_gram(p, inputs));
  if (llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
  Eigen::VectorXd r(static_cast<Eigen::Index>(targets.size()));
  for (std::size_t i = 0; i < targets.size(); ++i) r(static_cast<Eigen::Index>(i)) = targets[i] - prior_mean;
  const Eigen::VectorXd alpha = llt.solve(r);
  const double log_det_half = llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * r.dot(alpha) - log_det_half - 0.5 * static_cast<double>(targets.size()) * kLog2Pi;
}

GpSolveState::GpSolveState(const KernelParams& params, double prior_mean,
                           std::vector<Vec2> inputs, std::vector<double> targets)
    : params_(params),
      prior_mean_(prior_mean),
      inputs_(std::move(inputs)),
      targets_(std::move(targets)) {
  params_.validate();
  if (inputs_.size() != targets_.size()) throw InvalidArgument("GP inputs/targets size mismatch");
  const auto n = static_cast<Eigen::Index>(inputs_.size());
  if (n == 0) {
    alpha_.resize(0);
    inverse_.resize(0, 0);
    return;
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(noisy_gram(params_, inputs_));
  if (llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) r(i) = targets_[static_cast<std::size_t>(i)] - prior_mean_;
  alpha_ = llt.solve(r);
  inverse_ = llt.solve(Eigen::MatrixXd::Identity(n, n));
  // Symmetrise away round-off so quadratic forms are order independent.
  inverse_ = (0.5 * (inverse_ + inverse_.transpose())).eval();
}

GpPrediction GpSolveState::predict(const Vec2& x, double cutoff) const {
  const double prior_var = params_.signal_std * params_.signal_std;
  const double noise_var = params_.noise_std * params_.noise_std;
  const auto n = static_cast<Eigen::Index>(inputs_.size());
  if (n == 0) return {prior_mean_, prior_var + noise_var};

  // Kernel values underflow to exactly zero far away; those terms are
  // skipped without changing the result.
  const double q_max = cutoff > 0.0 ? -2.0 * std::log(cutoff) : std::numeric_limits<double>::infinity();
  const Vec2& b = params_.inv_length2;
  thread_local std::vector<Eigen::Index> nz;
  thread_local std::vector<double> kv;
  nz.clear();
  kv.clear();
  double mean = prior_mean_;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec2& xi = inputs_[static_cast<std::size_t>(i)];
    const double d0 = x.x() - xi.x();
    const double d1 = x.y() - xi.y();
    const double q = b.x() * d0 * d0 + b.y() * d1 * d1;
    if (q > q_max) continue;
    const double k = prior_var * std::exp(-0.5 * q);
    if (k != 0.0) {
      nz.push_back(i);
      kv.push_back(k);
      mean += k * alpha_(i);
    }
  }
  double qf = 0.0;
  const std::size_t m = nz.size();
  for (std::size_t a = 0; a < m; ++a) {
    const double* col = inverse_.data() + nz[a] * n;
    double row = 0.0;
    for (std::size_t c = 0; c < m; ++c) row += col[nz[c]] * kv[c];
    qf += kv[a] * row;
  }
  qf = std::clamp(qf, 0.0, prior_var);
  return {mean, prior_var - qf + noise_var};
}

void GpSolveState::predict_many(std::span<const Vec2> xs, std::span<GpPrediction> out) const {
  if (out.size() != xs.size()) throw InvalidArgument("predict_many: output size mismatch");
  const double prior_var = params_.signal_std * params_.signal_std;
  const double noise_var = params_.noise_std * params_.noise_std;
  const auto n = static_cast<Eigen::Index>(inputs_.size());
  constexpr std::size_t chunk = 256;
  for (std::size_t start = 0; start < xs.size(); start += chunk) {
    const std::size_t c = std::min(chunk, xs.size() - start);
    Eigen::MatrixXd kq(static_cast<Eigen::Index>(c), n);
    for (std::size_t r = 0; r < c; ++r) {
      for (Eigen::Index i = 0; i < n; ++i) {
        kq(static_cast<Eigen::Index>(r), i) = kernel_eval(params_, xs[start + r], inputs_[static_cast<std::size_t>(i)]);
      }
    }
    const Eigen::VectorXd means = kq * alpha_;
    const Eigen::MatrixXd w = kq * inverse_;
    for (std::size_t r = 0; r < c; ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      const double qf = n == 0 ? 0.0 : std::clamp(w.row(ri).dot(kq.row(ri)), 0.0, prior_var);
      out[start + r] = {prior_mean_ + (n == 0 ? 0.0 : means(ri)), prior_var - qf + noise_var};
    }
  }
}

std::vector<std::size_t> stride_subsample(std::size_t n, std::size_t subset_size) {
  std::vector<std::size_t> idx;
  if (subset_size == 0 || n <= subset_size) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  idx.reserve(subset_size);
  for (std::size_t i = 0; i < subset_size; ++i) idx.push_back(i * n / subset_size);
  return idx;
}

HyperoptResult optimize_hyperparams(const KernelParams& init, double prior_mean,
                                    std::span<const Vec2> inputs, std::span<const double> targets,
                                    std::size_t subset_size, const HyperoptOptions& options) {
  init.validate();
  if (inputs.size() != targets.size()) throw InvalidArgument("optimize_hyperparams: size mismatch");
  if (inputs.size() < 2) throw InvalidArgument("optimize_hyperparams needs at least 2 points");

  std::vector<Vec2> xs;
  std::vector<double> ys;
  for (auto i : stride_subsample(inputs.size(), subset_size)) {
    xs.push_back(inputs[i]);
    ys.push_back(targets[i]);
  }

  HyperoptResult result;
  result.params = init;
  auto objective = [&](const Vec2& log_b) {
    KernelParams p = init;
    p.inv_length2 = log_b.array().exp();
    try {
      const double v = log_marginal_likelihood(p, prior_mean, xs, ys);
      return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
    } catch (const NumericalError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  const Vec2 init_log = init.inv_length2.array().log();
  result.initial_lml = objective(init_log);
  result.final_lml = result.initial_lml;
  if (!std::isfinite(result.initial_lml)) {
    result.warning = "initial marginal likelihood is not finite; keeping initial parameters";
    return result;
  }
  if (std::all_of(ys.begin(), ys.end(), [&](double y) { return y == prior_mean; })) {
    // Targets carry no length-scale information.
    return result;
  }

  const double lo = std::log(options.min_b);
  const double hi = std::log(options.max_b);
  Vec2 best_log = init_log;
  double best = result.initial_lml;
  for (double mult : options.start_multipliers) {
    Vec2 x = (init_log.array() + std::log(mult)).cwiseMax(lo).cwiseMin(hi);
    double fx = objective(x);
    double step = options.initial_step;
    for (int it = 0; it < options.iterations && step >= options.min_step; ++it) {
      bool moved = false;
      for (int dim = 0; dim < 2; ++dim) {
        for (double dir : {1.0, -1.0}) {
          Vec2 trial = x;
          trial(dim) = std::clamp(trial(dim) + dir * step, lo, hi);
          if (trial(dim) == x(dim)) continue;
          const double ft = objective(trial);
          if (ft > fx) {
            x = trial;
            fx = ft;
            moved = true;
            break;
          }
        }
      }
      if (!moved) step *= 0.5;
    }
    if (fx > best) {
      best = fx;
      best_log = x;
    }
  }
  if (best > result.initial_lml + options.min_gain) {
    result.params.inv_length2 = best_log.array().exp();
    result.final_lml = best;
    result.improved = true;
  }
  return result;
}

std::vector<CellMembers> partition_blocks(std::span<const LocalPoint> points, double cell) {
  if (!(cell > 0.0)) throw InvalidArgument("partition_blocks: cell size must be positive");
  std::map<CellIndex, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < points.size(); ++i) buckets[cell_of(points[i].x, cell)].push_back(i);
  std::vector<CellMembers> out;
  out.reserve(buckets.size());
  for (auto& [c, members] : buckets) out.push_back({c, std::move(members)});
  return out;
}

std::optional<GpBlock> fit_block(const CellIndex& cell, std::span<const std::size_t> extended,
                                 std::span<const LocalPoint> points, std::size_t layer,
                                 double prior_mean, const KernelParams& init,
                                 std::size_t subset_size, const HyperoptOptions& options,
                                 bool optimize) {
  if (extended.empty()) return std::nullopt;
  std::vector<Vec2> xs;
  std::vector<double> ys;
  xs.reserve(extended.size());
  ys.reserve(extended.size());
  for (auto i : extended) {
    xs.push_back(points[i].x);
    ys.push_back(points[i].d);
  }
  KernelParams params = init;
  if (optimize && xs.size() >= 2) {
    params = optimize_hyperparams(init, prior_mean, xs, ys, subset_size, options).params;
  }
  GpBlock block;
  block.cell = cell;
  block.layer = layer;
  block.prior_mean = prior_mean;
  block.params = params;
  block.training_indices.assign(extended.begin(), extended.end());
  block.state = GpSolveState(params, prior_mean, std::move(xs), std::move(ys));
  return block;
}

GpBlock refit_block(const GpBlock& block, std::span<const std::size_t> kept,
                    std::span<const LocalPoint> points) {
  GpBlock out;
  out.cell = block.cell;
  out.layer = block.layer;
  out.prior_mean = block.prior_mean;
  out.params = block.params;
  out.training_indices.assign(kept.begin(), kept.end());
  std::vector<Vec2> xs;
  std::vector<double> ys;
  for (auto i : kept) {
    xs.push_back(points[i].x);
    ys.push_back(points[i].d);
  }
  out.state = GpSolveState(block.params, block.prior_mean, std::move(xs), std::move(ys));
  return out;
}

double chi2_critical_value(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("chi-squared alpha must lie in (0, 1)");
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(1.0), 1.0 - alpha);
}

Chi2Result chi2_filter(const GpBlock& block, double alpha) {
  const double critical = chi2_critical_value(alpha);
  const auto& xs = block.state.inputs();
  const auto& ys = block.state.targets();
  Chi2Result out;
  out.statistics.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto pred = block.state.predict(xs[i]);
    const double r = ys[i] - pred.mean;
    const double v2 = r * r / pred.variance;
    out.statistics.push_back(v2);
    (v2 > critical ? out.outliers : out.kept).push_back(block.training_indices[i]);
  }
  if (out.kept.empty() && !xs.empty()) {
    const auto best = static_cast<std::size_t>(
        std::min_element(out.statistics.begin(), out.statistics.end()) - out.statistics.begin());
    out.all_flagged = true;
    out.kept.push_back(block.training_indices[best]);
    std::erase(out.outliers, block.training_indices[best]);
  }
  return out;
}

}  // namespace facade_gp
