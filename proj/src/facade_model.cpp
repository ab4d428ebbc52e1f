#include "facade_gp/facade_model.hpp"

#include "facade_gp/diagnostics.hpp"
#include "facade_gp/error.hpp"
#include "facade_gp/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <cmath>
#include <numbers>
#include <set>

namespace facade_gp {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double population_std(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

const char* to_string(EstimateSource source) {
  switch (source) {
    case EstimateSource::block: return "block";
    case EstimateSource::global: return "global";
    case EstimateSource::planar: return "planar";
  }
  return "unknown";
}

double ModelConfig::block_cell() const { return block_size(1.0 / length_scale2, c_min); }

void ModelConfig::validate() const {
  if (!(normal_angle > 0.0 && normal_angle < 90.0)) {
    throw InvalidArgument("normal angle threshold must lie in (0, 90) degrees");
  }
  if (!(length_scale2 > 0.0) || !(noise_std > 0.0)) {
    throw InvalidArgument("length-scale and noise std must be positive");
  }
  if (!(c_min > 0.0 && c_min < 1.0)) throw InvalidArgument("c_min must lie in (0, 1)");
  if (!(chi2_alpha > 0.0 && chi2_alpha < 1.0)) throw InvalidArgument("chi2 alpha must lie in (0, 1)");
}

void FacadeModel::index_blocks() {
  table_.clear();
  table_width_ = table_height_ = 0;
  if (blocks.empty()) return;
  int i0 = blocks.front().cell.i, i1 = i0, j0 = blocks.front().cell.j, j1 = j0;
  for (const auto& b : blocks) {
    i0 = std::min(i0, b.cell.i);
    i1 = std::max(i1, b.cell.i);
    j0 = std::min(j0, b.cell.j);
    j1 = std::max(j1, b.cell.j);
  }
  table_origin_ = {i0, j0};
  table_width_ = i1 - i0 + 1;
  table_height_ = j1 - j0 + 1;
  table_.assign(static_cast<std::size_t>(table_width_) * static_cast<std::size_t>(table_height_), -1);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& c = blocks[k].cell;
    table_[static_cast<std::size_t>(c.j - j0) * static_cast<std::size_t>(table_width_) +
           static_cast<std::size_t>(c.i - i0)] = static_cast<int>(k);
  }
}

const GpBlock* FacadeModel::block_at(const Vec2& x) const {
  if (table_.empty()) return nullptr;
  const auto c = cell_of(x, block_cell);
  const int di = c.i - table_origin_.i;
  const int dj = c.j - table_origin_.j;
  if (di < 0 || dj < 0 || di >= table_width_ || dj >= table_height_) return nullptr;
  const int k = table_[static_cast<std::size_t>(dj) * static_cast<std::size_t>(table_width_) +
                       static_cast<std::size_t>(di)];
  return k < 0 ? nullptr : &blocks[static_cast<std::size_t>(k)];
}

std::vector<std::size_t> select_training_points(std::span<const LocalPoint> points,
                                                const GmmModel& gmm, double normal_angle_deg) {
  const double cos_limit = std::cos(normal_angle_deg * std::numbers::pi / 180.0);
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const auto& layer = gmm.layers[assign_layer(gmm, p.d)];
    const bool off_layer = std::abs(p.d - layer.mean) > 1.96 * layer.std;
    const bool tilted = p.n_z.has_value() && *p.n_z < cos_limit;
    if (off_layer || tilted) selected.push_back(i);
  }
  return selected;
}

FacadeModel build_facade_model(std::span<const LocalPoint> points, const FacadeFrame& frame,
                               const ModelConfig& cfg, BuildStats* stats) {
  cfg.validate();
  if (points.size() < 2) throw InvalidArgument("facade model needs at least 2 points");
  BuildStats local_stats;
  BuildStats& st = stats ? *stats : local_stats;
  st = {};
  st.points = points.size();
  const int threads = resolve_threads(cfg.threads);

  FacadeModel model;
  model.frame = frame;
  model.noise_std = cfg.noise_std;
  model.block_cell = cfg.block_cell();
  model.extent = bounding_rect(points);

  // Planar layers.
  auto t0 = Clock::now();
  std::vector<double> depths;
  depths.reserve(points.size());
  for (const auto& p : points) depths.push_back(p.d);
  EmConfig em = cfg.em;
  em.histogram = cfg.histogram;
  const std::size_t K = std::min(detect_layer_count(depths, cfg.histogram), depths.size());
  model.gmm = fit_gmm(depths, K, em).model;
  model.facets = build_facet_grid(points, model.gmm, model.block_cell);
  st.gmm_seconds = seconds_since(t0);

  // Points the planes do not explain.
  t0 = Clock::now();
  const auto selected = select_training_points(points, model.gmm, cfg.normal_angle);
  std::vector<LocalPoint> train;
  train.reserve(selected.size());
  for (auto i : selected) train.push_back(points[i]);
  for (const auto& p : train) model.training_xy.push_back(p.x);
  st.training = train.size();
  st.selection_seconds = seconds_since(t0);
  if (train.empty()) {
    log::info("no training points selected; planar-only model");
    return model;
  }

  // One block per cell holding training data.
  t0 = Clock::now();
  const auto cells = partition_blocks(train, model.block_cell);
  std::map<CellIndex, const std::vector<std::size_t>*> members;
  std::vector<CellIndex> block_cells;
  for (const auto& cm : cells) {
    members.emplace(cm.cell, &cm.members);
    block_cells.push_back(cm.cell);
  }
  std::vector<std::optional<GpBlock>> fitted(block_cells.size());
  const double b0 = 1.0 / cfg.length_scale2;
  // Length-scales beyond the extended block's span are not identifiable.
  HyperoptOptions hyperopt;
  hyperopt.min_b = std::min(b0, 1.0 / std::pow(3.0 * model.block_cell, 2));
  parallel_for(block_cells.size(), threads, [&](std::size_t k) {
    const auto& c = block_cells[k];
    std::vector<std::size_t> extended;
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        const auto it = members.find({c.i + di, c.j + dj});
        if (it != members.end()) extended.insert(extended.end(), it->second->begin(), it->second->end());
      }
    }
    std::sort(extended.begin(), extended.end());
    const std::size_t layer = model.facets.layer_of_cell(c).value_or(model.gmm.main_index);
    KernelParams init;
    init.signal_std = model.gmm.layers[layer].std;
    init.inv_length2 = Vec2::Constant(b0);
    init.noise_std = cfg.noise_std;
    fitted[k] = fit_block(c, extended, train, layer, model.gmm.layers[layer].mean, init,
                          cfg.hyperopt_subset, hyperopt);
  });
  st.block_fit_seconds = seconds_since(t0);

  // One chi-squared pass per block, then refit on the survivors.
  t0 = Clock::now();
  std::vector<std::vector<std::size_t>> block_outliers(block_cells.size());
  parallel_for(block_cells.size(), threads, [&](std::size_t k) {
    if (!fitted[k]) return;
    const auto result = chi2_filter(*fitted[k], cfg.chi2_alpha);
    if (result.all_flagged) log::warn("chi-squared test flagged every point of a block");
    if (!result.outliers.empty()) {
      fitted[k] = refit_block(*fitted[k], result.kept, train);
      block_outliers[k] = result.outliers;
    }
  });
  std::vector<char> home_outlier(train.size(), 0);
  for (std::size_t k = 0; k < block_cells.size(); ++k) {
    for (auto i : block_outliers[k]) {
      if (cell_of(train[i].x, model.block_cell) == block_cells[k]) home_outlier[i] = 1;
    }
  }
  for (auto& b : fitted) {
    if (b) model.blocks.push_back(std::move(*b));
  }
  model.index_blocks();
  st.blocks = model.blocks.size();
  st.outliers = static_cast<std::size_t>(std::count(home_outlier.begin(), home_outlier.end(), 1));
  st.chi2_seconds = seconds_since(t0);

  // Facade-wide fallback for cells without a local GP.
  t0 = Clock::now();
  std::vector<std::size_t> clean;
  for (std::size_t i = 0; i < train.size(); ++i)
    if (!home_outlier[i]) clean.push_back(i);
  if (!clean.empty()) {
    std::vector<Vec2> gx;
    std::vector<double> gy;
    for (auto s : stride_subsample(clean.size(), cfg.global_subset)) {
      gx.push_back(train[clean[s]].x);
      gy.push_back(train[clean[s]].d);
    }
    // Default length-scales: the fallback only answers where no data was seen,
    // so nothing there informs an optimised length-scale.
    KernelParams params;
    params.signal_std = std::max(population_std(depths), cfg.em.sigma_floor);
    params.inv_length2 = Vec2::Constant(b0);
    params.noise_std = cfg.noise_std;
    const double mu_main = model.gmm.main_layer().mean;
    model.global_gp = GlobalGp{params, GpSolveState(params, mu_main, std::move(gx), std::move(gy)), {}};
    model.global_gp->prepare(model.extent.padded(model.block_cell));
  }
  st.global_seconds = seconds_since(t0);
  return model;
}

bool PosteriorLattice::covers(const Vec2& x) const {
  if (empty()) return false;
  const double u = (x.x() - origin.x()) / step.x();
  const double v = (x.y() - origin.y()) / step.y();
  return u >= 0.0 && v >= 0.0 && u <= n1 - 1 && v <= n2 - 1;
}

GpPrediction PosteriorLattice::interpolate(const Vec2& x) const {
  const double u = (x.x() - origin.x()) / step.x();
  const double v = (x.y() - origin.y()) / step.y();
  const int i = std::clamp(static_cast<int>(std::floor(u)), 0, n1 - 2);
  const int j = std::clamp(static_cast<int>(std::floor(v)), 0, n2 - 2);
  const double fu = u - i;
  const double fv = v - j;
  auto at = [&](const std::vector<double>& a, int di, int dj) {
    return a[static_cast<std::size_t>(j + dj) * static_cast<std::size_t>(n1) + static_cast<std::size_t>(i + di)];
  };
  auto lerp = [&](const std::vector<double>& a) {
    return (1 - fv) * ((1 - fu) * at(a, 0, 0) + fu * at(a, 1, 0)) + fv * ((1 - fu) * at(a, 0, 1) + fu * at(a, 1, 1));
  };
  return {lerp(mean), lerp(variance)};
}

void GlobalGp::prepare(const Rect2& region) {
  lattice = {};
  const double n = static_cast<double>(state.size());
  const Vec2 size = region.hi - region.lo;
  if (n == 0 || !(size.x() > 0.0) || !(size.y() > 0.0)) return;
  const Vec2 l = params.inv_length2.cwiseInverse().cwiseSqrt();
  // points within the cutoff radius of a typical query
  const double reach = std::sqrt(-2.0 * std::log(kGlobalCutoff));
  const double frac = std::min(1.0, 2.0 * reach * l.x() / size.x()) * std::min(1.0, 2.0 * reach * l.y() / size.y());
  if (n * frac <= 200.0) return;
  const Vec2 step = l / 8.0;
  const double n1 = std::ceil(size.x() / step.x()) + 1.0;
  const double n2 = std::ceil(size.y() / step.y()) + 1.0;
  if (n1 < 2.0 || n2 < 2.0 || n1 * n2 * n * n > 4e10) return;
  lattice.origin = region.lo;
  lattice.step = step;
  lattice.n1 = static_cast<int>(n1);
  lattice.n2 = static_cast<int>(n2);
  std::vector<Vec2> nodes;
  nodes.reserve(static_cast<std::size_t>(n1 * n2));
  for (int j = 0; j < lattice.n2; ++j) {
    for (int i = 0; i < lattice.n1; ++i) nodes.push_back(region.lo + Vec2(i * step.x(), j * step.y()));
  }
  std::vector<GpPrediction> pred(nodes.size());
  state.predict_many(nodes, pred);
  lattice.mean.reserve(pred.size());
  lattice.variance.reserve(pred.size());
  for (const auto& p : pred) {
    lattice.mean.push_back(p.mean);
    lattice.variance.push_back(p.variance);
  }
}

GpPrediction GlobalGp::predict(const Vec2& x) const {
  if (lattice.covers(x)) return lattice.interpolate(x);
  return state.predict(x, kGlobalCutoff);
}

SurfaceEstimate query_surface(const FacadeModel& model, const Vec2& x) {
  if (const auto* block = model.block_at(x)) {
    const auto p = block->state.predict(x);
    return {p.mean, p.variance, EstimateSource::block};
  }
  if (const auto layer = model.facets.layer_at(x)) {
    const auto& l = model.gmm.layers[*layer];
    return {l.mean, l.std * l.std + model.noise_std * model.noise_std, EstimateSource::planar};
  }
  if (model.global_gp) {
    const auto p = model.global_gp->predict(x);
    return {p.mean, p.variance, EstimateSource::global};
  }
  const auto& main = model.gmm.main_layer();
  return {main.mean, main.std * main.std + model.noise_std * model.noise_std,
          EstimateSource::planar};
}

std::vector<SurfaceEstimate> query_batch(const FacadeModel& model, std::span<const Vec2> xs) {
  std::vector<SurfaceEstimate> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(query_surface(model, x));
  return out;
}

FacadeModel baseline_plane_only(std::span<const LocalPoint> points, const FacadeFrame& frame,
                                double noise_std, double sigma_floor) {
  if (points.empty()) throw InvalidArgument("plane-only baseline needs points");
  std::vector<double> depths;
  for (const auto& p : points) depths.push_back(p.d);
  double mean = 0.0;
  for (double d : depths) mean += d;
  mean /= static_cast<double>(depths.size());
  FacadeModel model;
  model.frame = frame;
  model.noise_std = noise_std;
  model.gmm.layers = {{1.0, mean, std::max(population_std(depths), sigma_floor)}};
  model.gmm.main_index = 0;
  model.extent = bounding_rect(points);
  model.block_cell = block_size(400.0, 1e-4);
  model.facets.cell_size = model.block_cell;
  return model;
}

}  // namespace facade_gp
