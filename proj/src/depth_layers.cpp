#include "facade_gp/depth_layers.hpp"

#include "facade_gp/diagnostics.hpp"
#include "facade_gp/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace facade_gp {
namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2 pi))

double log_normal(double d, double mean, double std) {
  const double z = (d - mean) / std;
  return -0.5 * z * z - std::log(std) - kLogSqrt2Pi;
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void check_depths(std::span<const double> depths) {
  if (depths.empty()) throw InvalidArgument("depth list is empty");
  for (double d : depths) {
    if (!std::isfinite(d)) throw InvalidArgument("depth list contains non-finite values");
  }
}

}  // namespace

double GmmModel::log_likelihood(std::span<const double> depths) const {
  std::vector<double> terms(layers.size());
  double ll = 0.0;
  for (double d : depths) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      terms[k] = std::log(layers[k].weight) + log_normal(d, layers[k].mean, layers[k].std);
    }
    ll += log_sum_exp(terms);
  }
  return ll;
}

void GmmModel::validate() const {
  if (layers.empty()) throw InvalidArgument("GMM has no layers");
  double total = 0.0;
  for (const auto& l : layers) {
    if (!(l.std > 0.0)) throw InvalidArgument("GMM layer std must be positive");
    if (!(l.weight > 0.0 && l.weight <= 1.0)) throw InvalidArgument("GMM weight outside (0, 1]");
    total += l.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("GMM weights do not sum to 1");
  if (main_index >= layers.size()) throw InvalidArgument("GMM main index out of range");
}

DepthHistogram depth_histogram(std::span<const double> depths, double bin_width) {
  check_depths(depths);
  if (!(bin_width > 0.0)) throw InvalidArgument("histogram bin width must be positive");
  const auto [lo, hi] = std::minmax_element(depths.begin(), depths.end());
  DepthHistogram h;
  h.bin_width = bin_width;
  h.start = std::floor(*lo / bin_width) * bin_width;
  const auto bins = static_cast<std::size_t>(std::floor((*hi - h.start) / bin_width)) + 1;
  h.counts.assign(bins, 0);
  for (double d : depths) {
    auto b = static_cast<std::size_t>(std::floor((d - h.start) / bin_width));
    h.counts[std::min(b, bins - 1)]++;
  }
  return h;
}

std::vector<HistogramPeak> find_histogram_peaks(std::span<const double> depths,
                                                const HistogramConfig& cfg) {
  if (!(cfg.min_prominence_fraction > 0.0 && cfg.min_prominence_fraction < 1.0)) {
    throw InvalidArgument("min_prominence_fraction must lie in (0, 1)");
  }
  const auto hist = depth_histogram(depths, cfg.bin_width);
  // Zero padding on both ends lets edge bins act as peaks.
  std::vector<std::size_t> h(hist.counts.size() + 2, 0);
  std::copy(hist.counts.begin(), hist.counts.end(), h.begin() + 1);
  const std::size_t tallest = *std::max_element(h.begin(), h.end());

  struct Candidate {
    double position;  // bin index of the plateau centre (unpadded)
    std::size_t height;
    std::size_t prominence;
  };
  std::vector<Candidate> candidates;
  std::size_t i = 1;
  while (i + 1 < h.size()) {
    std::size_t end = i;
    while (end + 1 < h.size() - 1 && h[end + 1] == h[i]) ++end;
    if (h[i - 1] < h[i] && h[end + 1] < h[i]) {
      const std::size_t height = h[i];
      std::size_t left_min = height;
      for (std::size_t l = i; l-- > 0;) {
        if (h[l] > height) break;
        left_min = std::min(left_min, h[l]);
      }
      std::size_t right_min = height;
      for (std::size_t r = end + 1; r < h.size(); ++r) {
        if (h[r] > height) break;
        right_min = std::min(right_min, h[r]);
      }
      const double centre = 0.5 * static_cast<double>(i + end) - 1.0;
      candidates.push_back({centre, height, height - std::max(left_min, right_min)});
    }
    i = end + 1;
  }

  const double min_prominence = cfg.min_prominence_fraction * static_cast<double>(tallest);
  std::erase_if(candidates, [&](const Candidate& c) {
    return static_cast<double>(c.prominence) < min_prominence;
  });
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.height > b.height; });
  std::vector<Candidate> kept;
  for (const auto& c : candidates) {
    const bool clash = std::any_of(kept.begin(), kept.end(), [&](const Candidate& k) {
      return std::abs(k.position - c.position) < cfg.min_peak_separation_bins;
    });
    if (!clash) kept.push_back(c);
  }

  std::vector<HistogramPeak> peaks;
  for (const auto& c : kept) {
    peaks.push_back({hist.start + (c.position + 0.5) * hist.bin_width, c.height, c.prominence});
  }
  return peaks;
}

std::size_t detect_layer_count(std::span<const double> depths, const HistogramConfig& cfg) {
  return std::max<std::size_t>(1, find_histogram_peaks(depths, cfg).size());
}

GmmFit fit_gmm(std::span<const double> depths, std::size_t K, const EmConfig& cfg) {
  check_depths(depths);
  if (K == 0) throw InvalidArgument("GMM needs at least one component");
  if (K > depths.size()) {
    throw InvalidArgument("GMM with " + std::to_string(K) + " components needs at least as many samples");
  }
  const std::size_t n = depths.size();

  // Initialisation from the tallest peaks, quantiles for the remainder.
  auto peaks = find_histogram_peaks(depths, cfg.histogram);
  if (peaks.size() > K) peaks.resize(K);
  std::vector<DepthLayer> layers;
  double height_total = 0.0;
  for (const auto& p : peaks) height_total += static_cast<double>(p.height);
  for (const auto& p : peaks) {
    layers.push_back({static_cast<double>(p.height) / height_total, p.center, cfg.init_std});
  }
  if (layers.size() < K) {
    std::vector<double> sorted(depths.begin(), depths.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t missing = K - layers.size();
    const double share = layers.empty() ? 1.0 : 0.5;
    for (auto& l : layers) l.weight *= (1.0 - share);
    for (std::size_t m = 0; m < missing; ++m) {
      const double q = (static_cast<double>(m) + 0.5) / static_cast<double>(missing);
      const auto idx = std::min(n - 1, static_cast<std::size_t>(q * static_cast<double>(n)));
      layers.push_back({share / static_cast<double>(missing), sorted[idx], cfg.init_std});
    }
  }

  GmmFit fit;
  std::vector<double> resp(n * K);
  std::vector<double> terms(K);
  auto e_step = [&](std::vector<DepthLayer>& ls) {
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < ls.size(); ++k) {
        terms[k] = std::log(ls[k].weight) + log_normal(depths[i], ls[k].mean, ls[k].std);
      }
      const double lse = log_sum_exp(std::span<const double>(terms.data(), ls.size()));
      ll += lse;
      for (std::size_t k = 0; k < ls.size(); ++k) resp[i * K + k] = std::exp(terms[k] - lse);
    }
    return ll;
  };

  double ll = e_step(layers);
  fit.log_likelihood.push_back(ll);
  for (int it = 0; it < cfg.max_iter; ++it) {
    // M-step.
    std::vector<DepthLayer> next;
    std::vector<std::size_t> keep;
    for (std::size_t k = 0; k < layers.size(); ++k) {
      double nk = 0.0, s1 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i * K + k];
        s1 += resp[i * K + k] * depths[i];
      }
      if (nk < 1e-12) {
        fit.warnings.push_back("empty GMM component removed");
        continue;
      }
      const double mean = s1 / nk;
      double s2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = depths[i] - mean;
        s2 += resp[i * K + k] * r * r;
      }
      double std = std::sqrt(s2 / nk);
      if (!(std >= cfg.sigma_floor)) {
        std = cfg.sigma_floor;
        if (!fit.clamped) fit.warnings.push_back("GMM component collapsed; sigma clamped to floor");
        fit.clamped = true;
      }
      next.push_back({nk / static_cast<double>(n), mean, std});
    }
    double wsum = 0.0;
    for (const auto& l : next) wsum += l.weight;
    for (auto& l : next) l.weight /= wsum;
    layers = std::move(next);

    const double next_ll = e_step(layers);
    fit.log_likelihood.push_back(next_ll);
    fit.iterations = it + 1;
    const double gain = next_ll - ll;
    ll = next_ll;
    if (gain < cfg.tol) {
      fit.converged = true;
      break;
    }
  }
  for (const auto& w : fit.warnings) log::warn(w);

  std::stable_sort(layers.begin(), layers.end(),
                   [](const DepthLayer& a, const DepthLayer& b) { return a.mean < b.mean; });
  fit.model.layers = std::move(layers);
  fit.model.main_index = 0;
  for (std::size_t k = 1; k < fit.model.layers.size(); ++k) {
    if (fit.model.layers[k].weight > fit.model.layers[fit.model.main_index].weight) {
      fit.model.main_index = k;
    }
  }
  return fit;
}

std::size_t assign_layer(const GmmModel& gmm, double d) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < gmm.layers.size(); ++k) {
    const auto& l = gmm.layers[k];
    const double score = std::log(l.weight) + log_normal(d, l.mean, l.std);
    if (score > best_score) {
      best_score = score;
      best = k;
    }
  }
  return best;
}

std::optional<std::size_t> FacetGrid::layer_of_cell(const CellIndex& c) const {
  const auto it = cells.find(c);
  if (it == cells.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> FacetGrid::layer_at(const Vec2& x) const {
  return layer_of_cell(cell_of(x));
}

FacetGrid build_facet_grid(std::span<const LocalPoint> points, const GmmModel& gmm,
                           double cell_size) {
  if (!(cell_size > 0.0)) throw InvalidArgument("facet cell size must be positive");
  FacetGrid grid;
  grid.cell_size = cell_size;
  const std::size_t K = gmm.size();
  std::map<CellIndex, std::vector<std::size_t>> tallies;
  for (const auto& p : points) {
    auto& tally = tallies[grid.cell_of(p.x)];
    if (tally.empty()) tally.assign(K, 0);
    tally[assign_layer(gmm, p.d)]++;
  }
  for (const auto& [cell, tally] : tallies) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (tally[k] > tally[best] ||
          (tally[k] == tally[best] && gmm.layers[k].weight > gmm.layers[best].weight)) {
        best = k;
      }
    }
    grid.cells.emplace(cell, best);
  }
  return grid;
}

}  // namespace facade_gp
