#pragma once

#include "facade_gp/geometry.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace facade_gp {

/// One Gaussian component over depth: weight, mean and std (m).
struct DepthLayer {
  double weight = 1.0;
  double mean = 0.0;
  double std = 0.02;
};

struct GmmModel {
  std::vector<DepthLayer> layers;  // sorted by mean
  std::size_t main_index = 0;      // largest weight, ties -> smaller index

  std::size_t size() const { return layers.size(); }
  const DepthLayer& main_layer() const { return layers.at(main_index); }
  double log_likelihood(std::span<const double> depths) const;
  /// Checks sigma > 0, weights in (0, 1] summing to 1, and main_index.
  void validate() const;
};

struct HistogramConfig {
  double bin_width = 0.05;               // m
  double min_prominence_fraction = 0.05;  // of the tallest bin
  int min_peak_separation_bins = 2;
};

struct DepthHistogram {
  double start = 0.0;  // left edge of bin 0
  double bin_width = 0.05;
  std::vector<std::size_t> counts;

  double center(std::size_t bin) const { return start + (static_cast<double>(bin) + 0.5) * bin_width; }
};

struct HistogramPeak {
  double center = 0.0;  // m
  std::size_t height = 0;
  std::size_t prominence = 0;
};

DepthHistogram depth_histogram(std::span<const double> depths, double bin_width);

/// Peaks of the zero-padded depth histogram that pass the prominence and
/// separation rules, tallest first.
std::vector<HistogramPeak> find_histogram_peaks(std::span<const double> depths,
                                                const HistogramConfig& cfg);

/// Number of depth layers: accepted histogram peaks, at least 1. Throws
/// InvalidArgument on empty input.
std::size_t detect_layer_count(std::span<const double> depths, const HistogramConfig& cfg = {});

struct EmConfig {
  int max_iter = 200;
  double tol = 1e-6;          // log-likelihood improvement
  double sigma_floor = 0.005;  // m
  double init_std = 0.05;      // m
  HistogramConfig histogram;
};

struct GmmFit {
  GmmModel model;
  std::vector<double> log_likelihood;  // initial value, then one per EM iteration
  int iterations = 0;
  bool converged = false;
  bool clamped = false;  // some sigma hit sigma_floor
  std::vector<std::string> warnings;
};

/// EM for a K-component 1D mixture, initialised at the K tallest histogram
/// peaks (quantiles fill in when there are fewer peaks than K).
GmmFit fit_gmm(std::span<const double> depths, std::size_t K, const EmConfig& cfg = {});

/// argmax_k pi_k N(d | mu_k, sigma_k^2), ties -> smaller index.
std::size_t assign_layer(const GmmModel& gmm, double d);

/// Cell -> plurality depth layer of the points falling in that cell.
struct FacetGrid {
  double cell_size = 0.2146;
  Vec2 origin = Vec2::Zero();
  std::map<CellIndex, std::size_t> cells;

  CellIndex cell_of(const Vec2& x) const { return facade_gp::cell_of(x, cell_size, origin); }
  std::optional<std::size_t> layer_at(const Vec2& x) const;
  std::optional<std::size_t> layer_of_cell(const CellIndex& c) const;
};

FacetGrid build_facet_grid(std::span<const LocalPoint> points, const GmmModel& gmm,
                           double cell_size);

}  // namespace facade_gp
