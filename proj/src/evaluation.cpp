#include "facade_gp/evaluation.hpp"

#include "facade_gp/diagnostics.hpp"
#include "facade_gp/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace facade_gp {

bool FacadeExtent::contains(const Point3& p) const {
  const auto lp = to_local(frame, p);
  return rect.contains(lp.x) && lp.d >= depth_lo && lp.d <= depth_hi;
}

std::size_t GroundTruthGrid::occupied_evaluable() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < occupied.size(); ++i) n += (occupied[i] && evaluable[i]) ? 1 : 0;
  return n;
}

namespace {

GroundTruthGrid empty_truth(const GridGeometry& geometry, std::span<const FacadeExtent> extents) {
  GroundTruthGrid gt;
  gt.geometry = geometry;
  gt.occupied.assign(geometry.size(), 0);
  gt.evaluable.assign(geometry.size(), 0);
  for (std::size_t i = 0; i < geometry.size(); ++i) {
    const Point3 c = geometry.center(i);
    gt.evaluable[i] = std::any_of(extents.begin(), extents.end(),
                                  [&](const FacadeExtent& e) { return e.contains(c); });
  }
  return gt;
}

}  // namespace

GroundTruthGrid gt_from_points(const PointCloud& cloud, const GridGeometry& geometry,
                               std::span<const FacadeExtent> extents) {
  auto gt = empty_truth(geometry, extents);
  for (const auto& p : cloud.points) {
    if (const auto idx = geometry.locate(p)) gt.occupied[*idx] = 1;
  }
  return gt;
}

GroundTruthGrid gt_from_surfaces(std::span<const AnalyticSurface> surfaces, const GridGeometry& geometry,
                                 std::span<const FacadeExtent> extents, double spacing) {
  auto gt = empty_truth(geometry, extents);
  const double step = spacing > 0.0 ? spacing : geometry.resolution / 4.0;
  for (const auto& s : surfaces) {
    const Vec2 size = s.domain.hi - s.domain.lo;
    const auto n1 = static_cast<std::size_t>(std::floor(size.x() / step)) + 1;
    const auto n2 = static_cast<std::size_t>(std::floor(size.y() / step)) + 1;
    for (std::size_t j = 0; j < n2; ++j) {
      for (std::size_t i = 0; i < n1; ++i) {
        const Vec2 x(std::min(s.domain.lo.x() + static_cast<double>(i) * step, s.domain.hi.x()),
                     std::min(s.domain.lo.y() + static_cast<double>(j) * step, s.domain.hi.y()));
        if (const auto idx = geometry.locate(from_local(s.frame, x, s.depth(x)))) gt.occupied[*idx] = 1;
      }
    }
  }
  return gt;
}

std::size_t VoxelScores::positives() const {
  return static_cast<std::size_t>(std::count(label.begin(), label.end(), std::uint8_t{1}));
}

VoxelScores collect_scores(const OccupancyGrid& pred, const GroundTruthGrid& gt) {
  if (!(pred.geometry == gt.geometry)) throw InvalidArgument("prediction and ground truth geometry differ");
  VoxelScores s;
  for (std::size_t i = 0; i < pred.p_occ.size(); ++i) {
    if (!gt.evaluable[i]) continue;
    if (pred.masked && pred.unknown[i]) continue;
    s.score.push_back(pred.unknown[i] ? 0.5 : pred.p_occ[i]);
    s.label.push_back(gt.occupied[i]);
  }
  return s;
}

double pr_auc(const VoxelScores& scores) {
  const std::size_t positives = scores.positives();
  if (positives == 0) throw InvalidArgument("no occupied ground-truth voxel is scored");
  std::vector<std::size_t> order(scores.score.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores.score[a] > scores.score[b]; });
  double tp = 0.0, fp = 0.0;
  double prev_recall = 0.0, prev_precision = 1.0, area = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    const double t = scores.score[order[k]];
    for (; k < order.size() && scores.score[order[k]] == t; ++k) {
      (scores.label[order[k]] ? tp : fp) += 1.0;
    }
    const double recall = tp / static_cast<double>(positives);
    const double precision = tp / (tp + fp);
    area += 0.5 * (recall - prev_recall) * (precision + prev_precision);
    prev_recall = recall;
    prev_precision = precision;
  }
  return area;
}

PrCurve pr_curve(const VoxelScores& scores, std::size_t n_thresholds) {
  if (n_thresholds == 0) throw InvalidArgument("n_thresholds must be positive");
  PrCurve curve;
  curve.auc = pr_auc(scores);
  const double positives = static_cast<double>(scores.positives());
  // Counts per threshold bucket: bucket b holds scores in [t_b, t_{b+1}).
  const double n1 = static_cast<double>(n_thresholds + 1);
  std::vector<double> tp(n_thresholds + 1, 0.0), fp(n_thresholds + 1, 0.0);
  for (std::size_t i = 0; i < scores.score.size(); ++i) {
    const double p = scores.score[i];
    auto b = static_cast<std::size_t>(std::min(std::floor(p * n1), static_cast<double>(n_thresholds)));
    // guard against rounding at bucket edges
    while (b > 0 && p < static_cast<double>(b) / n1) --b;
    while (b < n_thresholds && p >= static_cast<double>(b + 1) / n1) ++b;
    (scores.label[i] ? tp : fp)[b] += 1.0;
  }
  double ctp = 0.0, cfp = 0.0;
  for (std::size_t b = n_thresholds; b >= 1; --b) {
    ctp += tp[b];
    cfp += fp[b];
    PrPoint pt;
    pt.threshold = static_cast<double>(b) / n1;
    pt.precision = ctp + cfp > 0.0 ? ctp / (ctp + cfp) : 1.0;
    pt.recall = ctp / positives;
    curve.points.push_back(pt);
  }
  return curve;
}

PrCurve pr_curve(const OccupancyGrid& pred, const GroundTruthGrid& gt, std::size_t n_thresholds) {
  return pr_curve(collect_scores(pred, gt), n_thresholds);
}

std::vector<CurvePoint> auc_vs_uncertainty(const VoxelEvaluation& eval, const GroundTruthGrid& gt,
                                           std::span<const double> thresholds) {
  std::vector<CurvePoint> out;
  for (const double t : thresholds) {
    if (!(t > 0.0)) throw InvalidArgument("variance thresholds must be positive");
    const auto grid = apply_variance_threshold(eval, std::isfinite(t) ? std::optional<double>(t) : std::nullopt);
    const auto scores = collect_scores(grid, gt);
    CurvePoint pt;
    pt.key = t;
    pt.upper = t;
    pt.scored = scores.score.size();
    if (scores.positives() > 0) {
      pt.auc = pr_auc(scores);
    } else {
      log::info("variance threshold " + std::to_string(t) + " leaves no occupied voxel; point omitted");
    }
    out.push_back(pt);
  }
  return out;
}

PointIndex2::PointIndex2(std::span<const Vec2> points, double cell)
    : points_(points.begin(), points.end()), cell_(cell) {
  if (!(cell > 0.0)) throw InvalidArgument("index cell must be positive");
  if (points_.empty()) return;
  CellIndex hi = cell_of(points_[0], cell_);
  lo_ = hi;
  for (const auto& p : points_) {
    const auto c = cell_of(p, cell_);
    lo_.i = std::min(lo_.i, c.i);
    lo_.j = std::min(lo_.j, c.j);
    hi.i = std::max(hi.i, c.i);
    hi.j = std::max(hi.j, c.j);
  }
  width_ = hi.i - lo_.i + 1;
  height_ = hi.j - lo_.j + 1;
  std::vector<std::size_t> bucket(points_.size());
  start_.assign(static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_) + 1, 0);
  for (std::size_t k = 0; k < points_.size(); ++k) {
    const auto c = cell_of(points_[k], cell_);
    bucket[k] = static_cast<std::size_t>(c.j - lo_.j) * static_cast<std::size_t>(width_) +
                static_cast<std::size_t>(c.i - lo_.i);
    ++start_[bucket[k] + 1];
  }
  std::partial_sum(start_.begin(), start_.end(), start_.begin());
  order_.resize(points_.size());
  auto fill = start_;
  for (std::size_t k = 0; k < points_.size(); ++k) order_[fill[bucket[k]]++] = k;
}

double PointIndex2::nearest_distance(const Vec2& q) const {
  if (points_.empty()) return std::numeric_limits<double>::infinity();
  const auto c = cell_of(q, cell_);
  // clamp the query cell into the table, then grow rings until the ring
  // can no longer contain anything closer
  const int ci = std::clamp(c.i, lo_.i, lo_.i + width_ - 1);
  const int cj = std::clamp(c.j, lo_.j, lo_.j + height_ - 1);
  double best2 = std::numeric_limits<double>::infinity();
  const int max_ring = std::max(width_, height_);
  for (int ring = 0; ring <= max_ring; ++ring) {
    for (int j = cj - ring; j <= cj + ring; ++j) {
      if (j < lo_.j || j >= lo_.j + height_) continue;
      for (int i = ci - ring; i <= ci + ring; ++i) {
        if (i < lo_.i || i >= lo_.i + width_) continue;
        if (std::max(std::abs(i - ci), std::abs(j - cj)) != ring) continue;
        const auto b = static_cast<std::size_t>(j - lo_.j) * static_cast<std::size_t>(width_) +
                       static_cast<std::size_t>(i - lo_.i);
        for (std::size_t k = start_[b]; k < start_[b + 1]; ++k) {
          best2 = std::min(best2, (points_[order_[k]] - q).squaredNorm());
        }
      }
    }
    // distance from q to the outside of the searched square
    const Vec2 sq_lo(static_cast<double>(ci - ring) * cell_, static_cast<double>(cj - ring) * cell_);
    const Vec2 sq_hi(static_cast<double>(ci + ring + 1) * cell_, static_cast<double>(cj + ring + 1) * cell_);
    const double margin = std::min({q.x() - sq_lo.x(), sq_hi.x() - q.x(), q.y() - sq_lo.y(), sq_hi.y() - q.y()});
    if (std::isfinite(best2) && margin > 0.0 && margin * margin >= best2) break;
  }
  return std::sqrt(best2);
}

std::vector<CurvePoint> auc_vs_distance(const VoxelEvaluation& eval, const GroundTruthGrid& gt,
                                        std::span<const FacadeModel> models, std::span<const double> edges) {
  if (edges.size() < 2) throw InvalidArgument("need at least two bin edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw InvalidArgument("bin edges must be ascending");
  }
  if (!(eval.grid.geometry == gt.geometry)) throw InvalidArgument("prediction and ground truth geometry differ");
  std::vector<PointIndex2> index;
  for (const auto& m : models) index.emplace_back(m.training_xy);

  const std::size_t bins = edges.size() - 1;
  std::vector<VoxelScores> per_bin(bins);
  const auto& grid = eval.grid;
  for (std::size_t i = 0; i < grid.p_occ.size(); ++i) {
    if (!gt.evaluable[i] || eval.source[i] < 0) continue;
    const auto f = static_cast<std::size_t>(eval.source[i]);
    if (f >= models.size()) throw InvalidArgument("voxel source facade out of range");
    const Vec2 x(eval.local_x[i][0], eval.local_x[i][1]);
    const double dist = index[f].nearest_distance(x);
    const auto it = std::upper_bound(edges.begin(), edges.end(), dist);
    if (it == edges.begin() || it == edges.end()) continue;
    const auto b = static_cast<std::size_t>(it - edges.begin()) - 1;
    per_bin[b].score.push_back(grid.p_occ[i]);
    per_bin[b].label.push_back(gt.occupied[i]);
  }
  std::vector<CurvePoint> out;
  for (std::size_t b = 0; b < bins; ++b) {
    CurvePoint pt;
    pt.key = edges[b];
    pt.upper = edges[b + 1];
    pt.scored = per_bin[b].score.size();
    if (per_bin[b].positives() > 0) {
      pt.auc = pr_auc(per_bin[b]);
    } else {
      log::info("distance bin [" + std::to_string(edges[b]) + ", " + std::to_string(edges[b + 1]) +
                ") has no occupied voxel; omitted");
    }
    out.push_back(pt);
  }
  return out;
}

double calibration(const FacadeModel& model, std::span<const LocalPoint> held_out) {
  if (held_out.empty()) throw InvalidArgument("calibration needs held-out points");
  if (held_out.size() < 100) log::warn("calibration on fewer than 100 held-out points");
  std::size_t inside = 0;
  for (const auto& p : held_out) {
    const auto est = query_surface(model, p.x);
    if (std::abs(p.d - est.mean) <= 1.96 * std::sqrt(est.variance)) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(held_out.size());
}

void write_pr_csv(const std::filesystem::path& path, std::span<const LabeledCurve> curves) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "curve,threshold,precision,recall\n";
  char buf[160];
  for (const auto& c : curves) {
    for (const auto& p : c.curve.points) {
      std::snprintf(buf, sizeof buf, "%.6f,%.9g,%.9g\n", p.threshold, p.precision, p.recall);
      out << c.label << ',' << buf;
    }
  }
}

void write_pr_svg(const std::filesystem::path& path, std::span<const LabeledCurve> curves) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  constexpr double W = 480, H = 400, L = 60, T = 20, PW = 380, PH = 320;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" font-family=\"sans-serif\" "
                "font-size=\"12\">\n",
                W, H);
  out << buf;
  std::snprintf(buf, sizeof buf, "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"black\"/>\n",
                L, T, PW, PH);
  out << buf;
  for (int k = 0; k <= 5; ++k) {
    const double f = k / 5.0;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%.1f</text>\n"
                  "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.1f</text>\n",
                  L + f * PW, T + PH + 16, f, L - 6, T + PH - f * PH + 4, f);
    out << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">recall</text>\n"
                "<text x=\"14\" y=\"%g\" text-anchor=\"middle\" transform=\"rotate(-90 14 %g)\">precision</text>\n",
                L + PW / 2, H - 8, T + PH / 2, T + PH / 2);
  out << buf;
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const char* color = colors[c % std::size(colors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    std::snprintf(buf, sizeof buf, "%.2f,%.2f ", L, T);
    out << buf;
    for (const auto& p : curves[c].curve.points) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", L + p.recall * PW, T + (1.0 - p.precision) * PH);
      out << buf;
    }
    out << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" fill=\"%s\">%s (AUC %.3f)</text>\n", L + PW - 170,
                  T + PH - 12 - 16.0 * static_cast<double>(curves.size() - 1 - c), color,
                  curves[c].label.c_str(), curves[c].curve.auc);
    out << buf;
  }
  out << "</svg>\n";
}

}  // namespace facade_gp
