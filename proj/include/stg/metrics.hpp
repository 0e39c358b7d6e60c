#pragma once

// Evaluation: mean distance error, per-trajectory feature sets and a biased
// (V-statistic) squared MMD with a Gaussian kernel and median bandwidth.

#include "stg/autodiff.hpp"
#include "stg/data.hpp"
#include "stg/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace stg {

/// Mean over all paired points of the Euclidean distance (km).
inline double mde(const Trajectories& real, const Trajectories& recon) {
  if (real.size() != recon.size())
    throw std::invalid_argument("mde: " + std::to_string(real.size()) + " vs " + std::to_string(recon.size()) +
                                " trajectories");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    if (real[i].size() != recon[i].size())
      throw std::invalid_argument("mde: length mismatch at pair " + std::to_string(i));
    for (std::size_t t = 0; t < real[i].size(); ++t) total += distance(real[i].points[t], recon[i].points[t]);
    count += real[i].size();
  }
  if (count == 0) throw std::invalid_argument("mde: no points");
  return total / static_cast<double>(count);
}

/// Haversine variant: both sets are unprojected through `projection` first.
inline double mde_haversine(const Trajectories& real, const Trajectories& recon, const ProjectionSpec& projection) {
  if (real.size() != recon.size()) throw std::invalid_argument("mde: trajectory counts differ");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    if (real[i].size() != recon[i].size())
      throw std::invalid_argument("mde: length mismatch at pair " + std::to_string(i));
    for (std::size_t t = 0; t < real[i].size(); ++t)
      total += haversine_km(projection.unproject(real[i].points[t]), projection.unproject(recon[i].points[t]),
                            projection.radius_km);
    count += real[i].size();
  }
  if (count == 0) throw std::invalid_argument("mde: no points");
  return total / static_cast<double>(count);
}

enum class FeatureKind { angles, segment_lengths, total_length, grid_counts };

inline std::string to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::angles: return "angles";
    case FeatureKind::segment_lengths: return "segment_lengths";
    case FeatureKind::total_length: return "total_length";
    case FeatureKind::grid_counts: return "grid_counts";
  }
  return "?";
}

inline constexpr FeatureKind kAllFeatures[] = {FeatureKind::angles, FeatureKind::segment_lengths,
                                               FeatureKind::total_length, FeatureKind::grid_counts};

struct GridSpec {
  double min_x = 0.0, min_y = 0.0, max_x = 1.0, max_y = 1.0;
  std::size_t cells = 16;

  void validate() const {
    if (!(max_x > min_x) || !(max_y > min_y)) throw std::invalid_argument("GridSpec: degenerate box");
    if (cells == 0) throw std::invalid_argument("GridSpec: need at least one cell per axis");
  }

  /// Row-major cell index; points outside the box fall into border cells.
  std::size_t cell_of(const Point& p) const {
    auto axis = [&](double v, double lo, double hi) {
      const double u = (v - lo) / (hi - lo) * static_cast<double>(cells);
      const double c = std::clamp(std::floor(u), 0.0, static_cast<double>(cells - 1));
      return static_cast<std::size_t>(c);
    };
    return axis(p.y, min_y, max_y) * cells + axis(p.x, min_x, max_x);
  }

  /// Tight box around a corpus.
  static GridSpec around(const Trajectories& data, std::size_t cells = 16) {
    GridSpec g{1e300, 1e300, -1e300, -1e300, cells};
    for (const auto& t : data)
      for (const auto& p : t.points) {
        g.min_x = std::min(g.min_x, p.x);
        g.min_y = std::min(g.min_y, p.y);
        g.max_x = std::max(g.max_x, p.x);
        g.max_y = std::max(g.max_y, p.y);
      }
    if (g.min_x > g.max_x) return GridSpec{0, 0, 1, 1, cells};
    if (g.max_x == g.min_x) g.max_x = g.min_x + 1.0;
    if (g.max_y == g.min_y) g.max_y = g.min_y + 1.0;
    return g;
  }
};

struct FeatureSet {
  FeatureKind kind = FeatureKind::angles;
  Mat rows;  ///< one row per accepted trajectory, zero-padded to a common width
  std::vector<std::string> rejected;
};

/// angles: turning cosines (T-2, degenerate steps 0); segment lengths (T-1);
/// total length (1); grid counts (G^2, row-major).
inline std::vector<double> feature_vector(FeatureKind kind, const Trajectory& s, const GridSpec* grid) {
  const std::size_t n = s.size();
  std::vector<double> v;
  switch (kind) {
    case FeatureKind::angles: {
      if (n < 3) throw std::invalid_argument("angles need at least 3 points");
      for (std::size_t t = 2; t < n; ++t) {
        const double ax = s.points[t].x - s.points[t - 1].x, ay = s.points[t].y - s.points[t - 1].y;
        const double bx = s.points[t - 1].x - s.points[t - 2].x, by = s.points[t - 1].y - s.points[t - 2].y;
        const double na = std::hypot(ax, ay), nb = std::hypot(bx, by);
        v.push_back(na == 0.0 || nb == 0.0 ? 0.0 : std::clamp((ax * bx + ay * by) / (na * nb), -1.0, 1.0));
      }
      break;
    }
    case FeatureKind::segment_lengths:
      if (n < 2) throw std::invalid_argument("segment lengths need at least 2 points");
      for (std::size_t t = 1; t < n; ++t) v.push_back(distance(s.points[t], s.points[t - 1]));
      break;
    case FeatureKind::total_length: {
      if (n < 2) throw std::invalid_argument("total length needs at least 2 points");
      double total = 0.0;
      for (std::size_t t = 1; t < n; ++t) total += distance(s.points[t], s.points[t - 1]);
      v.push_back(total);
      break;
    }
    case FeatureKind::grid_counts:
      if (!grid) throw std::invalid_argument("grid counts need a grid");
      v.assign(grid->cells * grid->cells, 0.0);
      for (const Point& p : s.points) v[grid->cell_of(p)] += 1.0;
      break;
  }
  return v;
}

inline FeatureSet extract_features(FeatureKind kind, const Trajectories& data, const GridSpec* grid = nullptr,
                                   std::size_t min_width = 0) {
  if (kind == FeatureKind::grid_counts) {
    if (!grid) throw std::invalid_argument("extract_features: grid counts require a grid");
    grid->validate();
  }
  FeatureSet fs;
  fs.kind = kind;
  std::vector<std::vector<double>> rows;
  std::size_t width = min_width;
  for (const auto& s : data) {
    try {
      rows.push_back(feature_vector(kind, s, grid));
      width = std::max(width, rows.back().size());
    } catch (const std::invalid_argument& e) {
      fs.rejected.push_back(s.id + ": " + e.what());
    }
  }
  fs.rows = Mat::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      fs.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return fs;
}

/// Zero-pads the narrower set so both share a width.
inline void pad_to_common_width(FeatureSet& a, FeatureSet& b) {
  const auto w = std::max(a.rows.cols(), b.rows.cols());
  for (FeatureSet* f : {&a, &b}) {
    if (f->rows.cols() == w) continue;
    Mat wider = Mat::Zero(f->rows.rows(), w);
    wider.leftCols(f->rows.cols()) = f->rows;
    f->rows = std::move(wider);
  }
}

namespace detail {

inline Mat pairwise_sq(const Mat& a, const Mat& b) {
  const Eigen::VectorXd na = a.rowwise().squaredNorm();
  const Eigen::VectorXd nb = b.rowwise().squaredNorm();
  Mat d = (-2.0 * a * b.transpose()).eval();
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

}  // namespace detail

/// Median-heuristic bandwidth: the lower median of all pooled pairwise
/// distances, self-pairs included; 1 when that median is 0.
inline double median_bandwidth(const Mat& pooled) {
  const auto n = static_cast<std::size_t>(pooled.rows());
  const Mat d2 = detail::pairwise_sq(pooled, pooled);
  // n^2 ordered pairs: n zero self-distances, each unordered pair counted twice.
  const std::size_t k = (n * n - 1) / 2;
  if (k < n) return 1.0;
  std::vector<double> upper;
  upper.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      upper.push_back(d2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
  const std::size_t idx = (k - n) / 2;
  std::nth_element(upper.begin(), upper.begin() + static_cast<std::ptrdiff_t>(idx), upper.end());
  const double h = std::sqrt(upper[idx]);
  return h > 0.0 ? h : 1.0;
}

/// Biased squared MMD between the rows of two feature matrices, clamped at 0.
inline double mmd(const Mat& x, const Mat& y, std::optional<double> bandwidth = std::nullopt) {
  if (x.rows() == 0 || y.rows() == 0) throw std::invalid_argument("mmd: empty feature set");
  if (x.cols() != y.cols())
    throw std::invalid_argument("mmd: widths differ (" + std::to_string(x.cols()) + " vs " + std::to_string(y.cols()) + ")");
  double h = 1.0;
  if (bandwidth) {
    h = *bandwidth;
  } else {
    Mat pooled(x.rows() + y.rows(), x.cols());
    pooled << x, y;
    h = median_bandwidth(pooled);
  }
  const double gamma = 1.0 / (2.0 * h * h);
  auto mean_kernel = [&](const Mat& a, const Mat& b) { return (-gamma * detail::pairwise_sq(a, b).array()).exp().mean(); };
  const double v = mean_kernel(x, x) + mean_kernel(y, y) - 2.0 * mean_kernel(x, y);
  return std::max(0.0, v);
}

inline double mmd(const FeatureSet& a, const FeatureSet& b) {
  if (a.kind != b.kind) throw std::invalid_argument("mmd: feature kinds differ (" + to_string(a.kind) + " vs " + to_string(b.kind) + ")");
  return mmd(a.rows, b.rows);
}

}  // namespace stg
