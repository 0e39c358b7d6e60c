#pragma once

// Higher-level steps shared by the command line tool and the test suites:
// coordinate normalization, the disentanglement probe grid, the random-walk
// reference generator and the evaluation report.

#include "stg/constraints.hpp"
#include "stg/io.hpp"
#include "stg/metrics.hpp"
#include "stg/model.hpp"

#include <json.hpp>

#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace stg {

/// Sets origin to the mean point and scale to the per-axis RMS spread.
inline void fit_normalization(ModelConfig& cfg, const Trajectories& data) {
  double sx = 0.0, sy = 0.0, n = 0.0;
  for (const auto& t : data)
    for (const auto& p : t.points) {
      sx += p.x;
      sy += p.y;
      n += 1.0;
    }
  if (n == 0.0) throw DataError("fit_normalization: no points");
  cfg.origin_x = sx / n;
  cfg.origin_y = sy / n;
  double v = 0.0;
  for (const auto& t : data)
    for (const auto& p : t.points) v += (p.x - cfg.origin_x) * (p.x - cfg.origin_x) + (p.y - cfg.origin_y) * (p.y - cfg.origin_y);
  const double scale = std::sqrt(v / (2.0 * n));
  cfg.coord_scale = scale > 0.0 ? scale : 1.0;
}

struct ProbeGrid {
  std::size_t rows = 0, cols = 0;
  Trajectories cells;  ///< row-major
  std::optional<double> within_row_mde;
  std::optional<double> within_col_mde;

  const Trajectory& at(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }
};

inline double pair_mde(const Trajectory& a, const Trajectory& b) { return mde({a}, {b}); }

/// Rows share one draw of f, columns share one draw of the z noise.
inline ProbeGrid probe_disentangle(const Model& model, std::size_t rows, std::size_t cols, std::size_t T, Rng& rng) {
  const ModelConfig& cfg = model.config();
  if (!cfg.has_f() || !cfg.has_z())
    throw std::invalid_argument("probe: variant " + to_string(cfg.variant) + " lacks f or z, nothing to cross");
  if (rows == 0 || cols == 0) throw std::invalid_argument("probe: rows and cols must be positive");
  const Mat f = gaussian_noise(rng, rows, cfg.f_dim);
  std::vector<Mat> z;
  for (std::size_t t = 0; t < T; ++t) z.push_back(gaussian_noise(rng, cols, cfg.z_dim));

  const std::size_t n = rows * cols;
  Noise noise;
  noise.f.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.f_dim));
  noise.z.assign(T, Mat(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.z_dim)));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const auto i = static_cast<Eigen::Index>(r * cols + c);
      noise.f.row(i) = f.row(static_cast<Eigen::Index>(r));
      for (std::size_t t = 0; t < T; ++t) noise.z[t].row(i) = z[t].row(static_cast<Eigen::Index>(c));
    }

  ProbeGrid g;
  g.rows = rows;
  g.cols = cols;
  g.cells = model.synthesize_with(noise, n, T);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) g.cells[r * cols + c].id = "r" + std::to_string(r) + "c" + std::to_string(c);

  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t a = 0; a < cols; ++a)
      for (std::size_t b = a + 1; b < cols; ++b, ++count) sum += pair_mde(g.at(r, a), g.at(r, b));
  if (count) g.within_row_mde = sum / static_cast<double>(count);
  sum = 0.0;
  count = 0;
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t a = 0; a < rows; ++a)
      for (std::size_t b = a + 1; b < rows; ++b, ++count) sum += pair_mde(g.at(a, c), g.at(b, c));
  if (count) g.within_col_mde = sum / static_cast<double>(count);
  return g;
}

inline nlohmann::json to_json(const ProbeGrid& g) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) {
      nlohmann::json j = to_json(g.at(r, c));
      j["row"] = r;
      j["col"] = c;
      cells.push_back(std::move(j));
    }
  return {{"rows", g.rows}, {"cols", g.cols}, {"within_row_mde", opt(g.within_row_mde)},
          {"within_col_mde", opt(g.within_col_mde)}, {"cells", std::move(cells)}};
}

/// Uniform random walk: start points drawn from the reference set, uniform
/// heading per step, step length uniform in [0, longest reference step].
inline Trajectories random_walk_corpus(const Trajectories& reference, std::size_t n, std::size_t T, Rng& rng) {
  if (reference.empty()) throw std::invalid_argument("random walk: empty reference set");
  double longest = 0.0;
  for (const auto& t : reference)
    for (std::size_t i = 1; i < t.size(); ++i) longest = std::max(longest, distance(t.points[i - 1], t.points[i]));
  std::uniform_int_distribution<std::size_t> pick(0, reference.size() - 1);
  std::uniform_real_distribution<double> heading(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> step(0.0, longest);
  Trajectories out;
  for (std::size_t k = 0; k < n; ++k) {
    const Trajectory& ref = reference[pick(rng)];
    Trajectory t;
    t.id = "walk" + std::to_string(k);
    t.interval = ref.interval;
    Point p = ref.points.empty() ? Point{} : ref.points.front();
    for (std::size_t i = 0; i < T; ++i) {
      if (i > 0) {
        const double a = heading(rng), d = step(rng);
        p = {p.x + d * std::cos(a), p.y + d * std::sin(a)};
      }
      t.points.push_back(p);
    }
    out.push_back(std::move(t));
  }
  return out;
}

/// The four feature MMDs between two corpora; the grid spans `real`.
struct FeatureMmds {
  double angles = 0.0, segment_lengths = 0.0, total_length = 0.0, grid_counts = 0.0;

  double of(FeatureKind k) const {
    switch (k) {
      case FeatureKind::angles: return angles;
      case FeatureKind::segment_lengths: return segment_lengths;
      case FeatureKind::total_length: return total_length;
      case FeatureKind::grid_counts: return grid_counts;
    }
    return 0.0;
  }
};

inline FeatureMmds feature_mmds(const Trajectories& real, const Trajectories& generated, const GridSpec& grid) {
  FeatureMmds m;
  for (FeatureKind k : kAllFeatures) {
    const FeatureSet a = extract_features(k, real, &grid);
    const FeatureSet b = extract_features(k, generated, &grid);
    if (!a.rejected.empty() || !b.rejected.empty())
      throw DataError("feature " + to_string(k) + ": " +
                      (a.rejected.empty() ? b.rejected.front() : a.rejected.front()));
    double v = 0.0;
    try {
      v = mmd(a, b);
    } catch (const std::invalid_argument& e) {
      throw DataError("feature " + to_string(k) + ": " + e.what());
    }
    switch (k) {
      case FeatureKind::angles: m.angles = v; break;
      case FeatureKind::segment_lengths: m.segment_lengths = v; break;
      case FeatureKind::total_length: m.total_length = v; break;
      case FeatureKind::grid_counts: m.grid_counts = v; break;
    }
  }
  return m;
}

struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> real, generated;
};

/// Shared bin edges over both sets' pooled feature values.
inline Histogram histogram(const Mat& real, const Mat& generated, std::size_t bins) {
  double lo = 1e300, hi = -1e300;
  for (const Mat* m : {&real, &generated})
    if (m->size()) {
      lo = std::min(lo, m->minCoeff());
      hi = std::max(hi, m->maxCoeff());
    }
  if (lo > hi) lo = hi = 0.0;
  if (hi == lo) hi = lo + 1.0;
  Histogram h;
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins));
  auto fill = [&](const Mat& m, std::vector<std::size_t>& counts) {
    counts.assign(bins, 0);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto b = static_cast<std::size_t>((m.data()[i] - lo) / (hi - lo) * static_cast<double>(bins));
      ++counts[std::min(b, bins - 1)];
    }
  };
  fill(real, h.real);
  fill(generated, h.generated);
  return h;
}

inline bool paired(const Trajectories& a, const Trajectories& b) {
  if (a.size() != b.size() || a.empty()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].size() != b[i].size()) return false;
  return true;
}

struct NamedConstraint {
  std::string name;
  ConstraintExpr expr;
};

/// Metrics report: MDE when the sets pair up, the four feature MMDs, VS of
/// both sets per constraint and histogram dumps.
inline nlohmann::json evaluate_report(const Trajectories& real, const Trajectories& generated, std::size_t grid_cells,
                                      const std::vector<NamedConstraint>& constraints, std::size_t bins = 20) {
  if (real.empty() || generated.empty()) throw DataError("evaluate: empty corpus");
  const GridSpec grid = GridSpec::around(real, grid_cells);
  nlohmann::json out;
  out["mde"] = paired(real, generated) ? nlohmann::json(mde(real, generated)) : nlohmann::json(nullptr);
  const FeatureMmds m = feature_mmds(real, generated, grid);
  for (FeatureKind k : kAllFeatures) out["mmd"][to_string(k)] = m.of(k);
  out["grid"] = {{"min_x", grid.min_x}, {"min_y", grid.min_y}, {"max_x", grid.max_x}, {"max_y", grid.max_y},
                 {"cells", grid.cells}};
  out["violation_score"] = nlohmann::json::object();
  for (const auto& c : constraints) {
    auto vs = [&](const Trajectories& data) {
      const ViolationCount n = count_violations({c.expr}, data);
      nlohmann::json j = {{"violated", n.violated}, {"evaluated", n.evaluated}};
      j["score"] = n.evaluated ? nlohmann::json(static_cast<double>(n.violated) / static_cast<double>(n.evaluated))
                               : nlohmann::json(nullptr);
      return j;
    };
    out["violation_score"][c.name] = {{"real", vs(real)}, {"generated", vs(generated)}};
  }
  for (FeatureKind k : kAllFeatures) {
    Mat a = extract_features(k, real, &grid).rows, b = extract_features(k, generated, &grid).rows;
    if (k == FeatureKind::grid_counts) {
      a = a.colwise().sum().eval();
      b = b.colwise().sum().eval();
      std::vector<double> ra(a.data(), a.data() + a.size()), rb(b.data(), b.data() + b.size());
      out["histograms"][to_string(k)] = {{"real", ra}, {"generated", rb}};
      continue;
    }
    const Histogram h = histogram(a, b, bins);
    out["histograms"][to_string(k)] = {{"edges", h.edges}, {"real", h.real}, {"generated", h.generated}};
  }
  return out;
}

}  // namespace stg
