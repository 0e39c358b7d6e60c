#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace stg {

inline constexpr double kSecondsPerHour = 3600.0;

class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Planar location in kilometres.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Fixed-cadence sequence of planar points. `times` is either empty or holds
/// one strictly increasing timestamp (seconds) per point.
struct Trajectory {
  std::string id;
  std::vector<Point> points;
  double interval = 15.0;
  std::vector<double> times;
  int label = -1;

  std::size_t size() const { return points.size(); }

  /// Seconds elapsed between points i and j (i < j).
  double elapsed(std::size_t i, std::size_t j) const {
    if (!times.empty()) return times[j] - times[i];
    return static_cast<double>(j - i) * interval;
  }
};

using Trajectories = std::vector<Trajectory>;

}  // namespace stg
