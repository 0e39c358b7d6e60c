#pragma once

// Spatiotemporal validity: kinematic features, constraint expressions with an
// indicator form and a hinge-penalty form, and the violation score.
//
// Steps are 0-based here: speed is defined from index 1, the turning cosine
// from index 2 (it needs three points). A leaf that cannot be evaluated at a
// step (too early, or a zero-length displacement) reports nothing there; it
// is neither penalized nor counted.

#include "stg/autodiff.hpp"
#include "stg/trajectory.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace stg {

struct KinematicFeatures {
  std::vector<std::optional<double>> speed;  ///< km/h, from index 1
  std::vector<std::optional<double>> turn;   ///< cosine of consecutive displacements, from index 2
};

inline KinematicFeatures kinematics(const Trajectory& s) {
  const std::size_t n = s.size();
  if (n < 2) throw std::invalid_argument("kinematics: trajectory needs at least 2 points, got " + std::to_string(n));
  KinematicFeatures k;
  k.speed.assign(n, std::nullopt);
  k.turn.assign(n, std::nullopt);
  for (std::size_t t = 1; t < n; ++t) {
    const double dt = s.elapsed(t - 1, t);
    k.speed[t] = distance(s.points[t], s.points[t - 1]) / dt * kSecondsPerHour;
  }
  for (std::size_t t = 2; t < n; ++t) {
    const double ax = s.points[t].x - s.points[t - 1].x, ay = s.points[t].y - s.points[t - 1].y;
    const double bx = s.points[t - 1].x - s.points[t - 2].x, by = s.points[t - 1].y - s.points[t - 2].y;
    const double na = std::hypot(ax, ay), nb = std::hypot(bx, by);
    if (na == 0.0 || nb == 0.0) continue;
    k.turn[t] = std::clamp((ax * bx + ay * by) / (na * nb), -1.0, 1.0);
  }
  return k;
}

// ---------------------------------------------------------------------------
// Constraint expressions

struct Rect {
  double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;

  bool contains(const Point& p) const { return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax; }
  double distance_to(const Point& p) const {
    const double dx = std::max({xmin - p.x, 0.0, p.x - xmax});
    const double dy = std::max({ymin - p.y, 0.0, p.y - ymax});
    return std::hypot(dx, dy);
  }
};

/// How the turn thresholds are read. `sharp`: a turn is sharp when its cosine
/// falls below the threshold. `literal`: the (eta - threshold)_+ form,
/// with the double-U-turn factor repeated on the same step.
enum class TurnSense { sharp, literal };

struct ConstraintExpr {
  enum class Kind { region, speed_limit, sharp_turn_at_speed, double_u_turn, cumulative_sharpness, all_of, any_of };

  Kind kind = Kind::speed_limit;
  std::vector<Rect> rects;
  double speed_kmh = 60.0;
  double cos_threshold = -0.5;
  double budget = 0.0;
  TurnSense sense = TurnSense::sharp;
  std::vector<ConstraintExpr> args;

  static ConstraintExpr region(std::vector<Rect> rects) {
    if (rects.empty()) throw std::invalid_argument("region: rectangle union must be nonempty");
    ConstraintExpr e;
    e.kind = Kind::region;
    e.rects = std::move(rects);
    return e;
  }
  static ConstraintExpr speed_limit(double kmh) {
    ConstraintExpr e;
    e.kind = Kind::speed_limit;
    e.speed_kmh = kmh;
    return e;
  }
  /// Physics-induced: no sharp turn while faster than `kmh`.
  static ConstraintExpr sharp_turn_at_speed(double kmh = 60.0, double cos_threshold = -0.5,
                                            TurnSense sense = TurnSense::sharp) {
    ConstraintExpr e;
    e.kind = Kind::sharp_turn_at_speed;
    e.speed_kmh = kmh;
    e.cos_threshold = cos_threshold;
    e.sense = sense;
    return e;
  }
  /// Behavior-induced: no two consecutive sharp turns.
  static ConstraintExpr double_u_turn(double cos_threshold = -std::sqrt(3.0) / 2.0,
                                      TurnSense sense = TurnSense::sharp) {
    ConstraintExpr e;
    e.kind = Kind::double_u_turn;
    e.cos_threshold = cos_threshold;
    e.sense = sense;
    return e;
  }
  /// Sum over interior points of cos(back vector, forward vector) must stay within `budget`.
  static ConstraintExpr cumulative_sharpness(double budget) {
    ConstraintExpr e;
    e.kind = Kind::cumulative_sharpness;
    e.budget = budget;
    return e;
  }
  static ConstraintExpr all_of(ConstraintExpr a, ConstraintExpr b) {
    ConstraintExpr e;
    e.kind = Kind::all_of;
    e.args = {std::move(a), std::move(b)};
    return e;
  }
  static ConstraintExpr any_of(ConstraintExpr a, ConstraintExpr b) {
    ConstraintExpr e;
    e.kind = Kind::any_of;
    e.args = {std::move(a), std::move(b)};
    return e;
  }

  void validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    switch (kind) {
      case Kind::region:
        if (rects.empty()) throw std::invalid_argument("region: rectangle union must be nonempty");
        for (const Rect& r : rects)
          if (!finite(r.xmin) || !finite(r.xmax) || !finite(r.ymin) || !finite(r.ymax) || r.xmin > r.xmax ||
              r.ymin > r.ymax)
            throw std::invalid_argument("region: malformed rectangle");
        break;
      case Kind::speed_limit:
      case Kind::sharp_turn_at_speed:
      case Kind::double_u_turn:
      case Kind::cumulative_sharpness:
        if (!finite(speed_kmh) || !finite(cos_threshold) || !finite(budget))
          throw std::invalid_argument("constraint thresholds must be finite");
        break;
      case Kind::all_of:
      case Kind::any_of:
        if (args.size() != 2) throw std::invalid_argument("and/or take exactly two operands");
        for (const auto& a : args) a.validate();
        break;
    }
  }
};

namespace detail {

inline double turn_deficit(double eta, double threshold, TurnSense sense) {
  return sense == TurnSense::sharp ? threshold - eta : eta - threshold;
}

inline double positive(double v) { return v > 0.0 ? v : 0.0; }

}  // namespace detail

/// Per-step physics penalty (speed - limit)_+ * (threshold - eta)_+; evaluable from index 2.
inline std::vector<std::optional<double>> physics_hinge(const Trajectory& s, double speed_kmh = 60.0,
                                                        double cos_threshold = -0.5,
                                                        TurnSense sense = TurnSense::sharp) {
  const KinematicFeatures k = kinematics(s);
  std::vector<std::optional<double>> out(s.size());
  for (std::size_t t = 2; t < s.size(); ++t) {
    if (!k.turn[t]) continue;
    out[t] = detail::positive(*k.speed[t] - speed_kmh) *
             detail::positive(detail::turn_deficit(*k.turn[t], cos_threshold, sense));
  }
  return out;
}

/// Per-step behavior penalty over the consecutive turn pair (t-1, t); evaluable from index 3.
inline std::vector<std::optional<double>> behavior_hinge(const Trajectory& s,
                                                         double cos_threshold = -std::sqrt(3.0) / 2.0,
                                                         TurnSense sense = TurnSense::sharp) {
  std::vector<std::optional<double>> out(s.size());
  if (s.size() < 4) return out;
  const KinematicFeatures k = kinematics(s);
  for (std::size_t t = 3; t < s.size(); ++t) {
    if (!k.turn[t] || !k.turn[t - 1]) continue;
    const double previous = sense == TurnSense::sharp ? *k.turn[t - 1] : *k.turn[t];
    out[t] = detail::positive(detail::turn_deficit(previous, cos_threshold, sense)) *
             detail::positive(detail::turn_deficit(*k.turn[t], cos_threshold, sense));
  }
  return out;
}

/// Hinge form of an expression: per-step penalty, absent where not evaluable.
inline std::vector<std::optional<double>> hinge(const ConstraintExpr& e, const Trajectory& s) {
  using Kind = ConstraintExpr::Kind;
  const std::size_t n = s.size();
  std::vector<std::optional<double>> out(n);
  switch (e.kind) {
    case Kind::region:
      for (std::size_t t = 0; t < n; ++t) {
        double best = std::numeric_limits<double>::infinity();
        for (const Rect& r : e.rects) best = std::min(best, r.distance_to(s.points[t]));
        out[t] = best;
      }
      return out;
    case Kind::speed_limit: {
      if (n < 2) return out;
      const KinematicFeatures k = kinematics(s);
      for (std::size_t t = 1; t < n; ++t) out[t] = detail::positive(*k.speed[t] - e.speed_kmh);
      return out;
    }
    case Kind::sharp_turn_at_speed:
      return n < 3 ? out : physics_hinge(s, e.speed_kmh, e.cos_threshold, e.sense);
    case Kind::double_u_turn:
      return n < 4 ? out : behavior_hinge(s, e.cos_threshold, e.sense);
    case Kind::cumulative_sharpness: {
      if (n < 3) return out;
      const KinematicFeatures k = kinematics(s);
      double total = 0.0;
      bool any = false;
      for (std::size_t t = 2; t < n; ++t) {
        if (!k.turn[t]) continue;
        total += -*k.turn[t];
        any = true;
      }
      if (any) out[n - 1] = detail::positive(total - e.budget);
      return out;
    }
    case Kind::all_of:
    case Kind::any_of: {
      const auto a = hinge(e.args.at(0), s);
      const auto b = hinge(e.args.at(1), s);
      for (std::size_t t = 0; t < n; ++t) {
        if (a[t] && b[t])
          out[t] = e.kind == Kind::all_of ? *a[t] + *b[t] : *a[t] * *b[t];
        else if (a[t])
          out[t] = a[t];
        else
          out[t] = b[t];
      }
      return out;
    }
  }
  return out;
}

/// Indicator form: per-step `true` when the step violates, absent where not
/// evaluable. Evaluated from the defining inequalities, not from the hinge.
inline std::vector<std::optional<bool>> violations(const ConstraintExpr& e, const Trajectory& s) {
  using Kind = ConstraintExpr::Kind;
  const std::size_t n = s.size();
  std::vector<std::optional<bool>> out(n);
  auto sharp = [&](double eta) {
    return e.sense == TurnSense::sharp ? eta < e.cos_threshold : eta > e.cos_threshold;
  };
  switch (e.kind) {
    case Kind::region:
      for (std::size_t t = 0; t < n; ++t)
        out[t] = std::none_of(e.rects.begin(), e.rects.end(), [&](const Rect& r) { return r.contains(s.points[t]); });
      return out;
    case Kind::speed_limit: {
      if (n < 2) return out;
      const KinematicFeatures k = kinematics(s);
      for (std::size_t t = 1; t < n; ++t) out[t] = *k.speed[t] > e.speed_kmh;
      return out;
    }
    case Kind::sharp_turn_at_speed: {
      if (n < 3) return out;
      const KinematicFeatures k = kinematics(s);
      for (std::size_t t = 2; t < n; ++t)
        if (k.turn[t]) out[t] = *k.speed[t] > e.speed_kmh && sharp(*k.turn[t]);
      return out;
    }
    case Kind::double_u_turn: {
      if (n < 4) return out;
      const KinematicFeatures k = kinematics(s);
      for (std::size_t t = 3; t < n; ++t)
        if (k.turn[t] && k.turn[t - 1])
          out[t] = e.sense == TurnSense::sharp ? sharp(*k.turn[t - 1]) && sharp(*k.turn[t]) : sharp(*k.turn[t]);
      return out;
    }
    case Kind::cumulative_sharpness: {
      if (n < 3) return out;
      const KinematicFeatures k = kinematics(s);
      double total = 0.0;
      bool any = false;
      for (std::size_t t = 2; t < n; ++t) {
        if (!k.turn[t]) continue;
        total += -*k.turn[t];
        any = true;
      }
      if (any) out[n - 1] = total > e.budget;
      return out;
    }
    case Kind::all_of:
    case Kind::any_of: {
      const auto a = violations(e.args.at(0), s);
      const auto b = violations(e.args.at(1), s);
      for (std::size_t t = 0; t < n; ++t) {
        if (a[t] && b[t])
          out[t] = e.kind == Kind::all_of ? (*a[t] || *b[t]) : (*a[t] && *b[t]);
        else if (a[t])
          out[t] = a[t];
        else
          out[t] = b[t];
      }
      return out;
    }
  }
  return out;
}

struct IndicatorResult {
  std::vector<std::optional<bool>> step_violated;
  bool valid = true;
};

inline IndicatorResult indicator(const ConstraintExpr& e, const Trajectory& s) {
  IndicatorResult r;
  r.step_violated = violations(e, s);
  r.valid = std::none_of(r.step_violated.begin(), r.step_violated.end(),
                         [](const std::optional<bool>& v) { return v.value_or(false); });
  return r;
}

struct ViolationCount {
  std::size_t violated = 0;
  std::size_t evaluated = 0;
};

inline ViolationCount count_violations(const std::vector<ConstraintExpr>& exprs, const Trajectories& trajectories) {
  ViolationCount c;
  for (const auto& e : exprs)
    for (const auto& s : trajectories)
      for (const auto& v : violations(e, s)) {
        if (!v) continue;
        ++c.evaluated;
        if (*v) ++c.violated;
      }
  return c;
}

/// Fraction of evaluated per-step indicator checks that are violated.
inline double violation_score(const std::vector<ConstraintExpr>& exprs, const Trajectories& trajectories) {
  const ViolationCount c = count_violations(exprs, trajectories);
  if (c.evaluated == 0) throw std::invalid_argument("violation_score: no evaluable steps");
  return static_cast<double>(c.violated) / static_cast<double>(c.evaluated);
}

// ---------------------------------------------------------------------------
// Differentiable hinge over a batch of trajectories on a tape. `steps[t]` is a
// [J, 2] tensor of kilometre coordinates. Each evaluable step yields a [J, 1]
// penalty and a constant [J, 1] mask (1 where the row is evaluable).

struct StepPenalty {
  Tensor value;
  Mat mask;
};

namespace detail {

inline Tensor constant_like(Tape& tape, const Mat& m) {
  return tape.leaf(m, Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
}

struct BatchKinematics {
  std::vector<std::optional<Tensor>> speed;  // [J,1]
  std::vector<std::optional<Tensor>> turn;   // [J,1], zero where degenerate
  std::vector<Mat> turn_mask;
};

// sqrt(x) with x >= 0 and a zero-safe gradient: rows where x == 0 get
// sqrt(x + 1) - 1 = 0 instead.
inline Tensor safe_norm(Tape& tape, const Tensor& squared, Mat* zero_rows = nullptr) {
  const Mat zero = (squared.value().array() == 0.0).cast<double>().matrix();
  if (zero_rows) *zero_rows = zero;
  const Tensor z = constant_like(tape, zero);
  return sub(sqrt(add(squared, z)), z);
}

inline BatchKinematics batch_kinematics(const std::vector<Tensor>& steps, double interval) {
  const std::size_t n = steps.size();
  BatchKinematics k;
  k.speed.resize(n);
  k.turn.resize(n);
  k.turn_mask.resize(n);
  if (n < 2) return k;
  Tape& tape = *steps.front().tape();
  std::vector<Tensor> disp(n), len(n);
  std::vector<Mat> zero_len(n);
  for (std::size_t t = 1; t < n; ++t) {
    disp[t] = sub(steps[t], steps[t - 1]);
    len[t] = safe_norm(tape, sum_last(square(disp[t])), &zero_len[t]);
    k.speed[t] = scale(len[t], kSecondsPerHour / interval);
  }
  for (std::size_t t = 2; t < n; ++t) {
    const Mat degenerate = zero_len[t].cwiseMax(zero_len[t - 1]);
    const Tensor d = constant_like(tape, degenerate);
    const Tensor dot = sum_last(mul(disp[t], disp[t - 1]));
    const Tensor denom = add(mul(len[t], len[t - 1]), d);
    k.turn_mask[t] = (1.0 - degenerate.array()).matrix();
    k.turn[t] = mul(div(dot, denom), constant_like(tape, k.turn_mask[t]));
  }
  return k;
}

inline Tensor turn_deficit(const Tensor& eta, double threshold, TurnSense sense) {
  return sense == TurnSense::sharp ? shift(neg(eta), threshold) : shift(eta, -threshold);
}

}  // namespace detail

inline std::vector<std::optional<StepPenalty>> hinge(const ConstraintExpr& e, const std::vector<Tensor>& steps,
                                                     double interval) {
  using Kind = ConstraintExpr::Kind;
  const std::size_t n = steps.size();
  std::vector<std::optional<StepPenalty>> out(n);
  if (n == 0) return out;
  Tape& tape = *steps.front().tape();
  const auto rows = steps.front().value().rows();
  const Mat ones = Mat::Ones(rows, 1);
  switch (e.kind) {
    case Kind::region: {
      for (std::size_t t = 0; t < n; ++t) {
        const Tensor x = slice(steps[t], 0, 1), y = slice(steps[t], 1, 2);
        std::vector<Tensor> dists;
        for (const Rect& r : e.rects) {
          const Tensor dx = add(hinge(shift(neg(x), r.xmin)), hinge(shift(x, -r.xmax)));
          const Tensor dy = add(hinge(shift(neg(y), r.ymin)), hinge(shift(y, -r.ymax)));
          dists.push_back(detail::safe_norm(tape, add(square(dx), square(dy))));
        }
        Mat pick = Mat::Zero(rows, static_cast<Eigen::Index>(dists.size()));
        for (Eigen::Index i = 0; i < rows; ++i) {
          std::size_t best = 0;
          for (std::size_t r = 1; r < dists.size(); ++r)
            if (dists[r].value()(i, 0) < dists[best].value()(i, 0)) best = r;
          pick(i, static_cast<Eigen::Index>(best)) = 1.0;
        }
        Tensor total = mul(dists[0], detail::constant_like(tape, pick.col(0)));
        for (std::size_t r = 1; r < dists.size(); ++r)
          total = add(total, mul(dists[r], detail::constant_like(tape, pick.col(static_cast<Eigen::Index>(r)))));
        out[t] = StepPenalty{total, ones};
      }
      return out;
    }
    case Kind::speed_limit: {
      const auto k = detail::batch_kinematics(steps, interval);
      for (std::size_t t = 1; t < n; ++t) out[t] = StepPenalty{hinge(shift(*k.speed[t], -e.speed_kmh)), ones};
      return out;
    }
    case Kind::sharp_turn_at_speed: {
      const auto k = detail::batch_kinematics(steps, interval);
      for (std::size_t t = 2; t < n; ++t) {
        const Tensor fast = hinge(shift(*k.speed[t], -e.speed_kmh));
        const Tensor sharp = hinge(detail::turn_deficit(*k.turn[t], e.cos_threshold, e.sense));
        out[t] = StepPenalty{mul(mul(fast, sharp), detail::constant_like(tape, k.turn_mask[t])), k.turn_mask[t]};
      }
      return out;
    }
    case Kind::double_u_turn: {
      const auto k = detail::batch_kinematics(steps, interval);
      for (std::size_t t = 3; t < n; ++t) {
        const Mat mask = k.turn_mask[t].cwiseProduct(k.turn_mask[t - 1]);
        const Tensor& previous = e.sense == TurnSense::sharp ? *k.turn[t - 1] : *k.turn[t];
        const Tensor a = hinge(detail::turn_deficit(previous, e.cos_threshold, e.sense));
        const Tensor b = hinge(detail::turn_deficit(*k.turn[t], e.cos_threshold, e.sense));
        out[t] = StepPenalty{mul(mul(a, b), detail::constant_like(tape, mask)), mask};
      }
      return out;
    }
    case Kind::cumulative_sharpness: {
      if (n < 3) return out;
      const auto k = detail::batch_kinematics(steps, interval);
      Tensor total = neg(*k.turn[2]);
      Mat any = k.turn_mask[2];
      for (std::size_t t = 3; t < n; ++t) {
        total = sub(total, *k.turn[t]);
        any = any.cwiseMax(k.turn_mask[t]);
      }
      out[n - 1] = StepPenalty{mul(hinge(shift(total, -e.budget)), detail::constant_like(tape, any)), any};
      return out;
    }
    case Kind::all_of:
    case Kind::any_of: {
      const auto a = hinge(e.args.at(0), steps, interval);
      const auto b = hinge(e.args.at(1), steps, interval);
      for (std::size_t t = 0; t < n; ++t) {
        if (a[t] && b[t]) {
          const Mat& ma = a[t]->mask;
          const Mat& mb = b[t]->mask;
          if (e.kind == Kind::all_of) {
            out[t] = StepPenalty{add(a[t]->value, b[t]->value), ma.cwiseMax(mb)};
          } else {
            // Rows where only one side is evaluable take that side alone.
            const Mat both = ma.cwiseProduct(mb);
            const Mat only_a = ma - both, only_b = mb - both;
            Tensor v = mul(mul(a[t]->value, b[t]->value), detail::constant_like(tape, both));
            v = add(v, mul(a[t]->value, detail::constant_like(tape, only_a)));
            v = add(v, mul(b[t]->value, detail::constant_like(tape, only_b)));
            out[t] = StepPenalty{v, ma.cwiseMax(mb)};
          }
        } else if (a[t]) {
          out[t] = a[t];
        } else {
          out[t] = b[t];
        }
      }
      return out;
    }
  }
  return out;
}

/// Mean penalty over all evaluable (row, step) entries; zero when nothing is evaluable.
inline Tensor mean_penalty(const std::vector<std::optional<StepPenalty>>& steps, Tape& tape) {
  Tensor total = tape.scalar(0.0);
  double count = 0.0;
  for (const auto& s : steps) {
    if (!s) continue;
    total = add(total, sum(s->value));
    count += s->mask.sum();
  }
  return count > 0.0 ? scale(total, 1.0 / count) : total;
}

/// Sample-and-step mean of the hinge of `e`. An "and" node sums its children's
/// means, each over its own evaluable steps, so adding a conjunct never lowers it.
inline Tensor mean_penalty(const ConstraintExpr& e, const std::vector<Tensor>& steps, double interval, Tape& tape) {
  if (e.kind == ConstraintExpr::Kind::all_of)
    return add(mean_penalty(e.args.at(0), steps, interval, tape), mean_penalty(e.args.at(1), steps, interval, tape));
  return mean_penalty(hinge(e, steps, interval), tape);
}

// ---------------------------------------------------------------------------
// JSON documents:
//   {"schema_version":1,"op":"and","args":[{"leaf":"speed-limit","kmh":60}, ...]}
// Leaves: region {"rects":[[xmin,ymin,xmax,ymax],...]}, speed-limit {"kmh"},
// sharp-turn-at-speed {"kmh","cos","sense"?}, double-u-turn {"cos","sense"?},
// cumulative-sharpness {"budget"}. "sense" is "sharp" (default) or "literal".

inline constexpr int kConstraintSchemaVersion = 1;

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }))
      throw std::invalid_argument("constraint document: unknown key '" + it.key() + "'");
  }
}

inline TurnSense parse_sense(const nlohmann::json& j) {
  if (!j.contains("sense")) return TurnSense::sharp;
  const std::string s = j.at("sense").get<std::string>();
  if (s == "sharp") return TurnSense::sharp;
  if (s == "literal") return TurnSense::literal;
  throw std::invalid_argument("constraint document: unknown sense '" + s + "'");
}

inline ConstraintExpr constraint_from_json(const nlohmann::json& j, bool root) {
  if (!j.is_object()) throw std::invalid_argument("constraint document: expected an object");
  if (root && j.contains("schema_version") && j.at("schema_version").get<int>() != kConstraintSchemaVersion)
    throw std::invalid_argument("constraint document: unsupported schema_version");
  ConstraintExpr e;
  if (j.contains("op")) {
    reject_unknown_keys(j, {"op", "args", "schema_version"});
    const std::string op = j.at("op").get<std::string>();
    const auto& args = j.at("args");
    if (!args.is_array() || args.size() != 2) throw std::invalid_argument("constraint document: op takes two args");
    ConstraintExpr a = constraint_from_json(args[0], false), b = constraint_from_json(args[1], false);
    if (op == "and") return ConstraintExpr::all_of(std::move(a), std::move(b));
    if (op == "or") return ConstraintExpr::any_of(std::move(a), std::move(b));
    throw std::invalid_argument("constraint document: unknown op '" + op + "'");
  }
  const std::string leaf = j.at("leaf").get<std::string>();
  if (leaf == "region") {
    reject_unknown_keys(j, {"leaf", "rects", "schema_version"});
    std::vector<Rect> rects;
    for (const auto& r : j.at("rects")) {
      if (!r.is_array() || r.size() != 4) throw std::invalid_argument("constraint document: rect needs 4 numbers");
      rects.push_back(Rect{r[0].get<double>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>()});
    }
    e = ConstraintExpr::region(std::move(rects));
  } else if (leaf == "speed-limit") {
    reject_unknown_keys(j, {"leaf", "kmh", "schema_version"});
    e = ConstraintExpr::speed_limit(j.at("kmh").get<double>());
  } else if (leaf == "sharp-turn-at-speed") {
    reject_unknown_keys(j, {"leaf", "kmh", "cos", "sense", "schema_version"});
    e = ConstraintExpr::sharp_turn_at_speed(j.value("kmh", 60.0), j.value("cos", -0.5), parse_sense(j));
  } else if (leaf == "double-u-turn") {
    reject_unknown_keys(j, {"leaf", "cos", "sense", "schema_version"});
    e = ConstraintExpr::double_u_turn(j.value("cos", -std::sqrt(3.0) / 2.0), parse_sense(j));
  } else if (leaf == "cumulative-sharpness") {
    reject_unknown_keys(j, {"leaf", "budget", "schema_version"});
    e = ConstraintExpr::cumulative_sharpness(j.at("budget").get<double>());
  } else {
    throw std::invalid_argument("constraint document: unknown leaf '" + leaf + "'");
  }
  return e;
}

inline nlohmann::json constraint_to_json_inner(const ConstraintExpr& e) {
  using Kind = ConstraintExpr::Kind;
  nlohmann::json j;
  auto sense = [](TurnSense s) { return s == TurnSense::sharp ? "sharp" : "literal"; };
  switch (e.kind) {
    case Kind::region: {
      j["leaf"] = "region";
      j["rects"] = nlohmann::json::array();
      for (const Rect& r : e.rects) j["rects"].push_back({r.xmin, r.ymin, r.xmax, r.ymax});
      break;
    }
    case Kind::speed_limit:
      j["leaf"] = "speed-limit";
      j["kmh"] = e.speed_kmh;
      break;
    case Kind::sharp_turn_at_speed:
      j["leaf"] = "sharp-turn-at-speed";
      j["kmh"] = e.speed_kmh;
      j["cos"] = e.cos_threshold;
      j["sense"] = sense(e.sense);
      break;
    case Kind::double_u_turn:
      j["leaf"] = "double-u-turn";
      j["cos"] = e.cos_threshold;
      j["sense"] = sense(e.sense);
      break;
    case Kind::cumulative_sharpness:
      j["leaf"] = "cumulative-sharpness";
      j["budget"] = e.budget;
      break;
    case Kind::all_of:
    case Kind::any_of:
      j["op"] = e.kind == Kind::all_of ? "and" : "or";
      j["args"] = {constraint_to_json_inner(e.args.at(0)), constraint_to_json_inner(e.args.at(1))};
      break;
  }
  return j;
}

}  // namespace detail

inline ConstraintExpr constraint_from_json(const nlohmann::json& j) {
  ConstraintExpr e = detail::constraint_from_json(j, true);
  e.validate();
  return e;
}

inline nlohmann::json constraint_to_json(const ConstraintExpr& e) {
  nlohmann::json j = detail::constraint_to_json_inner(e);
  j["schema_version"] = kConstraintSchemaVersion;
  return j;
}

}  // namespace stg
