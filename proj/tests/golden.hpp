#pragma once

// Loader for the hand-enumerated constraint fixture.

#include "stg/trajectory.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace stg::support {

struct GoldenTrajectory {
  Trajectory trajectory;
  std::vector<std::optional<double>> physics, behavior;
  std::vector<std::optional<bool>> physics_violated, behavior_violated, speed_violated;
};

struct GoldenCount {
  std::size_t violated = 0, evaluated = 0;
};

struct GoldenFixture {
  double interval = 15.0;
  double physics_kmh = 60.0, physics_cos = -0.5, behavior_cos = -0.5;
  std::vector<GoldenTrajectory> cases;
  GoldenCount physics_vs, behavior_vs, speed_vs;

  Trajectories trajectories() const {
    Trajectories out;
    for (const auto& c : cases) out.push_back(c.trajectory);
    return out;
  }
};

inline GoldenFixture load_golden(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open fixture " + path);
  const nlohmann::json j = nlohmann::json::parse(in);
  GoldenFixture g;
  g.interval = j.at("interval").get<double>();
  g.physics_kmh = j.at("physics").at("kmh").get<double>();
  g.physics_cos = j.at("physics").at("cos").get<double>();
  g.behavior_cos = j.at("behavior").at("cos").get<double>();
  auto reals = [](const nlohmann::json& a, std::size_t n) {
    std::vector<std::optional<double>> v(n);
    if (a.is_null()) return v;
    for (std::size_t i = 0; i < n; ++i)
      if (!a.at(i).is_null()) v[i] = a.at(i).get<double>();
    return v;
  };
  auto flags = [](const nlohmann::json& a, std::size_t n) {
    std::vector<std::optional<bool>> v(n);
    if (a.is_null()) return v;
    for (std::size_t i = 0; i < n; ++i)
      if (!a.at(i).is_null()) v[i] = a.at(i).get<bool>();
    return v;
  };
  for (const auto& c : j.at("trajectories")) {
    GoldenTrajectory t;
    t.trajectory.id = c.at("id").get<std::string>();
    t.trajectory.interval = g.interval;
    for (const auto& p : c.at("points")) t.trajectory.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    const std::size_t n = t.trajectory.size();
    const nlohmann::json none;
    t.physics = reals(c.at("physics"), n);
    t.behavior = reals(c.at("behavior"), n);
    t.physics_violated = flags(c.at("physics_violated"), n);
    t.behavior_violated = flags(c.value("behavior_violated", none), n);
    t.speed_violated = flags(c.at("speed_violated"), n);
    g.cases.push_back(std::move(t));
  }
  auto count = [&](const char* key) {
    const auto& v = j.at("violation_score").at(key);
    return GoldenCount{v.at("violated").get<std::size_t>(), v.at("evaluated").get<std::size_t>()};
  };
  g.physics_vs = count("physics");
  g.behavior_vs = count("behavior");
  g.speed_vs = count("speed_limit");
  return g;
}

}  // namespace stg::support
