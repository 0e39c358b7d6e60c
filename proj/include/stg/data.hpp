#pragma once

// Data pipeline: raw GPS / check-in loaders, local projection to kilometres,
// noise filtering and stay-point merging, fixed-length windowing with a
// source-level train/test split, a labeled synthetic corpus, and the
// canonical JSON-lines corpus format.

#include "stg/trajectory.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace stg {

inline constexpr double kEarthRadiusKm = 6371.0088;

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
};

struct RawRecord {
  std::string id;
  std::vector<LonLat> points;
  std::vector<double> times;  ///< seconds; empty for fixed-cadence sources
};

enum class SourceFormat { porto_csv, tdrive_log, gowalla_checkins };

inline SourceFormat parse_source_format(const std::string& s) {
  if (s == "porto-csv") return SourceFormat::porto_csv;
  if (s == "tdrive-log") return SourceFormat::tdrive_log;
  if (s == "gowalla-checkins") return SourceFormat::gowalla_checkins;
  throw std::invalid_argument("unknown source format '" + s + "'");
}

struct BoundingBox {
  double min_lon = -180.0, min_lat = -90.0, max_lon = 180.0, max_lat = 90.0;
  bool contains(const LonLat& p) const {
    return p.lon >= min_lon && p.lon <= max_lon && p.lat >= min_lat && p.lat <= max_lat;
  }
};

struct LoadResult {
  std::vector<RawRecord> records;
  std::size_t rows = 0;
  std::size_t malformed = 0;
  std::size_t filtered_points = 0;   ///< outside the bounding box
  std::size_t duplicate_times = 0;   ///< dropped to keep timestamps strictly increasing
  std::vector<std::string> warnings;
};

namespace detail {

/// Splits one CSV line honoring double quotes ("" escapes a quote).
inline std::vector<std::string> split_csv(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == sep) {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline double parse_double(const std::string& s) {
  std::size_t used = 0;
  const std::string t = trim(s);
  const double v = std::stod(t, &used);
  if (used != t.size() || !std::isfinite(v)) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

// Days since 1970-01-01 for a proleptic Gregorian date.
inline std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

/// "YYYY-MM-DD HH:MM:SS" or "YYYY-MM-DDTHH:MM:SSZ" -> seconds since epoch (UTC).
inline double parse_timestamp(const std::string& raw) {
  const std::string s = trim(raw);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
  char sep = 0;
  if (std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &se) != 7 || (sep != ' ' && sep != 'T') ||
      mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || se > 60)
    throw std::invalid_argument("bad timestamp '" + raw + "'");
  return static_cast<double>(days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 +
                             h * 3600 + mi * 60 + se);
}

inline bool valid_lonlat(const LonLat& p) {
  return std::isfinite(p.lon) && std::isfinite(p.lat) && std::abs(p.lat) <= 90.0 && std::abs(p.lon) <= 180.0;
}

struct TimedPoint {
  double time;
  LonLat at;
};

inline void finish_timed(std::map<std::string, std::vector<TimedPoint>>& groups, LoadResult& result) {
  for (auto& [id, pts] : groups) {
    std::stable_sort(pts.begin(), pts.end(), [](const TimedPoint& a, const TimedPoint& b) { return a.time < b.time; });
    RawRecord r;
    r.id = id;
    for (const TimedPoint& p : pts) {
      if (!r.times.empty() && p.time <= r.times.back()) {
        ++result.duplicate_times;
        continue;
      }
      r.times.push_back(p.time);
      r.points.push_back(p.at);
    }
    if (!r.points.empty()) result.records.push_back(std::move(r));
  }
}

inline void check_malformed(const LoadResult& r, const std::string& path) {
  if (r.rows > 0 && 2 * r.malformed > r.rows) {
    throw DataError(path + ": " + std::to_string(r.malformed) + " of " + std::to_string(r.rows) +
                    " rows are malformed");
  }
}

}  // namespace detail

/// porto-csv: header row, one trip per row, POLYLINE column holding a JSON
/// array of [lon, lat] pairs at a fixed 15 s cadence.
inline LoadResult load_porto(std::istream& in, const std::string& path = "<stream>",
                             const std::optional<BoundingBox>& box = std::nullopt) {
  LoadResult result;
  std::string line;
  if (!std::getline(in, line)) {
    result.warnings.push_back(path + ": empty file, no records");
    return result;
  }
  const auto header = detail::split_csv(line);
  std::size_t poly = header.size() - 1, trip = 0;
  bool has_trip = false;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string h = detail::trim(header[i]);
    if (h == "POLYLINE") poly = i;
    if (h == "TRIP_ID") {
      trip = i;
      has_trip = true;
    }
  }
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++result.rows;
    try {
      const auto cols = detail::split_csv(line);
      if (cols.size() != header.size()) throw std::invalid_argument("column count");
      const auto arr = nlohmann::json::parse(cols[poly]);
      if (!arr.is_array()) throw std::invalid_argument("polyline");
      RawRecord r;
      r.id = has_trip ? detail::trim(cols[trip]) : std::to_string(result.rows);
      for (const auto& p : arr) {
        if (!p.is_array() || p.size() != 2) throw std::invalid_argument("point");
        LonLat ll{p[0].get<double>(), p[1].get<double>()};
        if (!detail::valid_lonlat(ll)) throw std::invalid_argument("coordinate range");
        if (box && !box->contains(ll)) {
          ++result.filtered_points;
          continue;
        }
        r.points.push_back(ll);
      }
      if (!r.points.empty()) result.records.push_back(std::move(r));
    } catch (const std::exception&) {
      ++result.malformed;
    }
  }
  if (result.rows == 0) result.warnings.push_back(path + ": no data rows, no records");
  detail::check_malformed(result, path);
  return result;
}

/// tdrive-log: `id,timestamp,lon,lat` lines, grouped per taxi and ordered by time.
inline LoadResult load_tdrive(std::istream& in, const std::string& path = "<stream>",
                              const std::optional<BoundingBox>& box = std::nullopt) {
  LoadResult result;
  std::map<std::string, std::vector<detail::TimedPoint>> groups;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++result.rows;
    try {
      const auto cols = detail::split_csv(line);
      if (cols.size() != 4) throw std::invalid_argument("column count");
      LonLat ll{detail::parse_double(cols[2]), detail::parse_double(cols[3])};
      if (!detail::valid_lonlat(ll)) throw std::invalid_argument("coordinate range");
      const double t = detail::parse_timestamp(cols[1]);
      if (box && !box->contains(ll)) {
        ++result.filtered_points;
        continue;
      }
      groups[detail::trim(cols[0])].push_back({t, ll});
    } catch (const std::exception&) {
      ++result.malformed;
    }
  }
  if (result.rows == 0) result.warnings.push_back(path + ": empty file, no records");
  detail::check_malformed(result, path);
  detail::finish_timed(groups, result);
  return result;
}

/// gowalla-checkins: `user,timestamp,lat,lon,location-id` (comma or tab separated).
inline LoadResult load_gowalla(std::istream& in, const std::string& path = "<stream>",
                               const std::optional<BoundingBox>& box = std::nullopt) {
  LoadResult result;
  std::map<std::string, std::vector<detail::TimedPoint>> groups;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++result.rows;
    try {
      const char sep = line.find('\t') != std::string::npos ? '\t' : ',';
      const auto cols = detail::split_csv(line, sep);
      if (cols.size() != 5) throw std::invalid_argument("column count");
      LonLat ll{detail::parse_double(cols[3]), detail::parse_double(cols[2])};
      if (!detail::valid_lonlat(ll)) throw std::invalid_argument("coordinate range");
      const double t = detail::parse_timestamp(cols[1]);
      if (box && !box->contains(ll)) {
        ++result.filtered_points;
        continue;
      }
      groups[detail::trim(cols[0])].push_back({t, ll});
    } catch (const std::exception&) {
      ++result.malformed;
    }
  }
  if (result.rows == 0) result.warnings.push_back(path + ": empty file, no records");
  detail::check_malformed(result, path);
  detail::finish_timed(groups, result);
  return result;
}

inline LoadResult load(SourceFormat format, const std::string& path,
                       const std::optional<BoundingBox>& box = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  switch (format) {
    case SourceFormat::porto_csv: return load_porto(in, path, box);
    case SourceFormat::tdrive_log: return load_tdrive(in, path, box);
    case SourceFormat::gowalla_checkins: return load_gowalla(in, path, box);
  }
  return {};
}

// ---------------------------------------------------------------------------
// Projection

/// Equirectangular projection about an origin, in kilometres.
struct ProjectionSpec {
  LonLat origin;
  double radius_km = kEarthRadiusKm;

  Point project(const LonLat& p) const {
    constexpr double rad = std::numbers::pi / 180.0;
    return {radius_km * (p.lon - origin.lon) * std::cos(origin.lat * rad) * rad, radius_km * (p.lat - origin.lat) * rad};
  }

  LonLat unproject(const Point& p) const {
    constexpr double rad = std::numbers::pi / 180.0;
    return {origin.lon + p.x / (radius_km * std::cos(origin.lat * rad) * rad), origin.lat + p.y / (radius_km * rad)};
  }
};

/// Centre of the records' bounding box.
inline LonLat bbox_center(const std::vector<RawRecord>& records) {
  double min_lon = 180, max_lon = -180, min_lat = 90, max_lat = -90;
  bool any = false;
  for (const auto& r : records)
    for (const auto& p : r.points) {
      min_lon = std::min(min_lon, p.lon);
      max_lon = std::max(max_lon, p.lon);
      min_lat = std::min(min_lat, p.lat);
      max_lat = std::max(max_lat, p.lat);
      any = true;
    }
  if (!any) return {};
  return {(min_lon + max_lon) / 2.0, (min_lat + max_lat) / 2.0};
}

struct ProjectResult {
  Trajectories trajectories;
  std::size_t rejected = 0;
};

inline ProjectResult project(const ProjectionSpec& spec, const std::vector<RawRecord>& records, double interval = 15.0) {
  ProjectResult out;
  for (const auto& r : records) {
    if (!std::all_of(r.points.begin(), r.points.end(), detail::valid_lonlat)) {
      ++out.rejected;
      continue;
    }
    Trajectory t;
    t.id = r.id;
    t.interval = interval;
    t.times = r.times;
    for (const auto& p : r.points) t.points.push_back(spec.project(p));
    out.trajectories.push_back(std::move(t));
  }
  return out;
}

/// Great-circle distance in kilometres.
inline double haversine_km(const LonLat& a, const LonLat& b, double radius_km = kEarthRadiusKm) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * rad, dlon = (b.lon - a.lon) * rad;
  const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * radius_km * std::asin(std::min(1.0, std::sqrt(h)));
}

// ---------------------------------------------------------------------------
// Preprocessing, windowing, split

struct CorpusConfig {
  std::size_t T = 32;
  std::size_t stride = 32;
  double train_ratio = 0.9;
  std::uint64_t split_seed = 0;
  double max_speed_kmh = 180.0;
  double stay_radius_km = 0.1;
  double stay_dwell_s = 120.0;
  std::size_t min_points = 3;

  void validate() const {
    if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw std::invalid_argument("CorpusConfig: ratio must lie in (0, 1)");
    if (stride == 0) throw std::invalid_argument("CorpusConfig: stride must be >= 1");
    if (T < 3) throw std::invalid_argument("CorpusConfig: T must be >= 3");
  }
};

struct PreprocessStats {
  std::size_t noise_points = 0;
  std::size_t stay_points = 0;    ///< runs merged into a centroid
  std::size_t merged_points = 0;  ///< points absorbed by those runs
  std::size_t dropped_short = 0;
};

namespace detail {

struct IndexedPoint {
  Point at;
  double time;
};

}  // namespace detail

/// Drops points implying more than max speed from the last kept point, then
/// merges stay points (maximal runs within the radius of their first point
/// lasting at least the dwell) into their centroid.
inline Trajectories preprocess(const Trajectories& input, const CorpusConfig& cfg, PreprocessStats* stats = nullptr) {
  PreprocessStats local;
  PreprocessStats& st = stats ? *stats : local;
  Trajectories out;
  for (const Trajectory& s : input) {
    std::vector<detail::IndexedPoint> kept;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double time = s.times.empty() ? static_cast<double>(i) * s.interval : s.times[i];
      if (!kept.empty()) {
        const double dt = time - kept.back().time;
        if (dt <= 0.0 || distance(kept.back().at, s.points[i]) / dt * kSecondsPerHour > cfg.max_speed_kmh) {
          ++st.noise_points;
          continue;
        }
      }
      kept.push_back({s.points[i], time});
    }
    std::vector<detail::IndexedPoint> merged;
    for (std::size_t i = 0; i < kept.size();) {
      std::size_t j = i + 1;
      while (j < kept.size() && distance(kept[i].at, kept[j].at) <= cfg.stay_radius_km) ++j;
      if (j - i >= 2 && kept[j - 1].time - kept[i].time >= cfg.stay_dwell_s) {
        Point c;
        for (std::size_t k = i; k < j; ++k) {
          c.x += kept[k].at.x;
          c.y += kept[k].at.y;
        }
        c.x /= static_cast<double>(j - i);
        c.y /= static_cast<double>(j - i);
        merged.push_back({c, kept[i].time});
        ++st.stay_points;
        st.merged_points += j - i;
        i = j;
      } else {
        merged.push_back(kept[i]);
        ++i;
      }
    }
    if (merged.size() < cfg.min_points) {
      ++st.dropped_short;
      continue;
    }
    Trajectory t;
    t.id = s.id;
    t.interval = s.interval;
    t.label = s.label;
    for (const auto& p : merged) {
      t.points.push_back(p.at);
      if (!s.times.empty()) t.times.push_back(p.time);
    }
    out.push_back(std::move(t));
  }
  return out;
}

struct SplitStats {
  std::size_t sources = 0;
  std::size_t discarded_short = 0;
  std::size_t windows = 0;
  std::size_t train_sources = 0;
  std::size_t test_sources = 0;
};

struct Split {
  Trajectories train;
  Trajectories test;
  SplitStats stats;
};

class EmptySplitError : public DataError {
public:
  EmptySplitError(const std::string& what, SplitStats s) : DataError(what), stats(s) {}
  SplitStats stats;
};

/// Stable 64-bit key of (seed, id): FNV-1a followed by a splitmix64 finalizer.
inline std::uint64_t split_key(std::uint64_t seed, const std::string& id) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

inline Trajectories windows_of(const Trajectory& s, std::size_t T, std::size_t stride) {
  Trajectories out;
  for (std::size_t start = 0, k = 0; start + T <= s.size(); start += stride, ++k) {
    Trajectory w;
    w.id = s.id + "#" + std::to_string(k);
    w.interval = s.interval;
    w.label = s.label;
    w.points.assign(s.points.begin() + static_cast<std::ptrdiff_t>(start),
                    s.points.begin() + static_cast<std::ptrdiff_t>(start + T));
    if (!s.times.empty())
      w.times.assign(s.times.begin() + static_cast<std::ptrdiff_t>(start),
                     s.times.begin() + static_cast<std::ptrdiff_t>(start + T));
    out.push_back(std::move(w));
  }
  return out;
}

/// Length-T windows; sources are ranked by a seeded hash of their id and the
/// first round(ratio * sources) go to training, so one source's windows
/// never straddle the split.
inline Split window_and_split(const Trajectories& input, const CorpusConfig& cfg) {
  cfg.validate();
  Split out;
  std::vector<std::pair<std::uint64_t, Trajectories>> sources;
  for (const Trajectory& s : input) {
    Trajectories w = windows_of(s, cfg.T, cfg.stride);
    if (w.empty()) {
      ++out.stats.discarded_short;
      continue;
    }
    out.stats.windows += w.size();
    sources.emplace_back(split_key(cfg.split_seed, s.id), std::move(w));
  }
  out.stats.sources = sources.size();
  if (sources.empty())
    throw EmptySplitError("no windows: " + std::to_string(input.size()) + " trajectories, " +
                              std::to_string(out.stats.discarded_short) + " shorter than T=" + std::to_string(cfg.T),
                          out.stats);
  std::stable_sort(sources.begin(), sources.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_ratio * static_cast<double>(sources.size())));
  for (std::size_t i = 0; i < sources.size(); ++i) {
    Trajectories& dst = i < n_train ? out.train : out.test;
    dst.insert(dst.end(), sources[i].second.begin(), sources[i].second.end());
  }
  out.stats.train_sources = n_train;
  out.stats.test_sources = sources.size() - n_train;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Labeled archetypes: each has an anchor start/end pair (the global factor)
/// that trajectories connect with a smoothed heading-noise walk (the local
/// factor). `glitch_rate` adds occasional GPS-style position errors.
struct SynthSpec {
  std::size_t n = 2000;
  std::size_t T = 16;
  std::size_t archetypes = 4;
  double noise = 0.3;          ///< heading innovation std-dev, radians
  std::uint64_t seed = 0;
  double box_km = 10.0;
  double min_kmh = 40.0;
  double max_kmh = 80.0;
  double anchor_jitter_km = 0.3;
  double heading_memory = 0.7;
  double glitch_rate = 0.0;
  double glitch_km = 0.15;
  double interval = 15.0;
};

inline Trajectories synth_corpus(const SynthSpec& spec) {
  if (spec.archetypes == 0) throw std::invalid_argument("synth_corpus: need at least one archetype");
  if (spec.T < 2) throw std::invalid_argument("synth_corpus: T must be >= 2");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  struct Archetype {
    Point start, end;
  };
  std::vector<Archetype> arche;
  const double steps = static_cast<double>(spec.T - 1);
  for (std::size_t a = 0; a < spec.archetypes; ++a) {
    const Point start{spec.box_km * unit(rng), spec.box_km * unit(rng)};
    const double heading = 2.0 * std::numbers::pi * unit(rng);
    const double kmh = spec.min_kmh + (spec.max_kmh - spec.min_kmh) * unit(rng);
    const double length = steps * kmh * spec.interval / 3600.0;
    arche.push_back({start, {start.x + length * std::cos(heading), start.y + length * std::sin(heading)}});
  }

  Trajectories out;
  out.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t label = static_cast<std::size_t>(unit(rng) * static_cast<double>(spec.archetypes)) % spec.archetypes;
    const Archetype& a = arche[label];
    const Point from{a.start.x + spec.anchor_jitter_km * gauss(rng), a.start.y + spec.anchor_jitter_km * gauss(rng)};
    const Point to{a.end.x + spec.anchor_jitter_km * gauss(rng), a.end.y + spec.anchor_jitter_km * gauss(rng)};
    Trajectory t;
    t.id = "synth-" + std::to_string(i);
    t.label = static_cast<int>(label);
    t.interval = spec.interval;
    t.points.push_back(from);
    double drift = 0.0;
    for (std::size_t k = 1; k < spec.T; ++k) {
      drift = spec.heading_memory * drift + spec.noise * gauss(rng);
      const Point& prev = t.points.back();
      const double rx = to.x - prev.x, ry = to.y - prev.y;
      const double step = std::hypot(rx, ry) / static_cast<double>(spec.T - k);
      const double dir = std::atan2(ry, rx) + drift;
      t.points.push_back({prev.x + step * std::cos(dir), prev.y + step * std::sin(dir)});
    }
    if (spec.glitch_rate > 0.0) {
      for (auto& p : t.points) {
        if (unit(rng) < spec.glitch_rate) {
          p.x += spec.glitch_km * gauss(rng);
          p.y += spec.glitch_km * gauss(rng);
        }
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical corpus format: one JSON object per line,
//   {"id":"...","label":k,"points":[[x,y],...]}   ("label" only when known)

inline nlohmann::json to_json(const Trajectory& t) {
  nlohmann::json j;
  j["id"] = t.id;
  if (t.label >= 0) j["label"] = t.label;
  auto pts = nlohmann::json::array();
  for (const Point& p : t.points) pts.push_back({p.x, p.y});
  j["points"] = std::move(pts);
  return j;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j, double interval = 15.0) {
  Trajectory t;
  t.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
  t.label = j.value("label", -1);
  t.interval = interval;
  for (const auto& p : j.at("points")) {
    if (!p.is_array() || p.size() != 2) throw DataError("corpus: point is not an [x, y] pair");
    const Point q{p[0].get<double>(), p[1].get<double>()};
    if (!std::isfinite(q.x) || !std::isfinite(q.y)) throw DataError("corpus: non-finite coordinate");
    t.points.push_back(q);
  }
  return t;
}

inline void write_corpus(std::ostream& out, const Trajectories& data) {
  for (const auto& t : data) out << to_json(t).dump() << '\n';
}

inline void write_corpus(const std::string& path, const Trajectories& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_corpus(out, data);
}

inline Trajectories read_corpus(std::istream& in, double interval = 15.0) {
  Trajectories out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(trajectory_from_json(nlohmann::json::parse(line), interval));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corpus line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline Trajectories read_corpus(const std::string& path, double interval = 15.0) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  return read_corpus(in, interval);
}

}  // namespace stg
