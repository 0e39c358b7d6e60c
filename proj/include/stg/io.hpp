#pragma once

// Persistence: JSON config documents (unknown keys rejected), the weights file
// and epoch-log records.

#include "stg/data.hpp"
#include "stg/model.hpp"
#include "stg/objective.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace stg {

class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kWeightsFormatVersion = 1;

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + ": expected a JSON object");
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw ConfigError(what + ": unknown key '" + k + "'");
}

template <class T>
void read_if(const nlohmann::json& j, const char* key, T& dst, const std::string& what) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace detail

inline std::string to_string(PriorCondition c) { return c == PriorCondition::f ? "f" : "zero"; }

inline PriorCondition parse_prior_condition(const std::string& s) {
  if (s == "zero") return PriorCondition::zero;
  if (s == "f") return PriorCondition::f;
  throw ConfigError("unknown prior condition '" + s + "'");
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"constrained", c.constrained},
          {"T", c.T},
          {"embed_widths", c.embed_widths},
          {"hidden", c.hidden},
          {"f_dim", c.f_dim},
          {"z_dim", c.z_dim},
          {"prior_input", c.prior_input},
          {"head_widths", c.head_widths},
          {"prior_condition", to_string(c.prior_condition)},
          {"beta", c.beta},
          {"penalty_weight", c.penalty_weight},
          {"penalty_samples", c.penalty_samples},
          {"penalty_sqrt", c.penalty_sqrt},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"clip_norm", c.clip_norm},
          {"seed", c.seed},
          {"interval", c.interval},
          {"origin_x", c.origin_x},
          {"origin_y", c.origin_y},
          {"coord_scale", c.coord_scale}};
}

/// Missing keys keep the values of `base`.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  const std::string what = "model config";
  detail::reject_unknown(j,
                         {"variant", "constrained", "T", "embed_widths", "hidden", "f_dim", "z_dim", "prior_input",
                          "head_widths", "prior_condition", "beta", "penalty_weight", "penalty_samples", "penalty_sqrt",
                          "learning_rate", "batch_size", "epochs", "clip_norm", "seed", "interval", "origin_x",
                          "origin_y", "coord_scale"},
                         what);
  ModelConfig c = std::move(base);
  try {
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("prior_condition")) c.prior_condition = parse_prior_condition(j.at("prior_condition").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(what + ": " + e.what());
  }
  detail::read_if(j, "constrained", c.constrained, what);
  detail::read_if(j, "T", c.T, what);
  detail::read_if(j, "embed_widths", c.embed_widths, what);
  detail::read_if(j, "hidden", c.hidden, what);
  detail::read_if(j, "f_dim", c.f_dim, what);
  detail::read_if(j, "z_dim", c.z_dim, what);
  detail::read_if(j, "prior_input", c.prior_input, what);
  detail::read_if(j, "head_widths", c.head_widths, what);
  detail::read_if(j, "beta", c.beta, what);
  detail::read_if(j, "penalty_weight", c.penalty_weight, what);
  detail::read_if(j, "penalty_samples", c.penalty_samples, what);
  detail::read_if(j, "penalty_sqrt", c.penalty_sqrt, what);
  detail::read_if(j, "learning_rate", c.learning_rate, what);
  detail::read_if(j, "batch_size", c.batch_size, what);
  detail::read_if(j, "epochs", c.epochs, what);
  detail::read_if(j, "clip_norm", c.clip_norm, what);
  detail::read_if(j, "seed", c.seed, what);
  detail::read_if(j, "interval", c.interval, what);
  detail::read_if(j, "origin_x", c.origin_x, what);
  detail::read_if(j, "origin_y", c.origin_y, what);
  detail::read_if(j, "coord_scale", c.coord_scale, what);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline nlohmann::json to_json(const CorpusConfig& c) {
  return {{"T", c.T},
          {"stride", c.stride},
          {"train_ratio", c.train_ratio},
          {"split_seed", c.split_seed},
          {"max_speed_kmh", c.max_speed_kmh},
          {"stay_radius_km", c.stay_radius_km},
          {"stay_dwell_s", c.stay_dwell_s},
          {"min_points", c.min_points}};
}

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"n", s.n},
          {"T", s.T},
          {"archetypes", s.archetypes},
          {"noise", s.noise},
          {"seed", s.seed},
          {"box_km", s.box_km},
          {"min_kmh", s.min_kmh},
          {"max_kmh", s.max_kmh},
          {"anchor_jitter_km", s.anchor_jitter_km},
          {"heading_memory", s.heading_memory},
          {"glitch_rate", s.glitch_rate},
          {"glitch_km", s.glitch_km},
          {"interval", s.interval}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j, SynthSpec s = {}) {
  const std::string what = "synth spec";
  detail::reject_unknown(j,
                         {"n", "T", "archetypes", "noise", "seed", "box_km", "min_kmh", "max_kmh", "anchor_jitter_km",
                          "heading_memory", "glitch_rate", "glitch_km", "interval"},
                         what);
  detail::read_if(j, "n", s.n, what);
  detail::read_if(j, "T", s.T, what);
  detail::read_if(j, "archetypes", s.archetypes, what);
  detail::read_if(j, "noise", s.noise, what);
  detail::read_if(j, "seed", s.seed, what);
  detail::read_if(j, "box_km", s.box_km, what);
  detail::read_if(j, "min_kmh", s.min_kmh, what);
  detail::read_if(j, "max_kmh", s.max_kmh, what);
  detail::read_if(j, "anchor_jitter_km", s.anchor_jitter_km, what);
  detail::read_if(j, "heading_memory", s.heading_memory, what);
  detail::read_if(j, "glitch_rate", s.glitch_rate, what);
  detail::read_if(j, "glitch_km", s.glitch_km, what);
  detail::read_if(j, "interval", s.interval, what);
  return s;
}

// ---------------------------------------------------------------------------
// Weights file

inline nlohmann::json weights_to_json(const Model& model) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, p] : model.params()) {
    std::vector<double> data(p.value.data(), p.value.data() + p.value.size());
    params[name] = {{"shape", p.shape}, {"data", std::move(data)}};
  }
  return {{"format_version", kWeightsFormatVersion},
          {"variant", to_string(model.config().variant)},
          {"config", to_json(model.config())},
          {"params", std::move(params)}};
}

inline std::string weights_to_string(const Model& model) { return weights_to_json(model).dump() + "\n"; }

/// Names and shapes must match what the config produces.
inline Model weights_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"format_version", "variant", "config", "params"}, "weights");
  if (!j.contains("format_version") || j.at("format_version") != kWeightsFormatVersion)
    throw ConfigError("weights: unsupported format version");
  const ModelConfig cfg = model_config_from_json(j.at("config"));
  if (j.at("variant").get<std::string>() != to_string(cfg.variant))
    throw ConfigError("weights: variant '" + j.at("variant").get<std::string>() + "' does not match config '" +
                      to_string(cfg.variant) + "'");
  Model model(cfg);
  const auto& stored = j.at("params");
  if (!stored.is_object() || stored.size() != model.params().size())
    throw ConfigError("weights: expected " + std::to_string(model.params().size()) + " parameter tensors");
  for (auto& [name, p] : model.params()) {
    if (!stored.contains(name)) throw ConfigError("weights: missing parameter " + name);
    const auto& entry = stored.at(name);
    detail::reject_unknown(entry, {"shape", "data"}, "weights parameter " + name);
    const Shape shape = entry.at("shape").get<Shape>();
    if (shape != p.shape)
      throw ConfigError("weights: parameter " + name + " has shape " + to_string(shape) + ", config expects " +
                        to_string(p.shape));
    const auto data = entry.at("data").get<std::vector<double>>();
    if (data.size() != static_cast<std::size_t>(p.value.size()))
      throw ConfigError("weights: parameter " + name + " has " + std::to_string(data.size()) + " values");
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i])) throw ConfigError("weights: parameter " + name + " is non-finite");
      p.value.data()[i] = data[i];
    }
  }
  return model;
}

inline void save_weights(const std::string& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << weights_to_string(model);
}

inline Model load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("weights " + path + ": " + e.what());
  }
  return weights_from_json(j);
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Epoch log (one JSON object per line)

inline nlohmann::json epoch_record(const EpochReport& r) {
  nlohmann::json j = to_json(r.loss);
  j["epoch"] = r.epoch;
  j["batches"] = r.batches;
  j["skipped_updates"] = r.skipped_updates.size();
  return j;
}

}  // namespace stg
