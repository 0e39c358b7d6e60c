// stg: batch front end. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 numeric divergence.

#include "stg/constraints.hpp"
#include "stg/data.hpp"
#include "stg/io.hpp"
#include "stg/metrics.hpp"
#include "stg/model.hpp"
#include "stg/objective.hpp"
#include "stg/workflow.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stg;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kDivergence = 4 };

struct PrepareArgs {
  std::string format = "synth";
  std::string input;
  std::string origin;
  std::size_t T = 16;
  std::size_t stride = 0;
  std::uint64_t split_seed = 0;
  double interval = 15.0;
  std::string out;
  // synthetic corpus
  std::size_t n = 2000;
  std::uint64_t seed = 0;
  double glitch_rate = 0.0;
};

struct TrainArgs {
  std::string variant;
  std::string preset = "taxi";
  std::string config;
  std::string constraints;
  std::string data;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct GenerateArgs {
  std::string weights;
  std::size_t n = 0;
  std::optional<std::size_t> T;
  std::uint64_t seed = 0;
  std::string start;
  bool fix_f = false;
  std::size_t workers = 1;
  std::string out;
};

struct EvaluateArgs {
  std::string real, generated;
  std::size_t grid = 16;
  std::size_t bins = 20;
  std::vector<std::string> constraints;
  std::string out;
};

struct ProbeArgs {
  std::string weights;
  std::size_t rows = 9, cols = 9;
  std::optional<std::size_t> T;
  std::uint64_t seed = 0;
  std::string out;
};

struct SynthArgs {
  std::string config;
  std::size_t n = 2000, T = 16;
  std::uint64_t seed = 0;
  double glitch_rate = 0.0;
  std::string out;
};

fs::path config_path(const std::string& out) { return fs::path(out + ".config.json"); }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir + ": " + ec.message());
}

ModelConfig preset(const std::string& name) {
  if (name == "taxi") return ModelConfig::taxi();
  if (name == "checkin") return ModelConfig::checkin();
  if (name == "toy") return ModelConfig::toy();
  throw ConfigError("unknown preset '" + name + "'");
}

ConstraintExpr load_constraint(const std::string& path) {
  try {
    return constraint_from_json(read_json_file(path));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

Point parse_point(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ConfigError("expected x,y but got '" + s + "'");
  try {
    return {detail::parse_double(s.substr(0, comma)), detail::parse_double(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw ConfigError("expected x,y but got '" + s + "'");
  }
}

// ---------------------------------------------------------------------------

int run_prepare(const PrepareArgs& a) {
  CorpusConfig cc;
  cc.T = a.T;
  cc.stride = a.stride ? a.stride : a.T;
  cc.split_seed = a.split_seed;
  try {
    cc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  json resolved = {{"command", "prepare"}, {"format", a.format}, {"corpus", to_json(cc)}};
  json stats;
  Trajectories source;
  if (a.format == "synth") {
    SynthSpec spec;
    spec.n = a.n;
    spec.T = a.T;
    spec.seed = a.seed;
    spec.glitch_rate = a.glitch_rate;
    spec.interval = a.interval;
    resolved["synth"] = to_json(spec);
    source = synth_corpus(spec);
  } else if (a.format == "corpus") {
    if (a.input.empty()) throw ConfigError("prepare: --input is required");
    resolved["input"] = a.input;
    source = read_corpus(a.input, a.interval);
  } else {
    SourceFormat format;
    try {
      format = parse_source_format(a.format);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (a.input.empty()) throw ConfigError("prepare: --input is required");
    const LoadResult loaded = load(format, a.input);
    ProjectionSpec proj;
    if (!a.origin.empty()) {
      const Point o = parse_point(a.origin);
      proj.origin = {o.x, o.y};
    } else {
      proj.origin = bbox_center(loaded.records);
    }
    const ProjectResult projected = project(proj, loaded.records, a.interval);
    PreprocessStats ps;
    cc.validate();
    source = preprocess(projected.trajectories, cc, &ps);
    resolved["input"] = a.input;
    resolved["origin"] = {proj.origin.lon, proj.origin.lat};
    resolved["radius_km"] = proj.radius_km;
    stats["load"] = {{"rows", loaded.rows},
                     {"records", loaded.records.size()},
                     {"malformed_rows", loaded.malformed},
                     {"outside_box_points", loaded.filtered_points},
                     {"duplicate_time_points", loaded.duplicate_times},
                     {"invalid_coordinate_records", projected.rejected},
                     {"warnings", loaded.warnings}};
    stats["preprocess"] = {{"noise_points", ps.noise_points},
                           {"stay_points", ps.stay_points},
                           {"merged_points", ps.merged_points},
                           {"dropped_short", ps.dropped_short}};
  }
  resolved["interval"] = a.interval;

  auto split_stats = [](const SplitStats& st, std::size_t train, std::size_t test) {
    return json{{"sources", st.sources},
                {"discarded_short", st.discarded_short},
                {"windows", st.windows},
                {"train_sources", st.train_sources},
                {"test_sources", st.test_sources},
                {"train_windows", train},
                {"test_windows", test}};
  };
  ensure_dir(a.out);
  const fs::path dir(a.out);
  Split split;
  try {
    split = window_and_split(source, cc);
  } catch (const EmptySplitError& err) {
    stats["split"] = split_stats(err.stats, 0, 0);
    write_json_file((dir / "stats.json").string(), stats);
    write_json_file((dir / "config.json").string(), resolved);
    throw;
  }
  stats["split"] = split_stats(split.stats, split.train.size(), split.test.size());
  write_corpus((dir / "train.jsonl").string(), split.train);
  write_corpus((dir / "test.jsonl").string(), split.test);
  write_json_file((dir / "stats.json").string(), stats);
  write_json_file((dir / "config.json").string(), resolved);
  std::cout << "windows " << split.stats.windows << " (train " << split.train.size() << ", test " << split.test.size()
            << "), discarded " << split.stats.discarded_short << "\n";
  return kOk;
}

int run_train(const TrainArgs& a) {
  ModelConfig cfg = preset(a.preset);
  if (!a.config.empty()) cfg = model_config_from_json(read_json_file(a.config), cfg);
  if (!a.variant.empty()) {
    try {
      cfg.variant = parse_variant(a.variant);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.seed) cfg.seed = *a.seed;
  std::optional<ConstraintExpr> constraint;
  if (!a.constraints.empty()) {
    constraint = load_constraint(a.constraints);
    cfg.constrained = true;
  }

  const fs::path data(a.data);
  const fs::path train_path = fs::is_directory(data) ? data / "train.jsonl" : data;
  const Trajectories train = read_corpus(train_path.string(), cfg.interval);
  if (train.empty()) throw DataError("train: " + train_path.string() + " holds no trajectories");
  cfg.T = train.front().size();
  for (const auto& s : train)
    if (s.size() != cfg.T) throw DataError("train: window " + s.id + " has a different length");
  fit_normalization(cfg, train);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  ensure_dir(a.out);
  const fs::path dir(a.out);
  json resolved = {{"command", "train"}, {"data", train_path.string()}, {"model", to_json(cfg)}};
  if (constraint) resolved["constraints"] = constraint_to_json(*constraint);
  write_json_file((dir / "config.json").string(), resolved);

  Model model(cfg);
  Trainer trainer(model, constraint);
  std::ofstream log(dir / "epochs.jsonl", std::ios::binary);
  if (!log) throw DataError("cannot write " + (dir / "epochs.jsonl").string());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    try {
      const EpochReport r = trainer.train_epoch(train);
      log << epoch_record(r).dump() << '\n';
    } catch (const DivergenceError& err) {
      log.flush();
      save_weights((dir / "weights.json").string(), model);
      std::cerr << "diverged in epoch " << e + 1 << ": " << err.what() << "\n";
      return kDivergence;
    }
  }
  save_weights((dir / "weights.json").string(), model);
  return kOk;
}

Noise noise_rows(const Noise& all, Eigen::Index begin, Eigen::Index count) {
  Noise part;
  if (all.f.size()) part.f = all.f.middleRows(begin, count);
  for (const Mat& z : all.z) part.z.push_back(z.middleRows(begin, count));
  return part;
}

int run_generate(const GenerateArgs& a) {
  const Model model = load_weights(a.weights);
  const ModelConfig& cfg = model.config();
  const std::size_t T = a.T.value_or(cfg.T);
  if (T == 0) throw ConfigError("generate: T must be positive");
  if (a.workers == 0) throw ConfigError("generate: --workers must be >= 1");
  json resolved = {{"command", "generate"}, {"weights", a.weights}, {"n", a.n},       {"T", T},
                   {"seed", a.seed},        {"fix_f", a.fix_f},     {"start", a.start}, {"workers", a.workers}};
  Trajectories out;
  Rng rng(a.seed);

  if (cfg.variant == Variant::lstm_baseline) {
    if (a.start.empty()) throw ConfigError("generate: the lstm-baseline variant needs --start");
    std::vector<Point> starts;
    if (fs::exists(a.start)) {
      for (const auto& t : read_corpus(a.start))
        if (!t.points.empty()) starts.push_back(t.points.front());
      if (starts.empty()) throw DataError("generate: no start points in " + a.start);
    } else {
      starts.push_back(parse_point(a.start));
    }
    for (std::size_t i = 0; i < a.n; ++i) {
      Trajectory t = model.baseline_rollout(starts[i % starts.size()], T);
      t.id = "gen" + std::to_string(i);
      out.push_back(std::move(t));
    }
  } else if (a.n > 0) {
    Noise noise = model.draw_noise(rng, a.n, T);
    if (a.fix_f && cfg.has_f())
      for (Eigen::Index i = 1; i < noise.f.rows(); ++i) noise.f.row(i) = noise.f.row(0);
    // Noise is drawn up front and synthesis always runs in fixed blocks, so
    // the worker count never changes the output.
    constexpr std::size_t kBlock = 64;
    const std::size_t blocks = (a.n + kBlock - 1) / kBlock;
    std::vector<Trajectories> parts(blocks);
    auto work = [&](std::size_t first) {
      for (std::size_t b = first; b < blocks; b += a.workers) {
        const std::size_t begin = b * kBlock, count = std::min(a.n, begin + kBlock) - begin;
        parts[b] = model.synthesize_with(
            noise_rows(noise, static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)), count, T);
      }
    };
    if (a.workers == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < std::min(a.workers, blocks); ++w) pool.emplace_back(work, w);
      for (auto& th : pool) th.join();
    }
    for (auto& part : parts)
      for (auto& t : part) {
        t.id = "gen" + std::to_string(out.size());
        out.push_back(std::move(t));
      }
  }
  write_corpus(a.out, out);
  write_json_file(config_path(a.out).string(), resolved);
  return kOk;
}

int run_evaluate(const EvaluateArgs& a) {
  if (a.grid == 0) throw ConfigError("evaluate: --grid must be >= 1");
  if (a.bins == 0) throw ConfigError("evaluate: --bins must be >= 1");
  std::vector<NamedConstraint> constraints;
  for (const auto& path : a.constraints) constraints.push_back({fs::path(path).stem().string(), load_constraint(path)});
  const Trajectories real = read_corpus(a.real), generated = read_corpus(a.generated);
  json report = evaluate_report(real, generated, a.grid, constraints, a.bins);
  write_json_file(a.out, report);
  write_json_file(config_path(a.out).string(), {{"command", "evaluate"},
                                                {"real", a.real},
                                                {"generated", a.generated},
                                                {"grid", a.grid},
                                                {"bins", a.bins},
                                                {"constraints", a.constraints}});
  return kOk;
}

int run_probe(const ProbeArgs& a) {
  const Model model = load_weights(a.weights);
  const std::size_t T = a.T.value_or(model.config().T);
  Rng rng(a.seed);
  ProbeGrid grid;
  try {
    grid = probe_disentangle(model, a.rows, a.cols, T, rng);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  write_json_file(a.out, to_json(grid));
  write_json_file(config_path(a.out).string(), {{"command", "probe-disentangle"},
                                                {"weights", a.weights},
                                                {"rows", a.rows},
                                                {"cols", a.cols},
                                                {"T", T},
                                                {"seed", a.seed}});
  if (grid.within_row_mde && grid.within_col_mde)
    std::cout << "within-row MDE " << *grid.within_row_mde << ", within-column MDE " << *grid.within_col_mde << "\n";
  return kOk;
}

int run_synth(const SynthArgs& a) {
  SynthSpec spec;
  if (!a.config.empty()) spec = synth_spec_from_json(read_json_file(a.config));
  spec.n = a.n;
  spec.T = a.T;
  spec.seed = a.seed;
  spec.glitch_rate = a.glitch_rate;
  Trajectories data;
  try {
    data = synth_corpus(spec);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  write_corpus(a.out, data);
  write_json_file(config_path(a.out).string(), {{"command", "synth"}, {"synth", to_json(spec)}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory generation with factorized sequential latents"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "Load, clean, window and split a corpus");
  p->add_option("--format", prep.format, "porto-csv | tdrive-log | gowalla-checkins | corpus | synth")->capture_default_str();
  p->add_option("--input", prep.input, "Source file");
  p->add_option("--origin", prep.origin, "Projection origin lon,lat (default: bounding-box centre)");
  p->add_option("--T", prep.T, "Window length")->capture_default_str();
  p->add_option("--stride", prep.stride, "Window stride (default: T)");
  p->add_option("--split-seed", prep.split_seed, "Seed for the train/test split")->capture_default_str();
  p->add_option("--interval", prep.interval, "Sampling interval in seconds")->capture_default_str();
  p->add_option("--n", prep.n, "Synthetic trajectories (--format synth)")->capture_default_str();
  p->add_option("--seed", prep.seed, "Synthetic corpus seed (--format synth)")->capture_default_str();
  p->add_option("--glitch-rate", prep.glitch_rate, "Synthetic GPS glitch probability")->capture_default_str();
  p->add_option("--out", prep.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model variant");
  t->add_option("--variant", tr.variant, "svae-y | svae-z | dsvae | fdsvae | lstm-baseline");
  t->add_option("--preset", tr.preset, "taxi | checkin | toy")->capture_default_str();
  t->add_option("--config", tr.config, "Model config JSON (overrides the preset)");
  t->add_option("--constraints", tr.constraints, "Constraint JSON; trains the constrained version");
  t->add_option("--data", tr.data, "Prepared directory or training corpus file")->required();
  t->add_option("--epochs", tr.epochs, "Epochs");
  t->add_option("--seed", tr.seed, "Seed");
  t->add_option("--out", tr.out, "Output directory")->required();

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Synthesize trajectories from trained weights");
  g->add_option("--weights", gen.weights, "Weights file")->required();
  g->add_option("--n", gen.n, "Number of trajectories")->required();
  g->add_option("--T", gen.T, "Length (default: training T)");
  g->add_option("--seed", gen.seed, "Seed")->capture_default_str();
  g->add_option("--start", gen.start, "Baseline start point x,y or a corpus file of starts");
  g->add_flag("--fix-f", gen.fix_f, "Share one global latent across all outputs");
  g->add_option("--workers", gen.workers, "Worker threads")->capture_default_str();
  g->add_option("--out", gen.out, "Output corpus file")->required();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Compare generated trajectories with real ones");
  e->add_option("--real", ev.real, "Real corpus file")->required();
  e->add_option("--generated", ev.generated, "Generated corpus file")->required();
  e->add_option("--grid", ev.grid, "Grid cells per axis")->capture_default_str();
  e->add_option("--bins", ev.bins, "Histogram bins")->capture_default_str();
  e->add_option("--constraints", ev.constraints, "Constraint JSON files");
  e->add_option("--out", ev.out, "Metrics JSON")->required();

  ProbeArgs pr;
  auto* d = app.add_subcommand("probe-disentangle", "Grid with shared f per row and shared z per column");
  d->add_option("--weights", pr.weights, "Weights file")->required();
  d->add_option("--rows", pr.rows, "Rows")->capture_default_str();
  d->add_option("--cols", pr.cols, "Columns")->capture_default_str();
  d->add_option("--T", pr.T, "Length (default: training T)");
  d->add_option("--seed", pr.seed, "Seed")->capture_default_str();
  d->add_option("--out", pr.out, "Output JSON")->required();

  SynthArgs sy;
  auto* s = app.add_subcommand("synth", "Write a synthetic labeled corpus");
  s->add_option("--config", sy.config, "Synthetic corpus JSON");
  s->add_option("--n", sy.n, "Trajectories")->capture_default_str();
  s->add_option("--T", sy.T, "Points per trajectory")->capture_default_str();
  s->add_option("--seed", sy.seed, "Seed")->capture_default_str();
  s->add_option("--glitch-rate", sy.glitch_rate, "GPS glitch probability")->capture_default_str();
  s->add_option("--out", sy.out, "Output corpus file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*p) return run_prepare(prep);
    if (*t) return run_train(tr);
    if (*g) return run_generate(gen);
    if (*e) return run_evaluate(ev);
    if (*d) return run_probe(pr);
    if (*s) return run_synth(sy);
  } catch (const DivergenceError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kDivergence;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << "\n";
    return kDivergence;
  } catch (const std::invalid_argument& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kData;
  }
  return kConfig;
}
