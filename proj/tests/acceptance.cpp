// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments pick
// criteria by number, e.g. `acceptance 1 3 10`.

#include "golden.hpp"
#include "support.hpp"

#include "stg/constraints.hpp"
#include "stg/data.hpp"
#include "stg/io.hpp"
#include "stg/metrics.hpp"
#include "stg/model.hpp"
#include "stg/objective.hpp"
#include "stg/workflow.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

using namespace stg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1

Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string per;
  for (Variant v : {Variant::svae_y, Variant::svae_z, Variant::dsvae, Variant::fdsvae}) {
    ModelConfig c = ModelConfig::toy();
    c.variant = v;
    c.T = 4;
    c.hidden = 8;
    c.embed_widths = {8, 8};
    c.f_dim = 8;
    c.z_dim = 8;
    c.prior_input = 8;
    c.head_widths = {8, 2};
    c.constrained = true;
    c.penalty_samples = 2;
    c.penalty_weight = 0.5;
    c.seed = 11;
    const Model m(c);
    Rng rng(21);
    std::vector<Mat> data;
    for (std::size_t t = 0; t < c.T; ++t) data.push_back(gaussian_noise(rng, 2, 2));
    const Noise noise = m.draw_noise(rng, 2, c.T), pn = m.draw_noise(rng, 2, c.T);
    // low speed threshold keeps the physics hinge active at random init
    const auto physics = ConstraintExpr::sharp_turn_at_speed(1.0, 0.9);
    const double err = support::param_grad_error(m.params(), [&](const Bound& p) {
      return batch_loss(m, p, support::leaves(p.tape(), data), noise, &physics, &pn).total;
    });
    worst = std::max(worst, err);
    per += " " + to_string(v) + "=" + fmt("%.2e", err);
  }
  const double s = seconds_since(t0);
  return {worst < 1e-4 && s < 60.0, fmt("max rel err %.3e, %.1f s;", worst, s) + per};
}

// ---------------------------------------------------------------------------
// 2

Outcome kl_oracle() {
  const double one[] = {1.0}, zero[] = {0.0}, unit[] = {1.0};
  const double a = gaussian_kl(one, unit, zero, unit);
  const double same = gaussian_kl(one, unit, one, unit);
  const double m1[] = {1.0, -0.5}, s1[] = {0.5, 2.0}, m2[] = {0.0, 0.3}, s2[] = {1.0, 1.5};
  const double closed = gaussian_kl(m1, s1, m2, s2);
  Rng rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  auto log_pdf = [](double x, double mu, double s) {
    return -0.5 * std::log(2 * std::numbers::pi) - std::log(s) - 0.5 * (x - mu) * (x - mu) / (s * s);
  };
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < 2; ++d) {
      const double x = m1[d] + s1[d] * g(rng);
      sum += log_pdf(x, m1[d], s1[d]) - log_pdf(x, m2[d], s2[d]);
    }
  const double mc = sum / n;
  const double rel = std::abs(mc - closed) / closed;
  const bool ok = std::abs(a - 0.5) <= 1e-12 && std::abs(same) <= 1e-12 && rel < 0.01;
  return {ok, fmt("KL(N(1,1)||N(0,1))=%.15f, identical=%.1e, closed %.5f vs MC %.5f (rel %.2e)", a, same, closed, mc, rel)};
}

// ---------------------------------------------------------------------------
// 3

Outcome constraint_enumeration() {
  const auto g = support::load_golden(STG_FIXTURE_DIR "/golden_constraints.json");
  const auto physics = ConstraintExpr::sharp_turn_at_speed(g.physics_kmh, g.physics_cos);
  const auto behavior = ConstraintExpr::double_u_turn(g.behavior_cos);
  const auto speed = ConstraintExpr::speed_limit(g.physics_kmh);
  std::size_t mismatches = 0, checked = 0;
  auto same_real = [&](const std::optional<double>& got, const std::optional<double>& want) {
    ++checked;
    if (got.has_value() != want.has_value() || (got && std::abs(*got - *want) > 1e-9)) ++mismatches;
  };
  auto same_flag = [&](const std::optional<bool>& got, const std::optional<bool>& want) {
    ++checked;
    if (got != want) ++mismatches;
  };
  for (const auto& c : g.cases) {
    const auto ph = physics_hinge(c.trajectory, g.physics_kmh, g.physics_cos);
    const auto bh = behavior_hinge(c.trajectory, g.behavior_cos);
    const auto pv = violations(physics, c.trajectory), bv = violations(behavior, c.trajectory),
               sv = violations(speed, c.trajectory);
    for (std::size_t t = 0; t < c.trajectory.size(); ++t) {
      same_real(ph[t], c.physics[t]);
      same_real(bh[t], c.behavior[t]);
      same_flag(pv[t], c.physics_violated[t]);
      same_flag(bv[t], c.behavior_violated[t]);
      same_flag(sv[t], c.speed_violated[t]);
    }
    bool any = false;
    for (const auto& v : c.physics_violated) any = any || v.value_or(false);
    ++checked;
    if (indicator(physics, c.trajectory).valid == any) ++mismatches;
  }
  const Trajectories all = g.trajectories();
  auto score = [&](const ConstraintExpr& e, const support::GoldenCount& want) {
    const ViolationCount n = count_violations({e}, all);
    ++checked;
    if (n.violated != want.violated || n.evaluated != want.evaluated) ++mismatches;
  };
  score(physics, g.physics_vs);
  score(behavior, g.behavior_vs);
  score(speed, g.speed_vs);

  // 72 km/h at eta = -0.9 against 60 km/h and -0.5
  Trajectory hand;
  hand.interval = 15.0;
  hand.points = {{0, 0}, {1, 0}, {1 - 0.3 * 0.9, 0.3 * std::sqrt(1 - 0.81)}};
  const auto h = physics_hinge(hand, 60.0, -0.5);
  const bool hand_ok = h.size() == 3 && h[2] && std::abs(*h[2] - 4.8) < 1e-9;
  return {mismatches == 0 && hand_ok, fmt("%zu/%zu fixture values match, hand case %.12f", checked - mismatches, checked,
                                          h.size() == 3 && h[2] ? *h[2] : -1.0)};
}

// ---------------------------------------------------------------------------
// 4

Outcome metric_oracles() {
  Rng rng(9);
  bool zero = true;
  for (int i = 0; i < 10; ++i) {
    const Mat d = gaussian_noise(rng, 25, 4);
    zero = zero && mmd(d, d) == 0.0;
  }
  Mat a(1, 3), b(1, 3);
  a << 0, 0, 0;
  b << 100, 0, 0;
  const double far = mmd(a, b);
  Trajectory p, q;
  p.points = {{0, 0}, {3, 4}};
  q.points = {{0, 0}, {0, 0}};
  const double d = mde({p}, {q});
  const bool ok = zero && std::abs(far - 2.0) <= 1e-9 && d == 2.5;
  return {ok, fmt("mmd(D,D)=0 on 10 sets: %s, singletons %.12f, mde %.6f", zero ? "yes" : "no", far, d)};
}

// ---------------------------------------------------------------------------
// 5, 6, 7, 9: shared toy training runs

ConstraintExpr physics_constraint() { return ConstraintExpr::sharp_turn_at_speed(60.0, -0.5); }

struct SeedRun {
  std::uint64_t seed = 0;
  Split split;
  ModelConfig cfg;
  std::optional<Model> plain, constrained;
  std::vector<double> plain_losses, constrained_losses;
  double plain_seconds = 0.0, constrained_seconds = 0.0;
};

constexpr int kSeeds = 10;

Split synthetic_split(std::uint64_t seed) {
  SynthSpec spec;
  spec.n = 2000;
  spec.T = 16;
  spec.glitch_rate = 0.05;
  spec.seed = seed;
  CorpusConfig cc;
  cc.T = 16;
  cc.stride = 16;
  cc.split_seed = seed;
  return window_and_split(synth_corpus(spec), cc);
}

std::vector<double> train(Model& m, const Trajectories& data, std::optional<ConstraintExpr> c) {
  Trainer trainer(m, std::move(c));
  std::vector<double> losses;
  for (std::size_t e = 0; e < m.config().epochs; ++e) losses.push_back(trainer.train_epoch(data).loss.total);
  return losses;
}

const std::vector<SeedRun>& seed_runs() {
  static const std::vector<SeedRun> runs = [] {
    std::vector<SeedRun> out(kSeeds);
    for (int s = 0; s < kSeeds; ++s) {
      SeedRun& r = out[static_cast<std::size_t>(s)];
      r.seed = static_cast<std::uint64_t>(s) + 1;
      r.split = synthetic_split(r.seed);
      r.cfg = ModelConfig::toy();
      r.cfg.variant = Variant::fdsvae;
      r.cfg.T = 16;
      r.cfg.seed = r.seed;
      fit_normalization(r.cfg, r.split.train);

      auto t0 = Clock::now();
      r.plain.emplace(r.cfg);
      r.plain_losses = train(*r.plain, r.split.train, std::nullopt);
      r.plain_seconds = seconds_since(t0);

      ModelConfig cc = r.cfg;
      cc.constrained = true;
      t0 = Clock::now();
      r.constrained.emplace(cc);
      r.constrained_losses = train(*r.constrained, r.split.train, physics_constraint());
      r.constrained_seconds = seconds_since(t0);
      std::cerr << "  seed " << r.seed << ": trained in " << fmt("%.0f + %.0f s", r.plain_seconds, r.constrained_seconds)
                << "\n";
    }
    return out;
  }();
  return runs;
}

double violation_score(const Model& m, std::uint64_t seed) {
  Rng rng(seed * 7919 + 1);
  const Trajectories gen = m.synthesize(1000, m.config().T, rng);
  const ViolationCount n = count_violations({physics_constraint()}, gen);
  return n.evaluated ? static_cast<double>(n.violated) / static_cast<double>(n.evaluated) : 0.0;
}

Outcome training_vs() {
  int wins = 0;
  double slowest = 0.0;
  std::string per;
  for (const SeedRun& r : seed_runs()) {
    const double plain = violation_score(*r.plain, r.seed), constrained = violation_score(*r.constrained, r.seed);
    wins += constrained <= plain;
    slowest = std::max({slowest, r.plain_seconds, r.constrained_seconds});
    per += fmt(" %.4f/%.4f", constrained, plain);
  }
  return {wins >= 8 && slowest <= 900.0,
          fmt("VS(S) <= VS on %d/10 seeds, slowest run %.0f s; S/plain:", wins, slowest) + per};
}

Outcome training_mmd() {
  int wins = 0;
  std::string per;
  for (const SeedRun& r : seed_runs()) {
    const Trajectories& real = r.split.test;
    const std::size_t n = real.size(), T = r.cfg.T;
    const GridSpec grid = GridSpec::around(real, 16);
    Rng g1(r.seed * 31 + 3), g2(r.seed * 31 + 3), g3(r.seed * 31 + 4);
    const Model untrained(r.cfg);
    const FeatureMmds trained = feature_mmds(real, r.plain->synthesize(n, T, g1), grid);
    const FeatureMmds fresh = feature_mmds(real, untrained.synthesize(n, T, g2), grid);
    const FeatureMmds walk = feature_mmds(real, random_walk_corpus(r.split.train, n, T, g3), grid);
    bool ok = true;
    for (FeatureKind k : kAllFeatures) ok = ok && trained.of(k) < fresh.of(k) && trained.of(k) < walk.of(k);
    wins += ok;
    if (!ok) {
      per += fmt(" [seed %d:", static_cast<int>(r.seed));
      for (FeatureKind k : kAllFeatures)
        per += fmt(" %s %.3g/%.3g/%.3g", to_string(k).c_str(), trained.of(k), fresh.of(k), walk.of(k));
      per += "]";
    }
  }
  return {wins >= 8, fmt("trained below untrained and random walk on all four features for %d/10 seeds", wins) + per};
}

Outcome loss_descent() {
  int ok = 0;
  std::string per;
  for (const SeedRun& r : seed_runs()) {
    const double p = r.plain_losses.back() / r.plain_losses.front();
    const double c = r.constrained_losses.back() / r.constrained_losses.front();
    ok += p < 0.5 && c < 0.5;
    per += fmt(" %.3f/%.3f", p, c);
  }
  return {ok == kSeeds, fmt("epoch-30/epoch-1 below 0.5 on %d/10 seeds; plain/S ratios:", ok) + per};
}

Outcome disentanglement() {
  int wins = 0;
  std::string per;
  for (const SeedRun& r : seed_runs()) {
    Rng rng(r.seed * 101 + 7);
    const ProbeGrid g = probe_disentangle(*r.plain, 9, 9, r.cfg.T, rng);
    wins += *g.within_row_mde < *g.within_col_mde;
    per += fmt(" %.3f/%.3f", *g.within_row_mde, *g.within_col_mde);
  }
  return {wins > kSeeds / 2, fmt("row < column MDE on %d/10 seeds; row/column:", wins) + per};
}

// ---------------------------------------------------------------------------
// 8

Outcome variant_structure() {
  auto z_params_differ = [](Variant v) {
    ModelConfig c = ModelConfig::toy();
    c.variant = v;
    c.T = 6;
    c.hidden = 8;
    c.embed_widths = {8, 8};
    c.f_dim = 8;
    c.z_dim = 8;
    c.prior_input = 8;
    c.head_widths = {8, 2};
    Model m(c);
    Rng rng(13);
    std::normal_distribution<double> g(0.0, 0.4);
    for (auto& [name, p] : m.params())
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = g(rng);
    Tape tape;
    const Bound p(tape, m.params());
    std::vector<Tensor> steps;
    for (std::size_t t = 0; t < c.T; ++t) steps.push_back(tape.leaf(gaussian_noise(rng, 3, 2)));
    const ForwardPass a = m.forward(p, steps, m.draw_noise(rng, 3, c.T));
    const ForwardPass b = m.forward(p, steps, m.draw_noise(rng, 3, c.T));
    bool f_differs = (a.f.value() - b.f.value()).cwiseAbs().maxCoeff() > 0.0;
    bool differs = false;
    for (std::size_t t = 0; t < c.T; ++t)
      differs = differs || a.z_post[t].mu.value() != b.z_post[t].mu.value() ||
                a.z_post[t].sigma.value() != b.z_post[t].sigma.value();
    return std::pair{f_differs, differs};
  };
  const auto [ff, fd] = z_params_differ(Variant::fdsvae);
  const auto [df, dd] = z_params_differ(Variant::dsvae);
  return {ff && df && !fd && dd, fmt("fdsvae z-posterior changes with f: %s; dsvae: %s", fd ? "yes" : "no", dd ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 10

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(STG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("stg_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::vector<std::string> problems;
  for (const char* rep : {"r1", "r2"}) {
    const fs::path d = root / rep;
    fs::create_directories(d);
    std::ofstream(d / "cfg.json") << R"({"hidden": 8, "embed_widths": [8, 8], "f_dim": 4, "z_dim": 4, "prior_input": 4,
                                        "head_widths": [8, 2], "batch_size": 64})";
    std::ofstream(d / "physics.json") << R"({"leaf": "sharp-turn-at-speed", "kmh": 60, "cos": -0.5})";
    const std::string D = d.string() + "/";
    const std::vector<std::string> commands = {
        "synth --n 300 --T 12 --seed 3 --glitch-rate 0.05 --out " + D + "synth.jsonl",
        "prepare --format corpus --input " + D + "synth.jsonl --T 12 --split-seed 4 --out " + D + "prep",
        "train --variant fdsvae --preset toy --config " + D + "cfg.json --constraints " + D +
            "physics.json --epochs 2 --seed 6 --data " + D + "prep --out " + D + "run",
        "generate --weights " + D + "run/weights.json --n 100 --seed 8 --out " + D + "gen.jsonl",
        "evaluate --real " + D + "prep/test.jsonl --generated " + D + "gen.jsonl --constraints " + D +
            "physics.json --out " + D + "metrics.json",
        "probe-disentangle --weights " + D + "run/weights.json --rows 3 --cols 3 --seed 2 --out " + D + "probe.json",
    };
    for (const auto& c : commands)
      if (const int code = run_cli(c); code != 0) problems.push_back(fmt("exit %d: ", code) + c.substr(0, c.find(' ')));
  }
  // config echoes mention the output paths, which differ between the two runs
  const std::vector<std::string> outputs = {"synth.jsonl",     "prep/train.jsonl", "prep/test.jsonl", "prep/stats.json",
                                            "run/weights.json", "run/epochs.jsonl", "gen.jsonl",       "metrics.json",
                                            "probe.json"};
  std::size_t identical = 0;
  for (const auto& o : outputs) {
    const fs::path a = root / "r1" / o, b = root / "r2" / o;
    if (fs::exists(a) && fs::exists(b) && slurp(a) == slurp(b) && !slurp(a).empty())
      ++identical;
    else
      problems.push_back("differs: " + o);
  }
  bool round_trip = false;
  try {
    const std::string stored = slurp(root / "r1" / "run/weights.json");
    round_trip = weights_to_string(load_weights((root / "r1" / "run/weights.json").string())) == stored;
  } catch (const std::exception& e) {
    problems.push_back(e.what());
  }
  fs::remove_all(root);
  std::string detail = fmt("%zu/%zu outputs byte-identical, weights round trip %s", identical, outputs.size(),
                           round_trip ? "byte-identical" : "differs");
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty() && round_trip, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"KL oracle", kl_oracle},
      {"constraint enumeration", constraint_enumeration},
      {"metric oracles", metric_oracles},
      {"constrained training lowers violation score", training_vs},
      {"trained MMDs beat untrained and random walk", training_mmd},
      {"loss descent", loss_descent},
      {"variant structure", variant_structure},
      {"disentanglement direction", disentanglement},
      {"determinism", determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << " " << criteria[i].first << fmt(" (%.1f s): ", seconds_since(t0))
              << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
