#include "stg/data.hpp"
#include "stg/io.hpp"
#include "stg/model.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace stg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run(const std::string& args) {
  const std::string cmd = std::string(STG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("stg_cli_" + std::to_string(::getpid()) + "_" +
                                       ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string at(const std::string& name) const { return (dir / name).string(); }
  fs::path dir;
};

ModelConfig tiny(Variant v) {
  ModelConfig c = ModelConfig::toy();
  c.variant = v;
  c.T = 6;
  c.hidden = 5;
  c.embed_widths = {6, 4};
  c.f_dim = 3;
  c.z_dim = 2;
  c.prior_input = 2;
  c.head_widths = {5, 2};
  return c;
}

}  // namespace

TEST(Weights, RoundTripIsByteIdentical) {
  for (Variant v : {Variant::svae_y, Variant::svae_z, Variant::dsvae, Variant::fdsvae, Variant::lstm_baseline}) {
    ModelConfig c = tiny(v);
    c.seed = 17;
    Model m(c);
    Rng rng(3);
    std::normal_distribution<double> g(0.0, 0.3);
    for (auto& [name, p] : m.params())
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = g(rng);
    const std::string first = weights_to_string(m);
    const Model back = weights_from_json(nlohmann::json::parse(first));
    EXPECT_EQ(weights_to_string(back), first) << to_string(v);
    for (const auto& [name, p] : m.params()) EXPECT_EQ(back.params().at(name).value, p.value) << name;
  }
}

TEST(Weights, MismatchesRejected) {
  const Model m(tiny(Variant::fdsvae));
  nlohmann::json j = weights_to_json(m);
  auto wrong_variant = j;
  wrong_variant["variant"] = "dsvae";
  EXPECT_THROW(weights_from_json(wrong_variant), ConfigError);
  auto wrong_shape = j;
  wrong_shape["config"]["hidden"] = 6;
  EXPECT_THROW(weights_from_json(wrong_shape), ConfigError);
  auto missing = j;
  missing["params"].erase("f_mu.0.W");
  EXPECT_THROW(weights_from_json(missing), ConfigError);
  auto version = j;
  version["format_version"] = 99;
  EXPECT_THROW(weights_from_json(version), ConfigError);
}

TEST(Config, RoundTripAndUnknownKey) {
  const ModelConfig c = ModelConfig::checkin();
  const ModelConfig back = model_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  nlohmann::json bad = to_json(c);
  bad["hiden"] = 32;
  try {
    model_config_from_json(bad);
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("hiden"), std::string::npos);
  }
  nlohmann::json typed = to_json(c);
  typed["hidden"] = "wide";
  EXPECT_THROW(model_config_from_json(typed), ConfigError);
  EXPECT_THROW(synth_spec_from_json({{"archetype", 2}}), ConfigError);
}

TEST_F(Cli, PipelineIsDeterministic) {
  ASSERT_EQ(run("prepare --format synth --n 120 --T 8 --seed 2 --out " + at("prep")), 0);
  for (const char* f : {"train.jsonl", "test.jsonl", "stats.json", "config.json"}) EXPECT_TRUE(fs::exists(dir / "prep" / f)) << f;

  std::ofstream(at("cfg.json")) << R"({"hidden": 6, "embed_widths": [6, 4], "f_dim": 3, "z_dim": 2, "prior_input": 2,
                                       "head_widths": [6, 2], "batch_size": 32})";
  const std::string train = "train --variant fdsvae --preset toy --config " + at("cfg.json") + " --epochs 2 --seed 5 --data " +
                            at("prep") + " --out ";
  ASSERT_EQ(run(train + at("a")), 0);
  ASSERT_EQ(run(train + at("b")), 0);
  EXPECT_EQ(slurp(dir / "a" / "weights.json"), slurp(dir / "b" / "weights.json"));
  EXPECT_EQ(slurp(dir / "a" / "epochs.jsonl"), slurp(dir / "b" / "epochs.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "a" / "config.json"));

  const std::string w = (dir / "a" / "weights.json").string();
  ASSERT_EQ(run("generate --weights " + w + " --n 150 --seed 9 --out " + at("g1.jsonl")), 0);
  ASSERT_EQ(run("generate --weights " + w + " --n 150 --seed 9 --workers 3 --out " + at("g2.jsonl")), 0);
  ASSERT_EQ(run("generate --weights " + w + " --n 150 --seed 10 --out " + at("g3.jsonl")), 0);
  EXPECT_EQ(slurp(at("g1.jsonl")), slurp(at("g2.jsonl")));
  EXPECT_NE(slurp(at("g1.jsonl")), slurp(at("g3.jsonl")));
  const Trajectories gen = read_corpus(at("g1.jsonl"));
  ASSERT_EQ(gen.size(), 150u);
  EXPECT_EQ(gen[0].size(), 8u);
  EXPECT_TRUE(fs::exists(at("g1.jsonl.config.json")));

  std::ofstream(at("phys.json")) << R"({"leaf": "sharp-turn-at-speed", "kmh": 60, "cos": -0.5})";
  ASSERT_EQ(run("evaluate --real " + at("prep/test.jsonl") + " --generated " + at("g1.jsonl") + " --constraints " +
                at("phys.json") + " --out " + at("m.json")),
            0);
  const nlohmann::json report = nlohmann::json::parse(slurp(at("m.json")));
  for (const char* k : {"angles", "segment_lengths", "total_length", "grid_counts"}) {
    ASSERT_TRUE(report["mmd"].contains(k)) << k;
    EXPECT_GE(report["mmd"][k].get<double>(), 0.0);
  }
  EXPECT_TRUE(report["violation_score"].contains("phys"));

  ASSERT_EQ(run("probe-disentangle --weights " + w + " --rows 3 --cols 4 --out " + at("p.json")), 0);
  const nlohmann::json probe = nlohmann::json::parse(slurp(at("p.json")));
  EXPECT_TRUE(probe["within_row_mde"].is_number());
}

TEST_F(Cli, Boundaries) {
  ASSERT_EQ(run("prepare --format synth --n 30 --T 8 --seed 1 --out " + at("prep")), 0);
  ASSERT_EQ(run("train --variant svae-z --preset toy --epochs 0 --data " + at("prep") + " --out " + at("t")), 0);
  EXPECT_EQ(slurp(dir / "t" / "epochs.jsonl"), "");
  const Model init = load_weights((dir / "t" / "weights.json").string());
  Model fresh(init.config());
  EXPECT_EQ(weights_to_string(fresh), weights_to_string(init));

  ASSERT_EQ(run("generate --weights " + at("t/weights.json") + " --n 0 --out " + at("empty.jsonl")), 0);
  EXPECT_EQ(slurp(at("empty.jsonl")), "");

  std::ofstream(at("speed.json")) << R"({"leaf": "speed-limit", "kmh": 500})";
  ASSERT_EQ(run("evaluate --real " + at("prep/train.jsonl") + " --generated " + at("prep/train.jsonl") + " --constraints " +
                at("speed.json") + " --out " + at("self.json")),
            0);
  const nlohmann::json r = nlohmann::json::parse(slurp(at("self.json")));
  for (const auto& [k, v] : r["mmd"].items()) EXPECT_EQ(v.get<double>(), 0.0) << k;
  EXPECT_EQ(r["violation_score"]["speed"]["real"]["violated"], 0);
  EXPECT_EQ(r["mde"].get<double>(), 0.0);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("train --preset tiny --data " + at("x") + " --out " + at("o")), 2);
  EXPECT_EQ(run("generate --n 3 --out " + at("o.jsonl")), 2);
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run("prepare --format porto-csv --input " + at("missing.csv") + " --out " + at("o")), 3);
  EXPECT_EQ(run("prepare --format kml --input " + at("x") + " --out " + at("o")), 2);

  std::ofstream(at("bad.json")) << R"({"leaf": "speed-limit", "kph": 60})";
  ASSERT_EQ(run("prepare --format synth --n 20 --T 8 --out " + at("prep")), 0);
  EXPECT_EQ(run("train --variant fdsvae --preset toy --epochs 1 --constraints " + at("bad.json") + " --data " + at("prep") +
                " --out " + at("t")),
            2);
  EXPECT_EQ(run("synth --T 1 --out " + at("s.jsonl")), 2);
}

TEST_F(Cli, PrepareWithNoWindowsFailsWithStatistics) {
  // 20-point tracks cannot fill a 32-step window
  std::ofstream csv(at("short.csv"));
  csv << "TRIP_ID,POLYLINE\n";
  for (int k = 0; k < 3; ++k) {
    csv << "\"trip" << k << "\",\"[";
    for (int i = 0; i < 20; ++i) csv << (i ? "," : "") << "[" << -8.61 + 0.002 * i << "," << 41.14 + 0.001 * k << "]";
    csv << "]\"\n";
  }
  csv.close();
  EXPECT_EQ(run("prepare --format porto-csv --input " + at("short.csv") + " --T 32 --out " + at("prep")), 3);
  ASSERT_TRUE(fs::exists(dir / "prep" / "stats.json"));
  const nlohmann::json stats = nlohmann::json::parse(slurp(dir / "prep" / "stats.json"));
  EXPECT_EQ(stats["split"]["windows"], 0);
  EXPECT_EQ(stats["split"]["discarded_short"], 3);
  EXPECT_FALSE(fs::exists(dir / "prep" / "train.jsonl"));

  EXPECT_EQ(run("prepare --format porto-csv --input " + at("short.csv") + " --T 8 --out " + at("ok")), 0);
}
