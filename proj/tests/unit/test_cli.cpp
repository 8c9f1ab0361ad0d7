#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>
#include <sys/wait.h>

#include "tcnet/data/csv.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int tool(const std::string& args) {
  const std::string cmd = std::string(TCNET_TOOL_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return tcnet::data::read_file(p.string()); }
json load(const fs::path& p) { return json::parse(slurp(p)); }

// One small end-to-end pipeline shared by the tests below.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("tcnet_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "c.json") << R"({"seed": 7,
      "benchmark": {"source_samples_per_circle": 20},
      "train": {"max_epochs": 2, "batch_size": 128},
      "model": {"d_model": 4, "heads": 2, "ffn_hidden": 8, "trunk_widths": [8, 8, 4, 4, 4]},
      "oversample": {"count": 600},
      "lime": {"n_perturbations": 200, "instances": 2}})";
    const std::string c = "--config " + (dir_ / "c.json").string();
    const std::string d = dir_.string();
    codes_.push_back(tool("gen-benchmark " + c + " --out " + d + "/data"));
    codes_.push_back(tool("oversample " + c + " --target " + d + "/data/target.csv --out " + d + "/data"));
    codes_.push_back(tool("group " + c + " --source " + d + "/data/source.csv --target " + d +
                          "/data/target.csv --out " + d + "/groups.json"));
    const std::string train = "train " + c + " --source " + d + "/data/source.csv --target-synth " + d +
                              "/data/target_synth.csv --schema " + d + "/data/schema.json --out ";
    codes_.push_back(tool(train + d + "/run1"));
    codes_.push_back(tool(train + d + "/run2"));
    codes_.push_back(tool("eval --checkpoint " + d + "/run1/model.ckpt --data " + d + "/data/target.csv --groups " +
                          d + "/groups.json --reference " + d + "/data/source.csv --out " + d + "/metrics.json"));
    codes_.push_back(tool("explain " + c + " --checkpoint " + d + "/run1/model.ckpt --data " + d +
                          "/data/target.csv --out " + d + "/explain.json"));
    codes_.push_back(tool("attention --checkpoint " + d + "/run1/model.ckpt --data " + d +
                          "/data/target.csv --filter diff --out " + d + "/attention.json"));
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static fs::path dir_;
  static std::vector<int> codes_;
};
fs::path Pipeline::dir_;
std::vector<int> Pipeline::codes_;

TEST_F(Pipeline, EveryStageSucceeds) {
  ASSERT_EQ(codes_.size(), 8u);
  for (std::size_t i = 0; i < codes_.size(); ++i) EXPECT_EQ(codes_[i], 0) << "stage " << i;
}

TEST_F(Pipeline, GenBenchmarkWritesDataAndSchema) {
  for (const char* f : {"source.csv", "target.csv", "schema.json", "source.csv.meta.json", "target_synth.csv"})
    EXPECT_TRUE(fs::exists(dir_ / "data" / f)) << f;
  auto src = tcnet::data::parse_csv(slurp(dir_ / "data/source.csv"));
  EXPECT_EQ(src.rows.size(), 800u);
  auto syn = tcnet::data::parse_csv(slurp(dir_ / "data/target_synth.csv"));
  EXPECT_EQ(syn.rows.size(), 600u);
  EXPECT_FALSE(syn.column("default"));
}

TEST_F(Pipeline, TrainingIsByteReproducible) {
  EXPECT_EQ(slurp(dir_ / "run1/model.ckpt"), slurp(dir_ / "run2/model.ckpt"));
  EXPECT_EQ(slurp(dir_ / "run1/history.jsonl"), slurp(dir_ / "run2/history.jsonl"));
  std::istringstream lines(slurp(dir_ / "run1/history.jsonl"));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) ++n;
  EXPECT_EQ(n, 2);
}

TEST_F(Pipeline, EvalReportsSixGroups) {
  auto m = load(dir_ / "metrics.json");
  EXPECT_EQ(m["groups"].size(), 6u);
  EXPECT_EQ(m["groups"][0]["size"], 80);
  EXPECT_EQ(m["groups"][5]["size"], 10);
}

TEST_F(Pipeline, EveryOutputCarriesProvenance) {
  auto digest = load(dir_ / "data/schema.json")["provenance"]["config_digest"];
  ASSERT_TRUE(digest.is_string());
  for (const char* f : {"data/source.csv.meta.json", "data/target_synth.csv.meta.json", "groups.json",
                        "run1/summary.json", "metrics.json", "explain.json", "attention.json"}) {
    auto j = load(dir_ / f);
    ASSERT_TRUE(j.contains("provenance")) << f;
    EXPECT_EQ(j["provenance"]["tool_version"], "0.1.0") << f;
    EXPECT_EQ(j["provenance"]["seed"], 7) << f;
    EXPECT_TRUE(j["provenance"]["config_digest"].is_string()) << f;
  }
  EXPECT_EQ(load(dir_ / "run1/summary.json")["provenance"]["config_digest"], digest);
  std::istringstream lines(slurp(dir_ / "run1/history.jsonl"));
  std::string first;
  std::getline(lines, first);
  EXPECT_EQ(json::parse(first)["provenance"]["config_digest"], digest);
  const std::string ckpt = slurp(dir_ / "run1/model.ckpt");
  auto manifest = json::parse(ckpt.substr(0, ckpt.find('\n')));
  EXPECT_EQ(manifest["metadata"]["provenance"]["config_digest"], digest);
}

TEST_F(Pipeline, ExplainAndAttentionShapes) {
  auto e = load(dir_ / "explain.json");
  ASSERT_EQ(e["explanations"].size(), 2u);
  EXPECT_LE(e["explanations"][0]["weights"].size(), 10u);
  EXPECT_TRUE(e.contains("fidelity"));
  auto a = load(dir_ / "attention.json");
  EXPECT_EQ(a["features"].size(), 21u);
  EXPECT_EQ(a["matrix"].size(), 21u);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(tool("--help"), 0);
  EXPECT_EQ(tool("train --help"), 0);
  EXPECT_EQ(tool(""), 2);
  EXPECT_EQ(tool("frobnicate"), 2);
  EXPECT_EQ(tool("gen-benchmark"), 2);
  const fs::path dir = fs::temp_directory_path() / ("tcnet_cli_codes_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  EXPECT_EQ(tool("gen-benchmark --out " + dir.string()), 2);  // no seed
  std::ofstream(dir / "bad.json") << R"({"seed": 1, "mystery": true})";
  EXPECT_EQ(tool("gen-benchmark --config " + (dir / "bad.json").string() + " --out " + dir.string()), 2);
  EXPECT_EQ(tool("eval --checkpoint " + (dir / "missing.ckpt").string() + " --data x.csv"), 1);
  fs::remove_all(dir);
}

TEST(Cli, OutputDirectoryLockIsExclusive) {
  const fs::path dir = fs::temp_directory_path() / ("tcnet_cli_lock_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::ofstream(dir / ".tcnet.lock") << "held";
  EXPECT_EQ(tool("gen-benchmark --seed 1 --out " + dir.string()), 1);
  fs::remove(dir / ".tcnet.lock");
  EXPECT_EQ(tool("gen-benchmark --seed 1 --out " + dir.string()), 0);
  EXPECT_FALSE(fs::exists(dir / ".tcnet.lock"));
  fs::remove_all(dir);
}

}  // namespace
