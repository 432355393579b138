#ifdef COALFAKE_CLI
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>

#include "helpers.hpp"
#include "pipeline_helpers.hpp"

using nlohmann::json;
using testing_helpers::read_file;
using testing_helpers::TempDir;

namespace {

struct Result {
  int code;
  std::string output;  // stdout and stderr
};

Result cli(const std::string& args) {
  const std::string cmd = std::string(COALFAKE_CLI) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string out;
  std::array<char, 4096> buf;
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
  const int status = ::pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string write_tiny(const TempDir& dir, int rounds = 2) {
  auto j = testing_helpers::tiny_config(0);
  j["stop"]["max_rounds"] = rounds;
  testing_helpers::write_file(dir / "tiny.json", j.dump());
  return (dir / "tiny.json").string();
}

}  // namespace

TEST(Cli, RunWritesRoundsAndState) {
  TempDir dir;
  const auto r = cli("run --config " + write_tiny(dir) + " --out " + (dir / "out").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("round 1: macro_f1="), std::string::npos);
  EXPECT_NE(r.output.find("round 2: macro_f1="), std::string::npos);
  EXPECT_NE(r.output.find("stopped: max_rounds"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "out/state.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out/config.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out/round_002/metrics.json"));
}

TEST(Cli, OverridesAreAppliedAndLogged) {
  TempDir dir;
  const auto r = cli("run --config " + write_tiny(dir, 1) + " --sampling.strategy=random --set annotator.rho=0.5 --seed 9 --out " +
                     (dir / "out").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("strategy=random"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("rho=0.5"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("seed=9"), std::string::npos) << r.output;
  const auto cfg = json::parse(read_file(dir / "out/config.json"));
  EXPECT_EQ(cfg["sampling"]["strategy"], "random");
  EXPECT_EQ(cfg["seed"], 9);
}

TEST(Cli, ResumeFinishesARun) {
  TempDir dir;
  const auto cfg = write_tiny(dir, 1);
  ASSERT_EQ(cli("run --config " + cfg + " --out " + (dir / "out").string()).code, 0);
  const auto r = cli("run --resume " + (dir / "out/state.json").string() + " --out " + (dir / "out").string());
  EXPECT_EQ(r.code, 0) << r.output;  // already done: nothing to do
  EXPECT_NE(r.output.find("stopped: max_rounds"), std::string::npos);
}

TEST(Cli, MissingCorpusExitsTwoAndNamesPath) {
  TempDir dir;
  testing_helpers::write_file(dir / "bad.json", R"({"corpus":{"sources":[{"name":"a","path":"absent.jsonl"}]}})");
  const auto r = cli("run --config " + (dir / "bad.json").string() + " --out " + (dir / "out").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("absent.jsonl"), std::string::npos) << r.output;
}

TEST(Cli, BadInputExitsTwo) {
  TempDir dir;
  EXPECT_EQ(cli("run --config " + write_tiny(dir) + " --sampling.nope=1 --out " + (dir / "o").string()).code, 2);
  EXPECT_EQ(cli("run --config " + (dir / "missing.json").string()).code, 2);
  EXPECT_NE(cli("frobnicate").code, 0);
}

TEST(Cli, SweepSingleAndMultiPoint) {
  TempDir dir;
  const auto cfg = write_tiny(dir, 1);
  auto one = cli("sweep --config " + cfg + " --grid annotator.rho=0.2 --out " + (dir / "s1").string());
  ASSERT_EQ(one.code, 0) << one.output;
  EXPECT_EQ(json::parse(read_file(dir / "s1/sweep.json")).size(), 1u);

  auto three = cli("sweep --config " + cfg + " --grid annotator.rho=1.0,0,0.2 --out " + (dir / "s3").string());
  ASSERT_EQ(three.code, 0) << three.output;
  const auto rows = json::parse(read_file(dir / "s3/sweep.json"));
  ASSERT_EQ(rows.size(), 3u);
  std::vector<double> rho;
  for (const auto& r : rows) rho.push_back(std::stod(r["setting"]["annotator.rho"].get<std::string>()));
  EXPECT_EQ(rho, (std::vector<double>{0.0, 0.2, 1.0}));
  const auto csv = read_file(dir / "s3/sweep.csv");
  EXPECT_EQ(csv.rfind("annotator.rho,macro_f1,total_usd,rounds\n", 0), 0u) << csv;
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);

  EXPECT_EQ(cli("sweep --config " + cfg + " --grid annotator.rho= --out " + (dir / "s0").string()).code, 2);
}

TEST(Cli, EvalLlmPerfectMockScoresOne) {
  TempDir dir;
  const auto r = cli("eval-llm --config " + write_tiny(dir) + " --annotator.mock_accuracy=1.0 --out " + (dir / "e").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = json::parse(read_file(dir / "e/eval_llm.json"));
  EXPECT_EQ(j["plain"]["macro_f1"], 1.0);
  EXPECT_EQ(j["knn"]["macro_f1"], 1.0);
  EXPECT_GT(j["knn"]["cost"]["llm_usd"].get<double>(), 0.0);
}

TEST(Cli, ReportAggregatesRuns) {
  TempDir dir;
  const auto cfg = write_tiny(dir, 2);
  ASSERT_EQ(cli("run --config " + cfg + " --out " + (dir / "a").string()).code, 0);
  ASSERT_EQ(cli("run --config " + cfg + " --sampling.strategy=random --annotator.rho=0.5 --out " + (dir / "b").string()).code, 0);
  const auto r = cli("report --runs " + (dir / "a").string() + " " + (dir / "b").string() + " --out " + (dir / "rep").string());
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"curves.csv", "curves.json", "curves.svg", "rho.csv", "rho.json", "rho_f1.svg", "rho_cost.svg"})
    EXPECT_TRUE(std::filesystem::exists(dir / (std::string("rep/") + f))) << f;
  const auto curves = json::parse(read_file(dir / "rep/curves.json"));
  EXPECT_TRUE(curves.dump().find("random") != std::string::npos);
  EXPECT_NE(read_file(dir / "rep/curves.svg").find("<svg"), std::string::npos);
  EXPECT_EQ(cli("report --runs " + (dir / "nowhere").string() + " --out " + (dir / "r2").string()).code, 2);
}
#endif
