#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "wavemix/cli.hpp"

using namespace wavemix;
using cli::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("wavemix_cli_" + name);
  fs::remove_all(p);
  return p;
}

int run(const json& cfg, const fs::path& out) {
  std::ostringstream log;
  return cli::run(cfg, out, {}, log);
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string s; std::getline(in, s);) out.push_back(s);
  return out;
}

std::string error_key(const json& cfg, const std::string& name, int expect_code = 3) {
  auto out = scratch(name);
  EXPECT_EQ(run(cfg, out), expect_code);
  json err = read_json(out / "errors.json");
  EXPECT_EQ(err.at("exit_code").get<int>(), expect_code);
  return err.at("key").is_null() ? "" : err.at("key").get<std::string>();
}

}  // namespace

TEST(Cli, BranchHasOneRowPerStep) {
  auto out = scratch("branch");
  json cfg = {{"command", "branch"}, {"family", "lambda_omega"}, {"gamma", 0.5}, {"k", {0.1, 0.5}}, {"steps", 17}};
  ASSERT_EQ(run(cfg, out), 0);
  auto rows = lines(out / "branch.csv");
  ASSERT_EQ(rows.size(), 18u);
  EXPECT_EQ(rows[0], "k,omega,c_g,beta,residual_norm");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::stringstream ss(rows[i]);
    std::vector<double> v;
    for (std::string cell; std::getline(ss, cell, ',');) v.push_back(std::stod(cell));
    ASSERT_EQ(v.size(), 5u);
    EXPECT_NEAR(v[1], 0.5 * (1 - v[0] * v[0]), 1e-10);
    EXPECT_NEAR(v[2], -2 * 0.5 * v[0], 1e-8);
    EXPECT_NEAR(v[3], 0.5, 1e-6);
  }
  json meta = read_json(out / "meta.json");
  EXPECT_EQ(meta.at("seed"), 0);
  EXPECT_EQ(meta.at("resolved").at("steps"), 17);
  EXPECT_EQ(meta.at("resolved").at("M"), 64);
  EXPECT_FALSE(fs::exists(out / "errors.json"));
}

TEST(Cli, IdenticalConfigGivesIdenticalBytes) {
  json cfg = {{"command", "branch"}, {"gamma", 0.3}, {"k", {0.2, 0.4}}, {"steps", 9}};
  auto a = scratch("repro_a"), b = scratch("repro_b");
  ASSERT_EQ(run(cfg, a), 0);
  ASSERT_EQ(run(cfg, b), 0);
  EXPECT_EQ(lines(a / "branch.csv"), lines(b / "branch.csv"));
}

TEST(Cli, MalformedConfigNamesTheKey) {
  EXPECT_EQ(error_key({{"command", "branch"}, {"gama", 0.5}, {"k", {0.1, 0.5}}}, "unknown"), "gama");
  EXPECT_EQ(error_key({{"command", "branch"}, {"k", {0.1, 0.5}}, {"steps", "many"}}, "type"), "steps");
  EXPECT_EQ(error_key({{"command", "branch"}, {"k", {0.1, 0.5}}, {"steps", 4}}, "minimum"), "steps");
  EXPECT_EQ(error_key({{"command", "bloch"}}, "missing"), "k");
  EXPECT_EQ(error_key({{"command", "burgers"}, {"case", "ii"}, {"q0", {{"kind", "box"}}}}, "nested"), "q0.kind");
  EXPECT_EQ(error_key({{"command", "fly"}}, "command"), "command");
  EXPECT_EQ(error_key({{"command", "wavetrain"}, {"k", 0.3}, {"d", 1}, {"D", {1.0}},
                       {"f_polynomial", json::array()}},
                      "guess"),
            "guess");
}

TEST(Cli, RegimeErrorsExitTwo) {
  EXPECT_EQ(error_key({{"command", "wavetrain"}, {"k", 1.2}}, "regime", 2), "");
  auto out = fs::temp_directory_path() / "wavemix_cli_regime";
  json err = read_json(out / "errors.json");
  EXPECT_EQ(err.at("error"), "RegimeError");
  EXPECT_EQ(read_json(out / "meta.json").at("status"), "error");
}

TEST(Cli, WaveTrainArtifacts) {
  auto out = scratch("wavetrain");
  ASSERT_EQ(run({{"command", "wavetrain"}, {"gamma", 0.5}, {"k", 0.3}, {"M", 32}}, out), 0);
  json wt = read_json(out / "wavetrain.json");
  EXPECT_NEAR(wt.at("omega").get<double>(), 0.455, 1e-10);
  EXPECT_EQ(lines(out / "profile.csv").size(), 33u);
}

TEST(Cli, BurgersErrorTable) {
  auto out = scratch("burgers");
  json cfg = {{"command", "burgers"}, {"case", "ii"}, {"grid", {{"n", 512}, {"length", 100.0}}},
              {"T", {2.0, 4.0, 8.0}}};
  ASSERT_EQ(run(cfg, out), 0);
  auto rows = lines(out / "burgers_error.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "T,sup_err,weighted_err,fitted_slope_so_far");
}

TEST(Cli, SchemaCoversEveryCommand) {
  const json& cmds = cli::schema().at("commands");
  for (auto name : {"wavetrain", "branch", "bloch", "burgers", "rg", "simulate", "mixing-report"})
    EXPECT_TRUE(cmds.contains(name)) << name;
}

TEST(Cli, ExecutableExitCodes) {
  auto dir = scratch("exe");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "bad.json") << R"({"command": "branch", "k": [0.1, 0.5], "stepz": 17})";
  }
  std::string cmd = std::string(WAVEMIX_CLI_PATH) + " --config " + (dir / "bad.json").string() + " --out " +
                    (dir / "out").string() + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 3);
  EXPECT_EQ(read_json(dir / "out" / "errors.json").at("key"), "stepz");

  {
    std::ofstream(dir / "broken.json") << "{ not json";
  }
  cmd = std::string(WAVEMIX_CLI_PATH) + " --config " + (dir / "broken.json").string() + " --out " +
        (dir / "out2").string() + " > /dev/null 2>&1";
  status = std::system(cmd.c_str());
  EXPECT_EQ(WEXITSTATUS(status), 3);
}

TEST(Cli, MixingReportWritesRate) {
  auto out = scratch("mixing");
  json cfg = {{"command", "mixing-report"}, {"gamma", 0.0}, {"k", 0.3}, {"phi_d", 0.5},
              {"T", 100.0}, {"wavelengths", 64}};
  ASSERT_EQ(run(cfg, out), 0);
  json rate = read_json(out / "rate.json");
  EXPECT_LT(rate.at("slope").get<double>(), 0.0);
  EXPECT_EQ(rate.at("window").size(), 2u);
  EXPECT_EQ(lines(out / "error.csv")[0], "t,sup_err,weighted_err");
  EXPECT_TRUE(fs::exists(out / "fronts.csv"));
  EXPECT_TRUE(fs::exists(out / "fourier.csv"));
}
