#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace swid;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("swid_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // exit code of the CLI; stdout and stderr land in out.txt / err.txt
  int run(const std::string& args) const {
    const std::string cmd = std::string(SWID_CLI_PATH) + " " + args + " > " + path("out.txt") + " 2> " + path("err.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string slurp(const std::string& name) const {
    std::ifstream in(path(name));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

  fs::path dir_;
};

const char* kConfig = R"({"structure": "full", "family": "gaussian", "d": 3,
  "regressor": {"t_y": 2, "t_u": 2, "include_bias": true},
  "restarts": 2, "max_iters": 60, "seed": 4, "split": {"train": 400, "validation": 100}})";

}  // namespace

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("fit --data x.csv"), 1);
  EXPECT_EQ(run("bogus"), 1);
}

TEST_F(Cli, MalformedConfigNamesTheField) {
  save_csv(gen_markov_arx(200, 1).traj, path("data.csv"));
  write("bad.json", R"({"structure": "full", "d": 2})");
  EXPECT_EQ(run("fit --data " + path("data.csv") + " --config " + path("bad.json") + " --out " + path("m.json")), 1);
  EXPECT_NE(slurp("err.txt").find("'family'"), std::string::npos) << slurp("err.txt");
  write("broken.json", "{not json");
  EXPECT_EQ(run("fit --data " + path("data.csv") + " --config " + path("broken.json") + " --out " + path("m.json")), 1);
}

TEST_F(Cli, BadDataExitsTwo) {
  write("ragged.csv", "y1,u1\n1,2\n3\n");
  write("cfg.json", kConfig);
  EXPECT_EQ(run("fit --data " + path("ragged.csv") + " --config " + path("cfg.json") + " --out " + path("m.json")), 2);
  EXPECT_NE(slurp("err.txt").find("ragged.csv:3"), std::string::npos) << slurp("err.txt");
  EXPECT_EQ(run("fit --data " + path("missing.csv") + " --config " + path("cfg.json") + " --out " + path("m.json")), 2);
}

TEST_F(Cli, FitSimulatePredictEval) {
  const Benchmark b = gen_markov_arx(600, 2);
  save_csv(b.traj, path("data.csv"));
  write("cfg.json", kConfig);
  ASSERT_EQ(run("fit --quiet --data " + path("data.csv") + " --config " + path("cfg.json") + " --out " + path("m.json")), 0)
      << slurp("err.txt");
  const ModelFile mf = load_model(path("m.json"));
  EXPECT_EQ(mf.model.d, 3);
  EXPECT_EQ(mf.data_hash, trajectory_hash(b.traj));

  // the report's objective trace never increases
  std::ifstream rep_in(path("m.report.json"));
  const Json rep = Json::parse(rep_in);
  const auto& iters = rep.at("iterations");
  ASSERT_GE(iters.size(), 2u);
  for (std::size_t k = 1; k < iters.size(); ++k)
    EXPECT_GE(iters[k - 1].at("reg_nll").get<double>() - iters[k].at("reg_nll").get<double>(), -1e-8);

  // simulation is a function of the seed
  ASSERT_EQ(run("simulate --model " + path("m.json") + " --horizon 50 --seed 3 --inputs " + path("data.csv") +
                " --out " + path("s1.csv")),
            0)
      << slurp("err.txt");
  ASSERT_EQ(run("simulate --model " + path("m.json") + " --horizon 50 --seed 3 --inputs " + path("data.csv") +
                " --out " + path("s2.csv")),
            0);
  EXPECT_EQ(slurp("s1.csv"), slurp("s2.csv"));
  EXPECT_EQ(load_csv(path("s1.csv")).horizon(), 50);
  EXPECT_NE(run("simulate --model " + path("m.json") + " --horizon 50 --out " + path("s3.csv")), 0);

  ASSERT_EQ(run("predict --model " + path("m.json") + " --data " + path("data.csv") + " --warmup 501 --seed 1 --out " +
                path("pred.csv")),
            0)
      << slurp("err.txt");
  std::ifstream pred(path("pred.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(pred, line)) ++rows;
  EXPECT_EQ(rows, 100);

  ASSERT_EQ(run("eval --model " + path("m.json") + " --data " + path("data.csv") + " --warmup 501 --seed 1"), 0)
      << slurp("err.txt");
  const Json ev = Json::parse(slurp("out.txt"));
  PredictionConfig pc;
  pc.seed = 1;
  const Prediction p = recursive_one_step_predict(mf.model, mf.alpha0, b.traj, {501, 600}, pc);
  EXPECT_DOUBLE_EQ(ev.at("value").get<double>(), r2_score(b.traj.y.bottomRows(100), p.mean));
  EXPECT_EQ(ev.at("n").get<int>(), 100);

  EXPECT_EQ(run("eval --metric rmse --mode open-loop --samples 50 --model " + path("m.json") + " --data " +
                path("data.csv") + " --warmup 501"),
            0)
      << slurp("err.txt");
  EXPECT_GT(Json::parse(slurp("out.txt")).at("value").get<double>(), 0.0);
}
