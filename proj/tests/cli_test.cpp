#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "psqueeze/serialize.hpp"
#include "fixtures.hpp"

namespace fs = std::filesystem;
using psqueeze::io::json;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("psqueeze_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  void TearDown() override {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  int run(const std::string& args) {
    const std::string cmd = std::string(PSQUEEZE_CLI) + " " + args + " >" + (dir_ / "stdout").string() + " 2>" +
                            (dir_ / "stderr").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string out() const { return psqueeze::io::read_file(dir_ / "stdout"); }
  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, LocalizeProvinceIsp) {
  psqueeze::io::write_file(path("t2.csv"), fixtures::kProvinceIsp);
  ASSERT_EQ(run("localize --snapshot " + path("t2.csv").string() + " --measure fundamental@none --delta-exrc 0.7 --out " +
                path("r.json").string() + " --hist-out " + path("h.csv").string()),
            0);
  const auto r = json::parse(psqueeze::io::read_file(path("r.json")));
  EXPECT_EQ(r["version"], 1);
  ASSERT_EQ(r["root_causes"].size(), 1u);
  EXPECT_EQ(r["root_causes"][0], json::parse(R"([{"attr": "Province", "value": "Beijing"}])"));
  EXPECT_NEAR(r["min_gps"].get<double>(), 0.743, 0.001);
  EXPECT_FALSE(r["external_root_cause"].get<bool>());
  EXPECT_EQ(psqueeze::io::read_file(path("h.csv")).rfind("bin_center,density\n", 0), 0u);
}

TEST_F(Cli, InputErrorsExitWithOne) {
  EXPECT_EQ(run("localize --snapshot " + path("missing.csv").string()), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("localize --delta nope --snapshot x"), 1);
  psqueeze::io::write_file(path("bad.csv"), "A,real,predict\nx,1\n");
  EXPECT_EQ(run("localize --snapshot " + path("bad.csv").string()), 1);
}

TEST_F(Cli, ExrcThreshold) {
  psqueeze::io::write_file(path("h.json"), "[0.97, 0.98, 0.99, 0.55, 0.60]");
  ASSERT_EQ(run("exrc-threshold --history " + path("h.json").string()), 0);
  const double t = std::stod(out());
  EXPECT_GT(t, 0.60);
  EXPECT_LE(t, 0.97);
  psqueeze::io::write_file(path("few.json"), R"({"min_gps": [0.5]})");
  ASSERT_EQ(run("exrc-threshold --history " + path("few.json").string()), 0);
  EXPECT_EQ(out(), "0.8000\n");
}

TEST_F(Cli, SimulateThenEvaluate) {
  ASSERT_EQ(run("simulate --base synthetic:attrs=3,values=9,seed=2 --grid 1x1,2x2 --per-cell 2 --seed 3 --out " +
                path("ds").string()),
            0);
  EXPECT_TRUE(fs::exists(path("ds") / "dataset.json"));
  EXPECT_TRUE(fs::exists(path("ds") / "cell_2_2" / "fault_0001" / "truth.json"));
  ASSERT_EQ(run("evaluate --dataset " + path("ds").string() + " --workers 2 --out " + path("b.json").string()), 0);
  const auto b = json::parse(psqueeze::io::read_file(path("b.json")));
  EXPECT_EQ(b["cases"], 4);
  EXPECT_EQ(b["per_setting"].size(), 2u);
  EXPECT_TRUE(b["exrc_f1"].is_null());

  ASSERT_EQ(run("simulate --base synthetic:attrs=3,values=9,seed=2 --grid 1x1 --per-cell 2 --seed 3 --eliminate 1 --out " +
                path("ex").string()),
            0);
  ASSERT_EQ(run("evaluate --dataset " + path("ex").string()), 0);
  EXPECT_FALSE(json::parse(out())["exrc_f1"].is_null());
}
