// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "hdriqa/io.hpp"
#include "test_util.hpp"

using hdriqa::test::TempDir;
using json = nlohmann::json;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = hdriqa::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json echoed(const std::string& out, const std::string& command) {
  const std::string tag = "config " + command + " ";
  const auto pos = out.find(tag);
  if (pos == std::string::npos) return {};
  const auto end = out.find('\n', pos);
  return json::parse(out.substr(pos + tag.size(), end - pos - tag.size()));
}

// One small dataset and bundle shared by the tests below.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    const auto d = dir_->path().string();
    ASSERT_EQ(cli({"synth", "--out", d + "/ds", "--contents", "3", "--levels", "2", "--size", "64"}).code, 0);
    const CliResult t = cli({"train", "--manifest", d + "/ds/manifest.json", "--out", d + "/a.bin", "--epochs1", "1",
                       "--epochs2", "1", "--batch", "16", "--seed", "4", "--quiet"});
    ASSERT_EQ(t.code, 0) << t.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string path(const std::string& rel) { return (dir_->path() / rel).string(); }

  static TempDir* dir_;
};

TempDir* CliPipeline::dir_ = nullptr;

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"frobnicate"}).code, 1);
  EXPECT_EQ(cli({"grating", "--bogus", "1"}).code, 1);
  EXPECT_EQ(cli({"grating"}).code, 1);  // --out is required
  const CliResult r = cli({"grating", "--out", "x.pfm", "--width", "abc"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("hdriqa:"), std::string::npos);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, GratingEchoesConfigAndWritesPeak) {
  TempDir dir("cli_g");
  const std::string out = (dir / "g.pfm").string();
  const CliResult r = cli({"grating", "--out", out, "--width", "64", "--height", "32"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json cfg = echoed(r.out, "grating");
  EXPECT_EQ(cfg.at("width"), 64);
  EXPECT_EQ(cfg.at("peak"), 4000.0);
  const hdriqa::HdrImage img = hdriqa::read_pfm(out);
  EXPECT_EQ(img.width, 64);
  EXPECT_EQ(*std::max_element(img.data.begin(), img.data.end()), 4000.0);
}

TEST(Cli, ConfigFileUnderFlags) {
  TempDir dir("cli_c");
  hdriqa::test::write_bytes(dir / "c.json", R"({"width": 40, "height": 40, "peak": 100.0})");
  const CliResult r = cli({"grating", "--config", (dir / "c.json").string(), "--out", (dir / "g.pfm").string(),
                     "--height", "36"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json cfg = echoed(r.out, "grating");
  EXPECT_EQ(cfg.at("width"), 40);
  EXPECT_EQ(cfg.at("height"), 36);
  EXPECT_EQ(cfg.at("peak"), 100.0);
  hdriqa::test::write_bytes(dir / "bad.json", R"({"widht": 40})");
  EXPECT_EQ(cli({"grating", "--config", (dir / "bad.json").string(), "--out", (dir / "g.pfm").string()}).code, 1);
  hdriqa::test::write_bytes(dir / "broken.json", "{");
  EXPECT_EQ(cli({"grating", "--config", (dir / "broken.json").string(), "--out", (dir / "g.pfm").string()}).code,
            2);
}

TEST(Cli, DataErrorsExitTwo) {
  const CliResult r = cli({"predict", "--bundle", "/nonexistent/b.bin", "--image", "/nonexistent/i.pfm"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  EXPECT_EQ(cli({"train", "--manifest", "/nonexistent/m.json", "--out", "/tmp/x.bin"}).code, 2);
}

TEST(Cli, GradcheckReport) {
  TempDir dir("cli_gc");
  const CliResult r = cli({"gradcheck", "--entries", "4", "--out", (dir / "gc.json").string()});
  ASSERT_EQ(r.code, 0) << r.out << r.err;
  const json j = json::parse(hdriqa::test::read_bytes(dir / "gc.json"));
  EXPECT_TRUE(j.at("passed").get<bool>());
  EXPECT_LT(j.at("max_rel_error").get<double>(), 1e-4);
  EXPECT_EQ(echoed(r.out, "gradcheck").at("seed"), 0);
}

TEST_F(CliPipeline, TrainIsDeterministic) {
  const CliResult r = cli({"train", "--manifest", path("ds/manifest.json"), "--out", path("b.bin"), "--epochs1", "1",
                     "--epochs2", "1", "--batch", "16", "--seed", "4", "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(echoed(r.out, "train").at("seed"), 4);
  EXPECT_EQ(hdriqa::test::read_bytes(path("a.bin")), hdriqa::test::read_bytes(path("b.bin")));
}

TEST_F(CliPipeline, StagedTrainingMatchesOneShot) {
  ASSERT_EQ(cli({"train", "--manifest", path("ds/manifest.json"), "--out", path("s1.bin"), "--epochs1", "1",
                 "--batch", "16", "--seed", "4", "--stage", "1", "--quiet"})
                .code,
            0);
  const CliResult r = cli({"train", "--manifest", path("ds/manifest.json"), "--out", path("s2.bin"), "--epochs2", "1",
                     "--batch", "16", "--seed", "4", "--stage", "2", "--init", path("s1.bin"), "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(cli({"train", "--manifest", path("ds/manifest.json"), "--out", path("once.bin"), "--epochs1", "1",
                 "--epochs2", "1", "--batch", "16", "--seed", "4", "--quiet"})
                .code,
            0);
  EXPECT_EQ(hdriqa::test::read_bytes(path("s2.bin")), hdriqa::test::read_bytes(path("once.bin")));
  EXPECT_EQ(cli({"train", "--manifest", path("ds/manifest.json"), "--out", path("x.bin"), "--stage", "2"}).code, 1);
}

TEST_F(CliPipeline, PredictWritesJsonAndMaps) {
  const CliResult r = cli({"predict", "--bundle", path("a.bin"), "--image", path("ds/dist/c0_blur_2.pfm"), "--out",
                     path("p.json"), "--maps", path("maps")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(hdriqa::test::read_bytes(path("p.json")));
  const auto& q = j.at("dmos_patch").at("values");
  ASSERT_EQ(q.size(), 4u);
  double sum = 0.0;
  for (const auto& v : q) sum += v.get<double>();
  EXPECT_NEAR(j.at("score").get<double>(), 100.0 * sum / 4.0, 1e-9);
  EXPECT_EQ(j.at("t_resist").at("values").size(), 4u);
  for (const char* m : {"dmos.ppm", "t.ppm", "delta.ppm"}) {
    EXPECT_TRUE(std::filesystem::exists(path(std::string("maps/") + m))) << m;
  }
}

TEST_F(CliPipeline, EvalBundleModeAndHeatmap) {
  const CliResult r = cli({"eval", "--manifest", path("ds/manifest.json"), "--bundle", path("a.bin"), "--out",
                     path("report.json")});
  // A one-epoch model may still be constant; either a report or a numeric failure is acceptable here.
  ASSERT_TRUE(r.code == 0 || r.code == 3) << r.err;
  if (r.code == 0) {
    const json j = json::parse(hdriqa::test::read_bytes(path("report.json")));
    EXPECT_EQ(j.at("n_iterations"), 1);
  }
  const CliResult h = cli({"heatmap", "--bundle", path("a.bin"), "--image", path("ds/refs/c1.pfm"), "--map", "t",
                     "--out", path("h.ppm")});
  ASSERT_EQ(h.code, 0) << h.err;
  EXPECT_EQ(hdriqa::test::read_bytes(path("h.ppm")).substr(0, 9), "P6\n64 64\n");
  EXPECT_EQ(cli({"heatmap", "--bundle", path("a.bin"), "--image", path("ds/refs/c1.pfm"), "--map", "q", "--out",
                 path("h2.ppm")})
                .code,
            1);
}

TEST_F(CliPipeline, ProbeReportsOracleCorrelation) {
  const CliResult r = cli({"probe", "--bundle", path("a.bin"), "--image", path("ds/refs/c2.pfm"), "--oracle", "--out",
                     path("probe.json")});
  ASSERT_TRUE(r.code == 0 || r.code == 3) << r.err;
  if (r.code == 0) {
    const json j = json::parse(hdriqa::test::read_bytes(path("probe.json")));
    EXPECT_EQ(j.at("t_resist").at("values").size(), 4u);
    EXPECT_TRUE(j.contains("oracle_srcc"));
  }
  EXPECT_EQ(cli({"probe", "--bundle", path("a.bin"), "--scale", "-1"}).code, 1);
}
