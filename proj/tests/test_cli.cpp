#include "bodysim/cli.hpp"
#include "bodysim/dataio.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <sstream>

namespace bodysim {
namespace {

namespace fs = std::filesystem;
using testing::scratch_dir;

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "bodysim");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Small dataset plus checkpoints shared by the pipeline tests.
const fs::path& workspace() {
  static const fs::path dir = [] {
    const fs::path d = scratch_dir("workspace");
    const CliRun g = cli({"gen", "--out", (d / "data").string(), "--train", "40", "--test-a", "10",
                       "--test-b", "10", "--seed", "3"});
    EXPECT_EQ(g.code, 0) << g.err;
    const CliRun h = cli({"train-hw", "--out", (d / "hw").string(), "--samples", "1200", "--holdout",
                       "200", "--iterations", "300"});
    EXPECT_EQ(h.code, 0) << h.err;
    return d;
  }();
  return dir;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"measure", "--out", scratch_dir().string(), "--bogus"}).code, 2);
  EXPECT_EQ(cli({"train"}).code, 2);  // --data and --out required
  EXPECT_EQ(cli({"gen", "--out", "x", "--workers", "0"}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, RuntimeFailureExitsOneAndNamesStage) {
  const CliRun r = cli({"eval", "--bmnet", "/nonexistent.ckpt", "--data", "/nonexistent", "--out",
                     scratch_dir().string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("bodysim eval:", 0), 0u) << r.err;
  const CliRun b = cli({"measure", "--out", scratch_dir().string(), "--beta", "1,2,3,4,5,6,7,8,9,10,11"});
  EXPECT_EQ(b.code, 1);
  EXPECT_NE(b.err.find("at most 10"), std::string::npos);
}

TEST(Cli, MeasureWritesCsvAndRunManifest) {
  const auto dir = scratch_dir();
  const CliRun r = cli({"measure", "--out", dir.string(), "--beta", "1,0,-0.5", "--seed", "7"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("# bodysim 1.0.0 command=measure seed=7 config_hash=", 0), 0u);
  EXPECT_EQ(lines(read_file(dir / "measurements.csv")), 1u + kNumMeasurements + 3u);
  const auto m = nlohmann::json::parse(read_file(dir / "run_manifest.json"));
  EXPECT_EQ(m["command"], "measure");
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["config"]["beta"].size(), 3u);
  EXPECT_EQ(m["config_hash"].get<std::string>().size(), 16u);
}

TEST(Cli, RenderThenMeasureObjAgrees) {
  const auto dir = scratch_dir();
  ASSERT_EQ(cli({"render", "--out", dir.string(), "--beta", "0.5,1", "--soft"}).code, 0);
  for (const char* f : {"frontal.pgm", "lateral.pgm", "frontal_soft.absf", "mesh.obj"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto a = scratch_dir("a"), b = scratch_dir("b");
  ASSERT_EQ(cli({"measure", "--out", a.string(), "--beta", "0.5,1"}).code, 0);
  ASSERT_EQ(cli({"measure", "--out", b.string(), "--mesh", (dir / "mesh.obj").string()}).code, 0);
  std::istringstream ia(read_file(a / "measurements.csv")), ib(read_file(b / "measurements.csv"));
  std::string la, lb;
  std::getline(ia, la);
  std::getline(ib, lb);
  while (std::getline(ia, la) && std::getline(ib, lb)) {
    const double va = std::stod(la.substr(la.find(',') + 1));
    const double vb = std::stod(lb.substr(lb.find(',') + 1));
    EXPECT_NEAR(va, vb, 1e-5) << la;
  }
}

TEST(Cli, TrainEvalPipeline) {
  const fs::path& w = workspace();
  const Dataset ds = load_manifest(w / "data" / kManifestName);
  EXPECT_EQ(ds.samples.size(), 60u);
  EXPECT_TRUE(fs::exists(w / "hw" / "hwnet.ckpt"));
  const auto out = scratch_dir();
  const CliRun t = cli({"train", "--data", (w / "data").string(), "--out", out.string(), "--iterations",
                     "30", "--eval-every", "10", "--real-iterations", "10", "--pool", "gap"});
  ASSERT_EQ(t.code, 0) << t.err;
  for (const char* f : {"bmnet.ckpt", "train_log.csv", "real_log.csv", "metrics.csv"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_FALSE(fs::exists(out / "synthetic_log.csv"));
  EXPECT_EQ(load_bmnet(out / "bmnet.ckpt").arch().pool, PoolMode::kGlobalAverage);

  const auto ev = scratch_dir("eval");
  const CliRun e = cli({"eval", "--bmnet", (out / "bmnet.ckpt").string(), "--data", (w / "data").string(),
                     "--out", ev.string()});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("test n=20 "), std::string::npos) << e.out;
  EXPECT_EQ(lines(read_file(ev / "metrics.csv")), 2u);
  EXPECT_EQ(cli({"eval", "--bmnet", (out / "bmnet.ckpt").string(), "--data", (w / "data").string(),
                 "--out", ev.string(), "--split", "val"}).code, 1);
}

TEST(Cli, AugmentedTrainingNeedsRegressor) {
  const fs::path& w = workspace();
  const CliRun r = cli({"train", "--data", (w / "data").string(), "--out", scratch_dir("noreg").string(),
                     "--aug", "random", "--iterations", "5"});
  EXPECT_EQ(r.code, 1);
  const auto out = scratch_dir();
  const CliRun ok = cli({"train", "--data", (w / "data").string(), "--out", out.string(), "--aug", "adv",
                      "--hw", (w / "hw" / "hwnet.ckpt").string(), "--iterations", "5", "--epochs", "1",
                      "--per-epoch", "4", "--real-iterations", "2", "--pool", "gap"});
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_TRUE(fs::exists(out / "synthetic_log.csv"));
}

TEST(Cli, AttackDefaultsAndOutputs) {
  const fs::path& w = workspace();
  const auto net_dir = scratch_dir("net");
  Rng rng(1);
  save_checkpoint(BMnet::init(BMnetArch{}, rng), net_dir / "bmnet.ckpt");
  const auto out = scratch_dir();
  const CliRun r = cli({"attack", "--bmnet", (net_dir / "bmnet.ckpt").string(), "--hw",
                     (w / "hw" / "hwnet.ckpt").string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = nlohmann::json::parse(read_file(out / "run_manifest.json"));
  EXPECT_EQ(m["config"]["eta"], 0.1);
  EXPECT_EQ(m["config"]["steps"], 10);
  EXPECT_EQ(m["config"]["clamp"], 3.0);
  EXPECT_EQ(m["config"]["init"], "ball");
  EXPECT_EQ(lines(read_file(out / "trace_0.csv")), 12u);  // header + k+1 states
  EXPECT_TRUE(fs::exists(out / "final_frontal_0.pgm"));
  EXPECT_EQ(lines(read_file(out / "attack_summary.csv")), 2u);

  const CliRun pool = cli({"attack", "--bmnet", (net_dir / "bmnet.ckpt").string(), "--hw",
                        (w / "hw" / "hwnet.ckpt").string(), "--out", scratch_dir("pool").string(), "--init",
                        "pool"});
  EXPECT_EQ(pool.code, 1);  // pool init needs --data
  EXPECT_EQ(cli({"attack", "--bmnet", "a", "--hw", "b", "--out", "c", "--init", "grid"}).code, 1);
}

TEST(Cli, AnalyzeWritesTables) {
  const fs::path& w = workspace();
  const auto net_dir = scratch_dir("net");
  Rng rng(2);
  save_checkpoint(BMnet::init(BMnetArch{}, rng), net_dir / "bmnet.ckpt");
  const auto out = scratch_dir();
  const CliRun r = cli({"analyze", "--bmnet", (net_dir / "bmnet.ckpt").string(), "--hw",
                     (w / "hw" / "hwnet.ckpt").string(), "--out", out.string(), "--count", "3",
                     "--steps", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(read_file(out / "adversarial.csv")), 4u);
  EXPECT_EQ(lines(read_file(out / "random.csv")), 4u);
  EXPECT_TRUE(fs::exists(out / "summary.csv"));
}

TEST(Cli, GradcheckFreshWeightsPasses) {
  const auto out = scratch_dir();
  const CliRun r = cli({"gradcheck", "--out", out.string(), "--trials", "3"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("PASS"), std::string::npos) << r.out;
  EXPECT_EQ(lines(read_file(out / "gradcheck.csv")), 4u);
}

TEST(Cli, SeededRunsAreByteIdentical) {
  const auto a = scratch_dir("a"), b = scratch_dir("b");
  for (const auto& d : {a, b}) {
    ASSERT_EQ(cli({"gen", "--out", d.string(), "--train", "12", "--test-a", "4", "--test-b", "4",
                   "--seed", "5"}).code, 0);
  }
  EXPECT_EQ(read_file(a / kManifestName), read_file(b / kManifestName));
  EXPECT_EQ(read_file(a / "run_manifest.json"), read_file(b / "run_manifest.json"));
}

}  // namespace
}  // namespace bodysim
