#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "support/textures.hpp"
#include "ufe/checkpoint.hpp"
#include "ufe/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ufe;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(UFE_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.out += buf;
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string checksum(const std::string& out) {
  const auto pos = out.find("manifest crc32: ");
  return pos == std::string::npos ? "" : out.substr(pos + 16, 8);
}

class Cli : public ::testing::Test {
 protected:
  static inline fs::path dir;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("ufe_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "tiny.json") << R"({
      "dataset": {"image_size": 32, "max_step": 1.0, "train_clips": 20, "val_clips": 3, "test_clips": 3},
      "train": {"max_iterations": 6, "burn_in_iterations": 3, "labeled_batch": 2, "unlabeled_batch": 2,
                "labeled_fraction": 0.2, "eval_every": 4, "checkpoint_every": 3}})";
    const auto r = run("gen-data --config " + (dir / "tiny.json").string() + " --out " + (dir / "data").string());
    ASSERT_EQ(r.code, 0) << r.out;
    const auto t = run("train --config " + (dir / "tiny.json").string() + " --data " + (dir / "data").string() +
                       " --out " + (dir / "run").string());
    ASSERT_EQ(t.code, 0) << t.out;
  }
  static void TearDownTestSuite() { fs::remove_all(dir); }

  static std::string tiny() { return (dir / "tiny.json").string(); }
  static std::string data() { return (dir / "data").string(); }
};

}  // namespace

TEST_F(Cli, GenDataReportsCountsAndPreviews) {
  const auto r = run("gen-data --config " + tiny() + " --out " + (dir / "g1").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("train: 20 clips"), std::string::npos);
  EXPECT_NE(r.out.find("val: 3 clips"), std::string::npos);
  EXPECT_NE(r.out.find("test: 3 clips"), std::string::npos);
  int previews = 0;
  for (const auto& e : fs::directory_iterator(dir / "g1" / "previews")) previews += e.path().extension() == ".png";
  EXPECT_EQ(previews, 3);
}

TEST_F(Cli, GenDataRefusesNonEmptyOutput) {
  const auto r = run("gen-data --config " + tiny() + " --out " + data());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("--force"), std::string::npos);
  const auto f = run("gen-data --config " + tiny() + " --out " + (dir / "g1").string() + " --force");
  EXPECT_EQ(f.code, 0) << f.out;
}

TEST_F(Cli, GenDataChecksumsFollowTheSeed) {
  std::set<std::string> sums;
  for (int s = 0; s < 10; ++s) {
    const auto r = run("gen-data --config " + tiny() + " --seed " + std::to_string(s) + " --force --out " +
                       (dir / "seeds").string());
    ASSERT_EQ(r.code, 0) << r.out;
    sums.insert(checksum(r.out));
  }
  EXPECT_EQ(sums.size(), 10u);
  const auto again = run("gen-data --config " + tiny() + " --seed 3 --force --out " + (dir / "seeds").string());
  EXPECT_TRUE(sums.count(checksum(again.out)));
}

TEST_F(Cli, ConfigRejectsUnknownKeys) {
  std::ofstream(dir / "bad.json") << R"({"train": {"max_iteration": 5}})";
  const auto r = run("gen-data --config " + (dir / "bad.json").string() + " --out " + (dir / "nope").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("train.max_iteration"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "nope"));
}

TEST_F(Cli, TrainWritesRunArtifacts) {
  const fs::path run_dir = dir / "run";
  for (const char* f : {"config.json", "log.jsonl", "final.ckpt", "ckpt_3.ckpt", "eval_test.json"})
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  std::ifstream log(run_dir / "log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  EXPECT_EQ(lines, 6 / 4 + 1);
  EXPECT_EQ(read_json(run_dir / "config.json")["train"]["max_iterations"], 6);
}

TEST_F(Cli, EchoedConfigReproducesTheRun) {
  const auto r = run("train --config " + (dir / "run" / "config.json").string() + " --data " + data() +
                     " --out " + (dir / "rerun").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto a = ckpt::load((dir / "run" / "final.ckpt").string());
  const auto b = ckpt::load((dir / "rerun" / "final.ckpt").string());
  ASSERT_EQ(a.arrays.size(), b.arrays.size());
  for (std::size_t i = 0; i < a.arrays.size(); ++i) {
    EXPECT_EQ(a.arrays[i].name, b.arrays[i].name);
    EXPECT_TRUE(a.arrays[i].values == b.arrays[i].values) << a.arrays[i].name;
  }
  EXPECT_EQ(a.meta["train"], b.meta["train"]);
}

TEST_F(Cli, TrainRejectsBadModeAndReusedRunDir) {
  EXPECT_EQ(run("train --config " + tiny() + " --data " + data() + " --out " + (dir / "x").string() +
                " --mode semi").code, 2);
  EXPECT_EQ(run("train --config " + tiny() + " --data " + data() + " --out " + (dir / "run").string()).code, 3);
}

TEST_F(Cli, EvalIsRepeatableAndMatchesLastLog) {
  const std::string ck = (dir / "run" / "final.ckpt").string();
  const auto a = run("eval --checkpoint " + ck + " --data " + data() + " --split val --out " + (dir / "e1.json").string());
  const auto b = run("eval --checkpoint " + ck + " --data " + data() + " --split val --out " + (dir / "e2.json").string());
  ASSERT_EQ(a.code, 0) << a.out;
  const auto r1 = read_json(dir / "e1.json"), r2 = read_json(dir / "e2.json");
  EXPECT_EQ(r1, r2);
  std::ifstream log(dir / "run" / "log.jsonl");
  std::string line, last;
  while (std::getline(log, line)) last = line;
  const auto rec = json::parse(last);
  EXPECT_EQ(r1["miou"].get<double>(), rec["miou"].get<double>());
  EXPECT_EQ(r1["fscore"].get<double>(), rec["fscore"].get<double>());
}

TEST_F(Cli, EvalRejectsUnknownAndUnlabeledSplits) {
  const std::string ck = (dir / "run" / "final.ckpt").string();
  const auto bogus = run("eval --checkpoint " + ck + " --data " + data() + " --split bogus");
  EXPECT_EQ(bogus.code, 2);
  EXPECT_NE(bogus.out.find("train,val,test"), std::string::npos) << bogus.out;
  EXPECT_EQ(run("eval --checkpoint " + ck + " --data " + data() + " --split train").code, 3);
}

TEST_F(Cli, FlowVizTranslationAndIdentity) {
  auto pair = oracle::translated_pair(64, 3, 0, 5);
  image::write_png((dir / "a.png").string(), pair.a);
  image::write_png((dir / "b.png").string(), pair.b);
  const auto r = run("flow-viz --frame-a " + (dir / "a.png").string() + " --frame-b " + (dir / "b.png").string() +
                     " --out " + (dir / "flow.png").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto stats = read_json(dir / "flow.json");
  EXPECT_NEAR(stats["mean_magnitude"].get<double>(), 3.0, 0.5);
  EXPECT_GT(stats["mean_dx"].get<double>(), 2.5);
  EXPECT_LT(std::abs(stats["mean_dy"].get<double>()), 0.5);
  const auto viz = image::read_png((dir / "flow.png").string());
  EXPECT_EQ(viz.shape(), (Shape{3, 64, 64}));

  const auto same = run("flow-viz --frame-a " + (dir / "a.png").string() + " --frame-b " +
                        (dir / "a.png").string() + " --out " + (dir / "still.png").string());
  ASSERT_EQ(same.code, 0);
  EXPECT_LT(read_json(dir / "still.json")["mean_magnitude"].get<double>(), 0.05);
  double sum = 0;
  for (float v : image::read_png((dir / "still.png").string()).values()) sum += v;
  EXPECT_LT(sum / (3 * 64 * 64), 0.05);

  image::write_png((dir / "small.png").string(), Tensor::zeros({3, 32, 32}));
  EXPECT_EQ(run("flow-viz --frame-a " + (dir / "a.png").string() + " --frame-b " + (dir / "small.png").string() +
                " --out " + (dir / "bad.png").string()).code, 3);
}

TEST_F(Cli, PredictWritesMaskAndProbabilityMap) {
  auto pair = oracle::translated_pair(32, 1, 0, 6);
  image::write_png((dir / "f.png").string(), pair.a);
  image::write_png((dir / "n.png").string(), pair.b);
  std::ofstream(dir / "audio.json") << "[0,1,0,0,0,0,0,0,0,0,0,0,0,0,0,0]";
  const std::string base = "predict --checkpoint " + (dir / "run" / "final.ckpt").string() + " --frame " +
                           (dir / "f.png").string() + " --audio " + (dir / "audio.json").string();
  const auto r = run(base + " --neighbor " + (dir / "n.png").string() + " --out " + (dir / "mask.png").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto mask = image::read_png((dir / "mask.png").string());
  EXPECT_EQ(mask.shape(), (Shape{3, 32, 32}));
  for (float v : mask.values()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
  EXPECT_TRUE(fs::exists(dir / "mask_prob.png"));
  const auto stats = json::parse(r.out.substr(r.out.find('{')));
  EXPECT_GT(stats["mean_probability"].get<double>(), 0.0);
  EXPECT_LT(stats["mean_probability"].get<double>(), 1.0);

  const auto no_neighbor = run(base + " --neighbor " + (dir / "missing.png").string() + " --out " +
                               (dir / "mask2.png").string());
  EXPECT_EQ(no_neighbor.code, 0);
  EXPECT_NE(no_neighbor.out.find("warning"), std::string::npos);

  std::ofstream(dir / "short.json") << "[1,0,0]";
  EXPECT_EQ(run("predict --checkpoint " + (dir / "run" / "final.ckpt").string() + " --frame " +
                (dir / "f.png").string() + " --audio " + (dir / "short.json").string() + " --out " +
                (dir / "m3.png").string()).code, 3);
  EXPECT_FALSE(fs::exists(dir / "m3.png"));
}
