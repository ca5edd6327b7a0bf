#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "scalestack/commands.hpp"

using namespace scalestack;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// One scratch tree for the whole suite; the synthetic corpus is shared.
class Cli : public ::testing::Test {
 protected:
  static fs::path root() { return fs::temp_directory_path() / "sstk_cli_tests"; }
  static fs::path corpus() { return root() / "corpus"; }
  static fs::path manifest() { return corpus() / "manifest.csv"; }

  static void SetUpTestSuite() {
    fs::remove_all(root());
    fs::create_directories(root());
    const auto r = run("--seed 3 synth --out " + corpus().string() +
                       " --classes 4 --per-class 10 --base-side 64 --masks");
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root()); }

  static Result run(const std::string& args, const std::string& env = "") {
    const auto out = root() / "stdout.txt";
    const auto err = root() / "stderr.txt";
    const std::string cmd = env + (env.empty() ? "" : " ") + SCALESTACK_CLI + " " + args + " >" +
                            out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  static std::string common(const fs::path& out) {
    return "--manifest " + manifest().string() + " --scales 32,64 --output " + out.string();
  }

  static std::size_t count_files(const fs::path& dir, const std::string& ext) {
    std::size_t n = 0;
    if (!fs::exists(dir)) return 0;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      n += e.is_regular_file() && e.path().extension() == ext;
    return n;
  }
};

void expect_error_line(const Result& r, const std::string& code) {
  EXPECT_NE(r.code, 0);
  const std::string prefix = "error: " + code + ":";
  EXPECT_EQ(r.err.rfind(prefix, 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
}

}  // namespace

TEST_F(Cli, SynthWritesCorpusAndProvenance) {
  EXPECT_EQ(count_files(corpus() / "images", ".png"), 40u);
  EXPECT_EQ(count_files(corpus() / "masks", ".png"), 40u);
  const auto prov = json::parse(slurp(corpus() / "provenance.json"));
  EXPECT_EQ(prov["classes"].size(), 4u);
  EXPECT_TRUE(fs::exists(corpus() / "run.json"));
}

TEST_F(Cli, UsageErrors) {
  expect_error_line(run(""), "usage");
  expect_error_line(run("train"), "usage");
  expect_error_line(run("--pyramid-kind laplacian prepare"), "usage");
}

TEST_F(Cli, BadManifestAndConfig) {
  expect_error_line(run("--manifest " + (root() / "nope.csv").string() + " prepare"), "manifest");
  expect_error_line(run(common(root() / "bad") + " --scales 32,96 prepare"), "config");
  expect_error_line(run(common(root() / "bad") + " --lr-decay 0.5 prepare"), "config");
}

TEST_F(Cli, TrainBeforePrepareNamesPrepare) {
  const auto r = run(common(root() / "noprep") + " train --scale 32");
  expect_error_line(r, "missing-cache");
  EXPECT_NE(r.err.find("prepare"), std::string::npos);
}

TEST_F(Cli, EvalWithoutCheckpointNamesIt) {
  const auto out = root() / "nockpt";
  ASSERT_EQ(run(common(out) + " prepare").code, 0);
  const auto r = run(common(out) + " eval");
  expect_error_line(r, "missing-checkpoint");
  EXPECT_NE(r.err.find("32"), std::string::npos);
}

TEST_F(Cli, PrepareIsIdempotentAndCacheEnvWins) {
  const auto out = root() / "prep";
  const auto env_cache = root() / "env_cache";
  auto r = run(common(out) + " --cache " + (root() / "flag_cache").string() + " prepare",
               "SCALESTACK_CACHE=" + env_cache.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("written=80 skipped=0"), std::string::npos) << r.out;
  EXPECT_EQ(count_files(env_cache / "32", ".png"), 40u);
  EXPECT_EQ(count_files(env_cache / "64", ".png"), 40u);
  EXPECT_FALSE(fs::exists(root() / "flag_cache"));
  r = run(common(out) + " prepare", "SCALESTACK_CACHE=" + env_cache.string());
  EXPECT_NE(r.out.find("written=0 skipped=80"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(env_cache / "run.json"));
}

TEST_F(Cli, NaiveAndGaussianCachesDifferBelowFinest) {
  const auto g = root() / "cache_g";
  const auto n = root() / "cache_n";
  ASSERT_EQ(run(common(root() / "kg") + " --cache " + g.string() + " prepare").code, 0);
  ASSERT_EQ(run(common(root() / "kn") + " --cache " + n.string() + " --pyramid-kind naive prepare").code, 0);
  std::size_t same_finest = 0, diff_coarse = 0;
  for (const auto& e : fs::directory_iterator(g / "64"))
    same_finest += file_sha256(e.path()) == file_sha256(n / "64" / e.path().filename());
  for (const auto& e : fs::directory_iterator(g / "32"))
    diff_coarse += file_sha256(e.path()) != file_sha256(n / "32" / e.path().filename());
  EXPECT_EQ(same_finest, 40u);
  EXPECT_EQ(diff_coarse, 40u);
}

TEST_F(Cli, ConfigFileWithFlagOverride) {
  const auto out = root() / "cfg";
  const auto cfg = root() / "run.cfg";
  std::ofstream(cfg) << "manifest=" << manifest().string() << "\nscales=32,64\noutput=" << out.string()
                     << "\nepochs=1\nbatch-size=4\nseed=5\n";
  ASSERT_EQ(run("--config " + cfg.string() + " prepare").code, 0);
  const auto r = run("--config " + cfg.string() + " --epochs 2 train --scale 32");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rj = json::parse(slurp(out / "scale_32" / "run.json"));
  const std::string dump = rj.dump();
  EXPECT_NE(dump.find("\"max_epochs\":2"), std::string::npos) << dump;
  EXPECT_NE(dump.find("\"batch_size\":4"), std::string::npos) << dump;
  EXPECT_NE(slurp(out / "scale_32" / "train_log.csv").find("epoch,train_loss,val_loss,val_mca,lr"),
            std::string::npos);
}

TEST_F(Cli, TrainEvalVisualizeEndToEnd) {
  const auto out = root() / "e2e";
  const std::string base = common(out) + " --epochs 2 --batch-size 4";
  ASSERT_EQ(run(base + " prepare").code, 0);
  std::string shas[2];
  for (int rep = 0; rep < 2; ++rep) {
    for (std::size_t s : {32u, 64u}) {
      const auto r = run(base + " train --scale " + std::to_string(s));
      ASSERT_EQ(r.code, 0) << r.err;
    }
    shas[rep] = file_sha256(out / "scale_64" / "net.sstk");
  }
  EXPECT_EQ(shas[0], shas[1]);
  for (std::size_t s : {32u, 64u}) {
    EXPECT_TRUE(fs::exists(out / ("scale_" + std::to_string(s)) / "net.json"));
    EXPECT_TRUE(fs::exists(out / ("scale_" + std::to_string(s)) / "normalization.json"));
  }
  const auto r = run(base + " eval");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto subsets = slurp(out / "report" / "subsets.csv");
  EXPECT_EQ(std::count(subsets.begin(), subsets.end(), '\n'), 4);  // header + 3 subsets
  for (auto f : {"summary.txt", "correlations.csv", "variation.csv", "predictions.csv", "run.json"})
    EXPECT_TRUE(fs::exists(out / "report" / f)) << f;

  const auto png = out / "saliency.png";
  const auto image = corpus() / "images" / "class_01" / "class_01_0000.png";
  const auto v = run("visualize --checkpoint " + (out / "scale_64" / "net.sstk").string() + " --image " +
                     image.string() + " --class class_01 --out " + png.string());
  ASSERT_EQ(v.code, 0) << v.err;
  const auto sal = read_png(png);
  EXPECT_EQ(sal.channels(), 1u);
  EXPECT_EQ(sal.shortest_side(), 64u);
  expect_error_line(run("visualize --checkpoint " + (out / "scale_64" / "net.sstk").string() + " --image " +
                        image.string() + " --class nobody --out " + png.string()),
                    "class");
}

TEST_F(Cli, PyramidCommand) {
  const auto out = root() / "pyr";
  const auto image = corpus() / "images" / "class_00" / "class_00_0000.png";
  const auto r = run("pyramid --input " + image.string() + " --levels 3 --base 64 --kind naive --out " +
                     out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_png(out / "level_0_16.png").shortest_side(), 16u);
  EXPECT_EQ(read_png(out / "level_2_64.png").shortest_side(), 64u);
  EXPECT_TRUE(fs::exists(out / "run.json"));
}

// Desk preset, synthetic corpus, 30 epochs at the coarsest scale.
TEST(Training, LearnsSomethingInThirtyEpochs) {
  const auto root = fs::temp_directory_path() / "sstk_train_smoke";
  fs::remove_all(root);
  SynthOptions so;
  so.out_dir = root / "corpus";
  so.spec.seed = 7;
  const auto corpus = cmd_synth(so);
  RunConfig rc;
  rc.manifest = corpus.manifest_path;
  rc.output_dir = root / "run";
  rc.scales = {32};
  rc.seed = 7;
  rc.train.max_epochs = 30;
  cmd_prepare(rc);
  const auto t = cmd_train(rc, 32);
  EXPECT_GT(t.history.epochs.back().val_mca, 100.0 / 4 + 20);
  fs::remove_all(root);
}
