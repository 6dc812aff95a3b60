#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "fluxop_test_cli";

int run(const std::string& args) {
  const std::string cmd = "\""s + FLUXOP_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh(const std::string& name) {
  const fs::path dir = kRoot / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

const char* kTinyConfig = R"({
  "seed": 3,
  "corpus": {"functions": 6},
  "tally": {"nx": 8, "ny": 8},
  "run_plan": {"particles_per_batch": 200, "batches": 4},
  "subsets": [0.5, 0.9],
  "deeponet": {"train": {"iterations": 20, "batch_functions": 2, "points_per_function": 8}},
  "baselines": {"train": {"iterations": 20}},
  "timing": {"inference_repeats": 2, "simulation_repeats": 1}
})";

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("generate --bogus"), 2);
  const fs::path dir = fresh("usage");
  EXPECT_EQ(run("generate --out " + dir.string()), 2);
  EXPECT_TRUE(fs::is_empty(dir));
}

TEST(Cli, HelpIsSuccess) { EXPECT_EQ(run("--help"), 0); }

TEST(Cli, ConfigErrors) {
  const fs::path dir = fresh("config");
  const fs::path bad = write(dir / "bad.json", "{ \"seed\": ");
  EXPECT_EQ(run("generate -c " + bad.string() + " --out " + dir.string()), 3);
  const fs::path unknown = write(dir / "unknown.json", R"({"sed": 1})");
  EXPECT_EQ(run("generate -c " + unknown.string() + " --out " + dir.string()), 3);
  const fs::path invalid = write(dir / "invalid.json", R"({"tally": {"nx": 0}})");
  EXPECT_EQ(run("generate -c " + invalid.string() + " --out " + dir.string()), 3);
  EXPECT_FALSE(fs::exists(dir / "dataset.bin"));
}

TEST(Cli, MissingInputs) {
  const fs::path dir = fresh("missing");
  EXPECT_EQ(run("generate -c " + (dir / "nope.json").string()), 4);
  const fs::path cfg = write(dir / "tiny.json", kTinyConfig);
  const fs::path out = dir / "out";
  for (const char* sub : {"split", "train", "evaluate", "table1", "table2", "timing"})
    EXPECT_EQ(run(std::string(sub) + " -c " + cfg.string() + " --out " + out.string()), 4) << sub;
}

TEST(Cli, Gradcheck) { EXPECT_EQ(run("gradcheck"), 0); }

TEST(Cli, TinyPipeline) {
  const fs::path dir = fresh("pipeline");
  const fs::path cfg = write(dir / "tiny.json", kTinyConfig);
  const std::string common = " -c " + cfg.string() + " --out " + (dir / "out").string();
  ASSERT_EQ(run("generate" + common), 0);
  ASSERT_EQ(run("split" + common), 0);
  ASSERT_EQ(run("train --set 2" + common), 0);
  EXPECT_TRUE(fs::exists(dir / "out/checkpoints/set2.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "out/checkpoints/set1.ckpt"));
  EXPECT_EQ(run("evaluate --set 1" + common), 4);
  EXPECT_EQ(run("evaluate --set 3" + common), 3);
  ASSERT_EQ(run("train" + common), 0);
  ASSERT_EQ(run("evaluate" + common), 0);
  ASSERT_EQ(run("table2" + common), 0);
  ASSERT_EQ(run("timing" + common), 0);
  ASSERT_EQ(run("gradcheck" + common), 0);
  for (const char* f : {"dataset.bin", "train.bin", "test.bin", "table1.csv", "table1.txt", "table1_per_function.csv",
                        "table2.csv", "table2.txt", "timing.txt", "gradcheck.txt", "checkpoints/set1_loss.csv"})
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
}

TEST(Cli, OutputPathDoesNotChangeResults) {
  const fs::path dir = fresh("paths");
  const fs::path cfg = write(dir / "tiny.json", kTinyConfig);
  const fs::path a = dir / "a", b = dir / "a_much_longer_output_directory_name_for_heap_layout";
  for (const fs::path& out : {a, b}) {
    const std::string common = " -c " + cfg.string() + " --out " + out.string();
    ASSERT_EQ(run("generate" + common), 0);
    ASSERT_EQ(run("split" + common), 0);
    ASSERT_EQ(run("train --set 1" + common), 0);
    ASSERT_EQ(run("evaluate --set 1" + common), 0);
  }
  for (const char* f : {"dataset.bin", "checkpoints/set1.ckpt", "table1_per_function.csv"}) {
    std::ifstream x(a / f, std::ios::binary), y(b / f, std::ios::binary);
    const std::string bx{std::istreambuf_iterator<char>(x), {}}, by{std::istreambuf_iterator<char>(y), {}};
    EXPECT_FALSE(bx.empty()) << f;
    EXPECT_EQ(bx, by) << f;
  }
}

TEST(Cli, EnvironmentOutputDir) {
  const fs::path dir = fresh("env");
  const fs::path cfg = write(dir / "tiny.json", kTinyConfig);
  const std::string cmd = "FLUXOP_OUT=" + (dir / "env_out").string() + " \"" + FLUXOP_CLI_PATH + "\" generate -c " +
                          cfg.string() + " >/dev/null 2>&1";
  ASSERT_EQ(WEXITSTATUS(std::system(cmd.c_str())), 0);
  EXPECT_TRUE(fs::exists(dir / "env_out/dataset.bin"));
}
