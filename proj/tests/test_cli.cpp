// End-to-end checks of the command-line surface: exit codes, file contracts
// and determinism guarantees.
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nfed/image_io.hpp"
#include "nfed/synth.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli() { return NFED_CLI_PATH; }

int run(const std::string& args) {
  const std::string cmd = cli() + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct cli_fixture {
  std::string dir;
  cli_fixture() : dir(nfed_test::scratch_dir("cli")) {
    EXPECT_EQ(run("synth --count 4 --size 32 --seed 7 --out " + dir + "/data"), 0);
  }
  ~cli_fixture() { fs::remove_all(dir); }
  std::string sample(int i) const {
    return dir + "/data/" + nfed::sample_dir_name(i);
  }
};

}  // namespace

TEST(Cli, SynthCardinalityAndDeterminism) {
  cli_fixture fx;
  auto manifest = nfed::load_manifest(fx.dir + "/data");
  EXPECT_EQ(manifest["samples"].size(), 4u);
  for (int i = 0; i < 4; ++i)
    EXPECT_TRUE(fs::exists(fx.sample(i) + "/image.png"));

  EXPECT_EQ(run("synth --count 4 --size 32 --seed 7 --out " + fx.dir + "/data2"), 0);
  EXPECT_EQ(file_bytes(fx.dir + "/data/manifest.json"),
            file_bytes(fx.dir + "/data2/manifest.json"));
}

TEST(Cli, SynthZeroCountIsUsageError) {
  auto dir = nfed_test::scratch_dir("cli_zero");
  EXPECT_EQ(run("synth --count 0 --size 32 --seed 7 --out " + dir + "/d"), 2);
  fs::remove_all(dir);
}

TEST(Cli, DecomposeContract) {
  cli_fixture fx;
  const std::string s0 = fx.sample(0);
  // Missing required flag is a usage error.
  EXPECT_EQ(run("decompose --image " + s0 + "/image.png --mask " + s0 +
                "/mask.png --out " + fx.dir + "/dec"),
            2);
  // Fast config for the test run.
  {
    std::ofstream f(fx.dir + "/fast.json");
    f << R"({"solver": {"iters": 150}})";
  }
  EXPECT_EQ(run("--config " + fx.dir + "/fast.json decompose --image " + s0 +
                "/image.png --normals " + s0 + "/normals.pfm --mask " + s0 +
                "/mask.png --out " + fx.dir + "/dec"),
            0);
  std::ifstream lf(fx.dir + "/dec/light.json");
  nlohmann::json light;
  lf >> light;
  EXPECT_EQ(light["coeffs"].size(), 27u);
  EXPECT_TRUE(fs::exists(fx.dir + "/dec/resolved_config.json"));
  EXPECT_TRUE(fs::exists(fx.dir + "/dec/trace.json"));
}

TEST(Cli, MalformedLightFileIsUsageError) {
  cli_fixture fx;
  {
    std::ofstream f(fx.dir + "/fast.json");
    f << R"({"solver": {"iters": 20}})";
  }
  ASSERT_EQ(run("--config " + fx.dir + "/fast.json decompose --image " +
                fx.sample(0) + "/image.png --normals " + fx.sample(0) +
                "/normals.pfm --mask " + fx.sample(0) + "/mask.png --out " +
                fx.dir + "/dec"),
            0);
  {
    std::ofstream f(fx.dir + "/bad_light.json");
    nlohmann::json j = {{"order", "R1..R9,G1..G9,B1..B9"},
                        {"coeffs", std::vector<double>(26, 0.0)}};
    f << j.dump();
  }
  EXPECT_EQ(run("relight --decomp " + fx.dir + "/dec --light " + fx.dir +
                "/bad_light.json --out " + fx.dir + "/rel"),
            2);
}

TEST(Cli, RelightDeterministicOutput) {
  cli_fixture fx;
  {
    std::ofstream f(fx.dir + "/fast.json");
    f << R"({"solver": {"iters": 60}})";
  }
  ASSERT_EQ(run("--config " + fx.dir + "/fast.json decompose --image " +
                fx.sample(0) + "/image.png --normals " + fx.sample(0) +
                "/normals.pfm --mask " + fx.sample(0) + "/mask.png --out " +
                fx.dir + "/dec"),
            0);
  const std::string args = "relight --decomp " + fx.dir + "/dec --light " +
                           fx.sample(1) + "/light.json --mask " + fx.sample(0) +
                           "/mask.png --image " + fx.sample(0) +
                           "/image.png --out ";
  ASSERT_EQ(run(args + fx.dir + "/rel_a"), 0);
  ASSERT_EQ(run(args + fx.dir + "/rel_b"), 0);
  EXPECT_EQ(file_bytes(fx.dir + "/rel_a/relit.png"),
            file_bytes(fx.dir + "/rel_b/relit.png"));
  EXPECT_TRUE(fs::exists(fx.dir + "/rel_a/s_transfer.pfm"));
}

TEST(Cli, TransferWithOwnLightReproducesInput) {
  cli_fixture fx;
  const std::string s0 = fx.sample(0);
  {
    std::ofstream f(fx.dir + "/fast.json");
    f << R"({"solver": {"iters": 400}})";
  }
  ASSERT_EQ(run("--config " + fx.dir + "/fast.json decompose --image " + s0 +
                "/image.png --normals " + s0 + "/normals.pfm --mask " + s0 +
                "/mask.png --out " + fx.dir + "/dec"),
            0);
  // Identity transfer: source light = the decomposition's own light.
  ASSERT_EQ(run("transfer --target-image " + s0 + "/image.png --decomp " +
                fx.dir + "/dec --source-light " + fx.dir +
                "/dec/light.json --mask " + s0 + "/mask.png --out " + fx.dir +
                "/tr"),
            0);
  auto input = nfed::load_image(s0 + "/image.png");
  auto output = nfed::load_image(fx.dir + "/tr/transfer.png");
  auto mask = nfed::load_mask(s0 + "/mask.png");
  auto shading = nfed::load_float_map(fx.dir + "/dec/shading.pfm");
  for (int y = 0; y < input.height; ++y)
    for (int x = 0; x < input.width; ++x) {
      if (!mask.inside(y, x)) continue;
      for (int c = 0; c < 3; ++c)
        if (shading.at(y, x, c) > 1e-3)
          // 16-bit PNG quantization on top of the 1e-6 identity bound.
          EXPECT_NEAR(output.at(y, x, c), input.at(y, x, c), 1e-4);
    }
}

TEST(Cli, TrainZeroEpochsEqualsInitializationAndEstimateLight) {
  cli_fixture fx;
  {
    std::ofstream f(fx.dir + "/toy.json");
    f << R"({"toynet": {"size": 32, "filters": [4,6,6], "z_shared": 10,
             "z_factor": 5, "epochs": 0, "batch": 2, "seed": 11}})";
  }
  ASSERT_EQ(run("--config " + fx.dir + "/toy.json train --data " + fx.dir +
                "/data --out " + fx.dir + "/t0"),
            0);
  ASSERT_EQ(run("--config " + fx.dir + "/toy.json train --data " + fx.dir +
                "/data --out " + fx.dir + "/t1"),
            0);
  EXPECT_EQ(file_bytes(fx.dir + "/t0/model.nfed"),
            file_bytes(fx.dir + "/t1/model.nfed"));

  EXPECT_EQ(run("estimate-light --image " + fx.sample(0) + "/image.png" +
                " --normals " + fx.sample(0) + "/normals.pfm --mask " +
                fx.sample(0) + "/mask.png --out " + fx.dir + "/l.json"),
            0);
  std::ifstream lf(fx.dir + "/l.json");
  nlohmann::json light;
  lf >> light;
  EXPECT_EQ(light["coeffs"].size(), 27u);
}

TEST(Cli, SwapWithSelfMatchesReconstruction) {
  cli_fixture fx;
  {
    std::ofstream f(fx.dir + "/toy.json");
    f << R"({"toynet": {"size": 32, "filters": [4,6,6], "z_shared": 10,
             "z_factor": 5, "epochs": 1, "batch": 2, "seed": 12}})";
  }
  ASSERT_EQ(run("--config " + fx.dir + "/toy.json train --data " + fx.dir +
                "/data --out " + fx.dir + "/t"),
            0);
  const std::string img = fx.sample(0) + "/image.png";
  ASSERT_EQ(run("reconstruct --model " + fx.dir + "/t/model.nfed --image " + img +
                " --out " + fx.dir + "/rec"),
            0);
  ASSERT_EQ(run("swap --model " + fx.dir + "/t/model.nfed --image-a " + img +
                " --image-b " + img + " --factor light --out " + fx.dir + "/sw"),
            0);
  EXPECT_EQ(file_bytes(fx.dir + "/rec/recon.png"),
            file_bytes(fx.dir + "/sw/swap.png"));
  EXPECT_EQ(run("swap --model " + fx.dir + "/t/model.nfed --image-a " + img +
                " --image-b " + img + " --factor pose --out " + fx.dir + "/swbad"),
            2);
}

TEST(Cli, UnknownConfigKeyIsUsageError) {
  auto dir = nfed_test::scratch_dir("cli_cfg");
  {
    std::ofstream f(dir + "/bad.json");
    f << R"({"sover": {"iters": 10}})";
  }
  EXPECT_EQ(run("--config " + dir + "/bad.json synth --count 1 --size 32 "
                "--seed 1 --out " + dir + "/d"),
            2);
  fs::remove_all(dir);
}

TEST(Cli, GradcheckFastModePasses) {
  EXPECT_EQ(run("gradcheck --samples 40 --skip-fp32"), 0);
}
