#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <functional>

#include "nfed/resample.hpp"
#include "nfed/synth.hpp"
#include "test_support.hpp"

using namespace nfed;
namespace fs = std::filesystem;

TEST(GenerateScene, SameSeedIsBitIdentical) {
  auto a = generate_scene(32, 42);
  auto b = generate_scene(32, 42);
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(a.gt_albedo.data, b.gt_albedo.data);
  EXPECT_EQ(a.gt_normals.vecs, b.gt_normals.vecs);
  EXPECT_EQ(a.gt_light.v, b.gt_light.v);
  EXPECT_EQ(a.gt_mask.alpha, b.gt_mask.alpha);
  auto c = generate_scene(32, 43);
  EXPECT_NE(a.image.data, c.image.data);
}

TEST(GenerateScene, CompositionInvariant) {
  for (uint64_t seed : {1ull, 7ull, 123ull}) {
    auto s = generate_scene(48, seed);
    auto recomposed = composite(
        form_image(s.gt_albedo, shade_forward(s.gt_normals, s.gt_light)),
        s.background, s.gt_mask);
    for (size_t i = 0; i < s.image.data.size(); ++i)
      EXPECT_NEAR(s.image.data[i], recomposed.data[i], 1e-12);
  }
}

TEST(GenerateScene, MaskedMeanShadingHitsTarget) {
  for (uint64_t seed : {3ull, 11ull, 99ull}) {
    auto s = generate_scene(64, seed);
    auto shading = shade_forward(s.gt_normals, s.gt_light);
    std::array<double, 3> mean{};
    int64_t count = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        if (!s.gt_mask.inside(y, x)) continue;
        ++count;
        for (int c = 0; c < 3; ++c) mean[c] += shading.at(y, x, c);
      }
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(mean[c] / count, 0.75, 1e-9);
  }
}

TEST(GenerateScene, NormalsUnitAndFrontFacingInsideMask) {
  auto s = generate_scene(64, 5);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      double nx = s.gt_normals.nx(y, x), ny = s.gt_normals.ny(y, x),
             nz = s.gt_normals.nz(y, x);
      EXPECT_NEAR(std::sqrt(nx * nx + ny * ny + nz * nz), 1.0, 1e-9);
      if (s.gt_mask.inside(y, x)) EXPECT_GT(nz, 0.0);
    }
}

TEST(GenerateScene, LightRecoveryFromFlattenedImage) {
  for (uint64_t seed : {2ull, 8ull}) {
    auto s = generate_scene(64, seed);
    // Divide the albedo out of the foreground: the quotient is the shading.
    pixel_field flat(64, 64, 3);
    for (size_t i = 0; i < flat.data.size(); ++i)
      flat.data[i] = s.image.data[i] / s.gt_albedo.data[i];
    auto est = estimate_light(flat, s.gt_normals, s.gt_mask);
    double num = 0, den = 0;
    for (size_t i = 0; i < 27; ++i) {
      num += (est[i] - s.gt_light[i]) * (est[i] - s.gt_light[i]);
      den += s.gt_light[i] * s.gt_light[i];
    }
    EXPECT_LT(std::sqrt(num / den), 1e-8);
  }
}

TEST(GenerateScene, AlbedoPiecewiseConstant) {
  // Gradient support is confined to Voronoi boundaries; measured at a size
  // where boundary pixels are a small fraction of the mask.
  for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    auto s = generate_scene(256, seed);
    auto [dx, dy] = spatial_gradient(s.gt_albedo);
    int64_t zero = 0, total = 0;
    for (int y = 0; y < 256; ++y)
      for (int x = 0; x < 256; ++x) {
        if (!s.gt_mask.inside(y, x)) continue;
        ++total;
        bool flat = true;
        for (int c = 0; c < 3 && flat; ++c)
          flat = dx.at(y, x, c) == 0.0 && dy.at(y, x, c) == 0.0;
        zero += flat ? 1 : 0;
      }
    EXPECT_GT(double(zero) / total, 0.95) << "seed " << seed;
  }
}

TEST(GenerateScene, ImageValuesStayDisplayable) {
  for (uint64_t seed : {10ull, 20ull, 30ull}) {
    auto s = generate_scene(48, seed);
    for (double v : s.image.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(GenerateScene, FixedLightOverride) {
  synth_config cfg;
  sh_coeffs l;
  for (int ch = 0; ch < 3; ++ch) l.channel(ch)[0] = 1.0;
  cfg.fixed_light = l;
  auto s = generate_scene(32, 77, cfg);
  EXPECT_EQ(s.gt_light.v, l.v);
}

TEST(GenerateScene, ShadingGainScalesLight) {
  synth_config base, bright;
  bright.shading_gain = 1.25;
  auto a = generate_scene(32, 5, base);
  auto b = generate_scene(32, 5, bright);
  for (size_t i = 0; i < 27; ++i) EXPECT_NEAR(b.gt_light[i], 1.25 * a.gt_light[i], 1e-12);
}

TEST(GenerateDataset, LayoutSplitAndDeterminism) {
  auto dir = nfed_test::scratch_dir("dataset");
  auto manifest = generate_dataset(8, 32, 7, dir + "/d");
  EXPECT_EQ(manifest["samples"].size(), 8u);
  int val = 0;
  for (const auto& s : manifest["samples"]) {
    EXPECT_TRUE(fs::exists(dir + "/d/" + s["dir"].get<std::string>() + "/image.png"));
    EXPECT_TRUE(fs::exists(dir + "/d/" + s["dir"].get<std::string>() + "/light.json"));
    val += s["split"] == "val" ? 1 : 0;
  }
  EXPECT_NEAR(val, 0.8, 1.0);  // within one sample of the 90/10 split

  auto manifest2 = generate_dataset(8, 32, 7, dir + "/d2");
  EXPECT_EQ(std::hash<std::string>{}(manifest.dump()),
            std::hash<std::string>{}(manifest2.dump()));
  fs::remove_all(dir);
}

TEST(GenerateDataset, CountValidation) {
  EXPECT_THROW(generate_dataset(0, 32, 1, "/tmp/never"), validation_error);
}

TEST(SceneRoundTrip, FilesPreserveExactGroundTruth) {
  auto dir = nfed_test::scratch_dir("scene_rt");
  auto s = generate_scene(32, 9);
  save_scene(s, dir + "/s");
  auto t = load_scene(dir + "/s");
  // PFM ground truth is float32-exact; PNG image is quantized to 16 bits.
  for (size_t i = 0; i < s.gt_albedo.data.size(); ++i)
    EXPECT_EQ(float(s.gt_albedo.data[i]), float(t.gt_albedo.data[i]));
  for (size_t i = 0; i < s.gt_uv.data.size(); ++i)
    EXPECT_EQ(float(s.gt_uv.data[i]), float(t.gt_uv.data[i]));
  EXPECT_EQ(s.gt_light.v, t.gt_light.v);
  EXPECT_EQ(s.gt_mask.alpha, t.gt_mask.alpha);
  for (size_t i = 0; i < s.image.data.size(); ++i)
    EXPECT_NEAR(s.image.data[i], t.image.data[i], 1.0 / 65535.0);
  fs::remove_all(dir);
}

TEST(UvSpaceNormals, SplatCoversMaskAndStaysUnit) {
  auto s = generate_scene(48, 13);
  auto ni = uv_space_normals(s, 24);
  ni.validate();
  int informative = 0;
  for (int t = 0; t < 24 * 24; ++t)
    if (ni.vecs[t * 3 + 2] != 1.0) ++informative;
  EXPECT_GT(informative, 24 * 24 / 4);
}
