#include <gtest/gtest.h>

#include <cmath>

#include "nfed/losses.hpp"
#include "nfed/rng.hpp"
#include "test_support.hpp"

using namespace nfed;

TEST(L2MapLoss, ZeroAtCoincidence) {
  rng r(1);
  auto a = nfed_test::random_field(r, 4, 4, 3);
  auto l = l2_map_loss(a, a);
  EXPECT_EQ(l.value, 0.0);
  for (double g : l.grad.data) EXPECT_EQ(g, 0.0);
}

TEST(L2MapLoss, ConstantOffsetValue) {
  for (int c : {1, 3}) {
    pixel_field pred(5, 4, c, 0.6);
    pixel_field target(5, 4, c, 0.5);
    auto l = l2_map_loss(pred, target);
    // Per masked pixel: channels * 0.1^2.
    EXPECT_NEAR(l.value, 0.01 * c, 1e-12);
    EXPECT_NEAR(l.raw_sum, 0.01 * c * 20, 1e-10);
  }
}

TEST(L2MapLoss, MaskedGradientMatchesFiniteDifferences) {
  rng r(2);
  const double h = 1e-6;
  auto pred = nfed_test::random_field(r, 5, 5, 3);
  auto target = nfed_test::random_field(r, 5, 5, 3);
  auto mask = nfed_test::random_mask(r, 5, 5);
  auto l = l2_map_loss(pred, target, &mask);
  for (size_t i = 0; i < pred.data.size(); i += 2) {
    auto p = pred, m = pred;
    p.data[i] += h;
    m.data[i] -= h;
    double fd = (l2_map_loss(p, target, &mask).value -
                 l2_map_loss(m, target, &mask).value) / (2 * h);
    EXPECT_NEAR(fd, l.grad.data[i], 1e-8);
  }
}

TEST(L2MapLoss, EmptyMaskFails) {
  pixel_field a(3, 3, 1), b(3, 3, 1);
  matte_mask m(3, 3, 0.0);
  EXPECT_THROW(l2_map_loss(a, b, &m), validation_error);
}

TEST(LightLoss, UnitDisplacement) {
  sh_coeffs a, b;
  auto zero = light_loss(a, b);
  EXPECT_EQ(zero.value, 0.0);
  a[0] = 1.0;
  auto l = light_loss(a, b);
  EXPECT_DOUBLE_EQ(l.value, 1.0);
  EXPECT_DOUBLE_EQ(l.grad[0], 2.0);
  for (size_t i = 1; i < 27; ++i) EXPECT_EQ(l.grad[i], 0.0);
}

TEST(LightLoss, MatchesBruteForceSum) {
  rng r(3);
  sh_coeffs a, b;
  for (auto& v : a.v) v = r.uniform(-2, 2);
  for (auto& v : b.v) v = r.uniform(-2, 2);
  auto l = light_loss(a, b);
  double expect = 0.0;
  for (size_t i = 0; i < 27; ++i) expect += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(l.value, expect, 1e-12);
}

TEST(AlbedoSmoothness, ConstantIsZero) {
  pixel_field a(6, 6, 3, 0.4);
  auto l = albedo_smoothness(a);
  EXPECT_EQ(l.value, 0.0);
}

TEST(AlbedoSmoothness, StepEdgeContributionApproachesHeight) {
  const double h = 0.5, delta = 1e-3;
  const int W = 8, H = 4, edge = 4;
  pixel_field a(W, H, 1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) a.at(y, x, 0) = x < edge ? 0.2 : 0.2 + h;
  auto l = albedo_smoothness(a, nullptr, delta);
  // H edge pixels, each contributing ~h, averaged over W*H pixels.
  double per_edge_pixel = l.raw_sum / H;
  EXPECT_NEAR(per_edge_pixel, h, 2 * delta);
  EXPECT_NEAR(l.value, l.raw_sum / (W * H), 1e-15);
}

TEST(AlbedoSmoothness, GradientMatchesFiniteDifferences) {
  rng r(4);
  const double h = 1e-7;
  auto a = nfed_test::random_field(r, 5, 5, 3);
  auto mask = nfed_test::random_mask(r, 5, 5);
  auto l = albedo_smoothness(a, &mask, 1e-3);
  for (size_t i = 0; i < a.data.size(); i += 2) {
    auto p = a, m = a;
    p.data[i] += h;
    m.data[i] -= h;
    double fd = (albedo_smoothness(p, &mask, 1e-3).value -
                 albedo_smoothness(m, &mask, 1e-3).value) / (2 * h);
    EXPECT_LT(nfed_test::rel_err(fd, l.grad.data[i], 0.1), 1e-6);
  }
}

TEST(ShadingSmoothness, RampClosedForm) {
  const int W = 8, H = 4;
  const double s = 0.05;
  pixel_field f(W, H, 1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) f.at(y, x, 0) = s * x;
  auto l = shading_smoothness(f);
  EXPECT_NEAR(l.value, s * s * double(W - 1) / W, 1e-14);
}

TEST(ShadingSmoothness, GradientMatchesFiniteDifferences) {
  rng r(5);
  const double h = 1e-6;
  auto f = nfed_test::random_field(r, 5, 4, 3);
  auto mask = nfed_test::random_mask(r, 5, 4);
  auto l = shading_smoothness(f, &mask);
  for (size_t i = 0; i < f.data.size(); i += 2) {
    auto p = f, m = f;
    p.data[i] += h;
    m.data[i] -= h;
    double fd = (shading_smoothness(p, &mask).value -
                 shading_smoothness(m, &mask).value) / (2 * h);
    EXPECT_NEAR(fd, l.grad.data[i], 1e-8);
  }
}

TEST(BwsPenalty, ZeroWhenMeansHitTarget) {
  // Two-pixel channel means of 0.5 and 1.0 average to exactly 0.75.
  pixel_field s(2, 1, 3);
  for (int c = 0; c < 3; ++c) {
    s.at(0, 0, c) = 0.5;
    s.at(0, 1, c) = 1.0;
  }
  auto res = bws_penalty({s}, {matte_mask(2, 1, 1.0)}, 0.75);
  EXPECT_NEAR(res.value, 0.0, 1e-15);
}

TEST(BwsPenalty, ConstantShadingValue) {
  pixel_field s(4, 4, 3, 1.0);
  auto res = bws_penalty({s}, {matte_mask(4, 4, 1.0)}, 0.75);
  EXPECT_NEAR(res.value, 3 * 0.0625, 1e-12);  // (1 - 0.75)^2 per channel
}

TEST(BwsPenalty, GradientMatchesFiniteDifferences) {
  rng r(6);
  const double h = 1e-6;
  std::vector<pixel_field> batch = {nfed_test::random_field(r, 4, 3, 3),
                                    nfed_test::random_field(r, 4, 3, 3)};
  std::vector<matte_mask> masks = {nfed_test::random_mask(r, 4, 3),
                                   nfed_test::random_mask(r, 4, 3)};
  auto res = bws_penalty(batch, masks, 0.75);
  for (size_t img = 0; img < batch.size(); ++img)
    for (size_t i = 0; i < batch[img].data.size(); i += 2) {
      auto bp = batch, bm = batch;
      bp[img].data[i] += h;
      bm[img].data[i] -= h;
      double fd = (bws_penalty(bp, masks, 0.75).value -
                   bws_penalty(bm, masks, 0.75).value) / (2 * h);
      EXPECT_NEAR(fd, res.grads[img].data[i], 1e-8);
    }
}

TEST(BwsPenalty, PermutationInvariance) {
  rng r(7);
  std::vector<pixel_field> batch = {nfed_test::random_field(r, 5, 5, 3),
                                    nfed_test::random_field(r, 5, 5, 3),
                                    nfed_test::random_field(r, 5, 5, 3)};
  std::vector<matte_mask> masks = {nfed_test::random_mask(r, 5, 5),
                                   nfed_test::random_mask(r, 5, 5),
                                   nfed_test::random_mask(r, 5, 5)};
  auto a = bws_penalty(batch, masks, 0.75);
  std::vector<pixel_field> batch2 = {batch[2], batch[0], batch[1]};
  std::vector<matte_mask> masks2 = {masks[2], masks[0], masks[1]};
  auto b = bws_penalty(batch2, masks2, 0.75);
  EXPECT_NEAR(a.value, b.value, 1e-12);

  // Pixel-order permutation within an image keeps the value too (the
  // statistic only sees channel sums).
  auto batch3 = batch;
  std::swap(batch3[0].data[0], batch3[0].data[3]);
  std::swap(batch3[0].data[1], batch3[0].data[4]);
  std::swap(batch3[0].data[2], batch3[0].data[5]);
  bool both_inside = masks[0].inside_flat(0) == masks[0].inside_flat(1);
  if (both_inside) {
    auto c = bws_penalty(batch3, masks, 0.75);
    EXPECT_NEAR(a.value, c.value, 1e-12);
  }
}

TEST(BwsPenalty, EmptyBatchOrMaskFails) {
  EXPECT_THROW(bws_penalty({}, {}, 0.75), validation_error);
  pixel_field s(2, 2, 3, 1.0);
  EXPECT_THROW(bws_penalty({s}, {matte_mask(2, 2, 0.0)}, 0.75), validation_error);
}

TEST(Ebgan, PerfectDiscriminatorAndSaturatedHinge) {
  rng r(8);
  auto real = nfed_test::random_field(r, 4, 4, 3);
  auto fake = nfed_test::random_field(r, 4, 4, 3);
  // D(real) = 0, D(fake) >= margin -> both terms vanish.
  pixel_field recon_fake = fake;
  for (auto& v : recon_fake.data) v += 1.0;  // D(fake) = 1
  auto res = ebgan_losses(real, real, recon_fake, fake, 0.1);
  EXPECT_EQ(res.d_loss, 0.0);
  EXPECT_FALSE(res.hinge_active);
  for (double g : res.d_dloss_recon_fake.data) EXPECT_EQ(g, 0.0);
}

TEST(Ebgan, PerfectGeneratorHasZeroLoss) {
  rng r(9);
  auto real = nfed_test::random_field(r, 4, 4, 3);
  auto recon_real = nfed_test::random_field(r, 4, 4, 3);
  auto fake = nfed_test::random_field(r, 4, 4, 3);
  auto res = ebgan_losses(recon_real, real, fake, fake, 0.1);
  EXPECT_EQ(res.g_loss, 0.0);
}

TEST(Ebgan, ActiveHingeExample) {
  // Construct D(fake) = 0.04 exactly: uniform residual sqrt(0.04).
  pixel_field fake(5, 2, 1, 0.0);
  pixel_field recon_fake(5, 2, 1, std::sqrt(0.04));
  pixel_field real(5, 2, 1, 0.3);
  auto res = ebgan_losses(real, real, recon_fake, fake, 0.1);
  EXPECT_NEAR(res.d_fake, 0.04, 1e-12);
  EXPECT_TRUE(res.hinge_active);
  EXPECT_NEAR(res.d_loss, 0.06, 1e-12);  // 0 + (0.1 - 0.04)
  for (double g : res.d_dloss_recon_fake.data) EXPECT_NE(g, 0.0);
}

TEST(Ebgan, GradientsMatchFiniteDifferences) {
  rng r(10);
  const double h = 1e-6;
  auto real = nfed_test::random_field(r, 3, 3, 3);
  auto fake = nfed_test::random_field(r, 3, 3, 3);
  auto rr = nfed_test::random_field(r, 3, 3, 3);
  auto rf = fake;
  for (auto& v : rf.data) v += r.uniform(-0.1, 0.1);  // small D(fake) -> hinge on
  auto res = ebgan_losses(rr, real, rf, fake, 0.5);
  ASSERT_TRUE(res.hinge_active);
  for (size_t i = 0; i < rr.data.size(); i += 2) {
    auto p = rr, m = rr;
    p.data[i] += h;
    m.data[i] -= h;
    double fd = (ebgan_losses(p, real, rf, fake, 0.5).d_loss -
                 ebgan_losses(m, real, rf, fake, 0.5).d_loss) / (2 * h);
    EXPECT_NEAR(fd, res.d_dloss_recon_real.data[i], 1e-8);
  }
  for (size_t i = 0; i < rf.data.size(); i += 2) {
    auto p = rf, m = rf;
    p.data[i] += h;
    m.data[i] -= h;
    double fd_d = (ebgan_losses(rr, real, p, fake, 0.5).d_loss -
                   ebgan_losses(rr, real, m, fake, 0.5).d_loss) / (2 * h);
    double fd_g = (ebgan_losses(rr, real, p, fake, 0.5).g_loss -
                   ebgan_losses(rr, real, m, fake, 0.5).g_loss) / (2 * h);
    EXPECT_NEAR(fd_d, res.d_dloss_recon_fake.data[i], 1e-8);
    EXPECT_NEAR(fd_g, res.d_gloss_recon_fake.data[i], 1e-8);
  }
  // Direct dependence of g_loss on the generated image.
  for (size_t i = 0; i < fake.data.size(); i += 3) {
    auto p = fake, m = fake;
    p.data[i] += h;
    m.data[i] -= h;
    double fd = (ebgan_losses(rr, real, rf, p, 0.5).g_loss -
                 ebgan_losses(rr, real, rf, m, 0.5).g_loss) / (2 * h);
    EXPECT_NEAR(fd, res.d_gloss_fake.data[i], 1e-8);
  }
}

TEST(TotalObjective, DegenerateWeightingAndLinearity) {
  std::vector<loss_term> parts = {{"recon", 0.4, 1.0, 4.0},
                                  {"adv", 0.3, 0.0, 3.0},
                                  {"bws", 0.2, 0.0, 2.0}};
  auto rep = total_objective(parts);
  EXPECT_DOUBLE_EQ(rep.total, 0.4);

  for (auto& p : parts) p.weight *= 2.0;
  parts[0].weight = 2.0;
  auto rep2 = total_objective(parts);
  EXPECT_DOUBLE_EQ(rep2.total, 0.8);
}

TEST(TotalObjective, ItemizedSumMatchesTotal) {
  rng r(11);
  std::vector<loss_term> parts;
  for (int i = 0; i < 10; ++i)
    parts.push_back({"t" + std::to_string(i), r.uniform(), r.uniform(), 0.0});
  auto rep = total_objective(parts);
  double sum = 0.0;
  for (const auto& t : rep.terms) sum += t.weighted;
  EXPECT_NEAR(sum, rep.total, 1e-12);
}

TEST(TotalObjective, NanIsAttributedToTerm) {
  std::vector<loss_term> parts = {{"fine", 1.0, 1.0, 0.0},
                                  {"broken", std::nan(""), 1.0, 0.0}};
  try {
    total_objective(parts);
    FAIL() << "expected numeric_error";
  } catch (const numeric_error& e) {
    EXPECT_NE(std::string(e.what()).find("broken"), std::string::npos);
  }
}

TEST(LossWeights, JsonRoundTripAndValidation) {
  loss_weights w;
  w.w_adv = 0.05;
  w.bws_target = 0.6;
  auto j = weights_to_json(w);
  auto back = weights_from_json(j);
  EXPECT_EQ(back.w_adv, 0.05);
  EXPECT_EQ(back.bws_target, 0.6);

  EXPECT_THROW(weights_from_json({{"w_unknown", 1.0}}), validation_error);
  EXPECT_THROW(weights_from_json({{"w_recon", -1.0}}), validation_error);
  // Defaults fill missing keys.
  auto d = weights_from_json(nlohmann::json::object());
  EXPECT_EQ(d.w_recon, 1.0);
  EXPECT_EQ(d.bws_target, 0.75);
}
