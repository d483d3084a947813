#include <gtest/gtest.h>

#include "nfed/formation.hpp"
#include "nfed/rng.hpp"
#include "test_support.hpp"

using namespace nfed;

namespace {

double inner(const pixel_field& a, const pixel_field& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

}  // namespace

TEST(FormImage, ZeroAlbedoAnnihilates) {
  rng r(1);
  pixel_field a(4, 4, 3, 0.0);
  auto s = nfed_test::random_field(r, 4, 4, 3, -1.0, 2.0);
  auto img = form_image(a, s);
  for (double v : img.data) EXPECT_EQ(v, 0.0);
}

TEST(FormImage, ConstantProductExample) {
  pixel_field a(2, 2, 3, 0.5);
  pixel_field s(2, 2, 3, 0.886227);
  auto img = form_image(a, s);
  for (double v : img.data) EXPECT_NEAR(v, 0.5 * 0.886227, 1e-12);  // 0.4431135
}

TEST(FormImage, UnitShadingIsIdentity) {
  rng r(2);
  auto a = nfed_test::random_field(r, 5, 3, 3);
  pixel_field s(5, 3, 3, 1.0);
  auto img = form_image(a, s);
  for (size_t i = 0; i < a.data.size(); ++i) EXPECT_EQ(img.data[i], a.data[i]);
}

TEST(FormImage, ShapeMismatchFails) {
  pixel_field a(2, 2, 3), s(2, 3, 3);
  EXPECT_THROW(form_image(a, s), validation_error);
}

TEST(FormImage, BilinearInEachArgument) {
  rng r(3);
  auto a1 = nfed_test::random_field(r, 4, 4, 3);
  auto a2 = nfed_test::random_field(r, 4, 4, 3);
  auto s = nfed_test::random_field(r, 4, 4, 3);
  const double p = 1.3, q = -0.6;
  pixel_field combo(4, 4, 3);
  for (size_t i = 0; i < combo.data.size(); ++i)
    combo.data[i] = p * a1.data[i] + q * a2.data[i];
  auto lhs = form_image(combo, s);
  auto r1 = form_image(a1, s);
  auto r2 = form_image(a2, s);
  for (size_t i = 0; i < lhs.data.size(); ++i)
    EXPECT_NEAR(lhs.data[i], p * r1.data[i] + q * r2.data[i], 1e-12);
}

TEST(FormImageBackward, UnitUpstreamReturnsFactors) {
  rng r(4);
  auto a = nfed_test::random_field(r, 3, 3, 3);
  auto s = nfed_test::random_field(r, 3, 3, 3);
  pixel_field up(3, 3, 3, 1.0);
  auto [da, ds] = form_image_backward(a, s, up);
  for (size_t i = 0; i < a.data.size(); ++i) {
    EXPECT_EQ(da.data[i], s.data[i]);  // dI/dA = S
    EXPECT_EQ(ds.data[i], a.data[i]);  // dI/dS = A
  }
}

TEST(FormImageBackward, ZeroUpstreamGivesZero) {
  rng r(5);
  auto a = nfed_test::random_field(r, 3, 3, 1);
  auto s = nfed_test::random_field(r, 3, 3, 1);
  pixel_field up(3, 3, 1, 0.0);
  auto [da, ds] = form_image_backward(a, s, up);
  for (double v : da.data) EXPECT_EQ(v, 0.0);
  for (double v : ds.data) EXPECT_EQ(v, 0.0);
}

TEST(FormImageBackward, MatchesFiniteDifferences) {
  rng r(6);
  const double h = 1e-6;
  auto a = nfed_test::random_field(r, 4, 3, 3);
  auto s = nfed_test::random_field(r, 4, 3, 3);
  auto up = nfed_test::random_field(r, 4, 3, 3, -1.0, 1.0);
  auto [da, ds] = form_image_backward(a, s, up);
  for (size_t i = 0; i < a.data.size(); ++i) {
    auto ap = a, am = a;
    ap.data[i] += h;
    am.data[i] -= h;
    double fd = (inner(form_image(ap, s), up) - inner(form_image(am, s), up)) / (2 * h);
    EXPECT_LT(nfed_test::rel_err(fd, da.data[i]), 1e-6);
    auto sp = s, sm = s;
    sp.data[i] += h;
    sm.data[i] -= h;
    fd = (inner(form_image(a, sp), up) - inner(form_image(a, sm), up)) / (2 * h);
    EXPECT_LT(nfed_test::rel_err(fd, ds.data[i]), 1e-6);
  }
}

TEST(Composite, FullForegroundAndFullBackground) {
  rng r(7);
  auto fg = nfed_test::random_field(r, 4, 4, 3);
  auto bg = nfed_test::random_field(r, 4, 4, 3);
  auto out1 = composite(fg, bg, matte_mask(4, 4, 1.0));
  auto out0 = composite(fg, bg, matte_mask(4, 4, 0.0));
  for (size_t i = 0; i < fg.data.size(); ++i) {
    EXPECT_EQ(out1.data[i], fg.data[i]);
    EXPECT_EQ(out0.data[i], bg.data[i]);
  }
}

TEST(Composite, MidpointBlend) {
  pixel_field fg(1, 1, 1, 1.0), bg(1, 1, 1, 0.0);
  auto out = composite(fg, bg, matte_mask(1, 1, 0.5));
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 0.5);
}

TEST(Composite, OutputBoundedByInputs) {
  rng r(8);
  auto fg = nfed_test::random_field(r, 6, 6, 3, -1.0, 2.0);
  auto bg = nfed_test::random_field(r, 6, 6, 3, -1.0, 2.0);
  matte_mask m(6, 6);
  for (auto& a : m.alpha) a = r.uniform();
  auto out = composite(fg, bg, m);
  for (size_t i = 0; i < out.data.size(); ++i) {
    EXPECT_GE(out.data[i], std::min(fg.data[i], bg.data[i]) - 1e-12);
    EXPECT_LE(out.data[i], std::max(fg.data[i], bg.data[i]) + 1e-12);
  }
}

TEST(Composite, IdenticalLayersAreFixedPoint) {
  rng r(9);
  auto x = nfed_test::random_field(r, 5, 5, 3);
  matte_mask m(5, 5);
  for (auto& a : m.alpha) a = r.uniform();
  auto out = composite(x, x, m);
  for (size_t i = 0; i < x.data.size(); ++i) EXPECT_NEAR(out.data[i], x.data[i], 1e-15);
}

TEST(CompositeBackward, MatchesFiniteDifferences) {
  rng r(10);
  const double h = 1e-6;
  auto fg = nfed_test::random_field(r, 3, 4, 3);
  auto bg = nfed_test::random_field(r, 3, 4, 3);
  matte_mask m(3, 4);
  for (auto& a : m.alpha) a = r.uniform(0.05, 0.95);
  auto up = nfed_test::random_field(r, 3, 4, 3, -1.0, 1.0);
  auto g = composite_backward(fg, bg, m, up);

  for (size_t i = 0; i < fg.data.size(); ++i) {
    auto fp = fg, fm = fg;
    fp.data[i] += h;
    fm.data[i] -= h;
    double fd = (inner(composite(fp, bg, m), up) - inner(composite(fm, bg, m), up)) /
                (2 * h);
    EXPECT_LT(nfed_test::rel_err(fd, g.d_fg.data[i]), 1e-6);
    auto bp = bg, bm = bg;
    bp.data[i] += h;
    bm.data[i] -= h;
    fd = (inner(composite(fg, bp, m), up) - inner(composite(fg, bm, m), up)) / (2 * h);
    EXPECT_LT(nfed_test::rel_err(fd, g.d_bg.data[i]), 1e-6);
  }
  for (size_t i = 0; i < m.alpha.size(); ++i) {
    auto mp = m, mm = m;
    mp.alpha[i] += h;
    mm.alpha[i] -= h;
    double fd = (inner(composite(fg, bg, mp), up) - inner(composite(fg, bg, mm), up)) /
                (2 * h);
    EXPECT_LT(nfed_test::rel_err(fd, g.d_matte.alpha[i]), 1e-6);
  }
}

TEST(RenderBundle, ConsistencyOnBuild) {
  rng r(11);
  auto a = nfed_test::random_field(r, 4, 4, 3);
  auto s = nfed_test::random_field(r, 4, 4, 3);
  auto bg = nfed_test::random_field(r, 4, 4, 3);
  matte_mask m(4, 4);
  for (auto& v : m.alpha) v = r.uniform();
  auto bundle = make_render_bundle(a, s, bg, m);
  ASSERT_TRUE(bundle.consistent);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) {
        double fg = bundle.albedo.at(y, x, c) * bundle.shading.at(y, x, c);
        double expect = bundle.matte.at(y, x) * fg +
                        (1 - bundle.matte.at(y, x)) * bundle.background.at(y, x, c);
        EXPECT_NEAR(bundle.composite_image.at(y, x, c), expect, 1e-12);
      }
}
