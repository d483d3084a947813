#include <gtest/gtest.h>

#include "nfed/net.hpp"
#include "nfed/rng.hpp"
#include "test_support.hpp"

using namespace nfed;

namespace {

template <class T>
tensor3<T> random_tensor(rng& r, int c, int h, int w, double lo = -1, double hi = 1) {
  tensor3<T> t(c, h, w);
  for (auto& v : t.v) v = T(r.uniform(lo, hi));
  return t;
}

double inner(const tensor3<double>& a, const tensor3<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
  return s;
}

}  // namespace

TEST(Tensor, FieldRoundTrip) {
  rng r(1);
  auto f = nfed_test::random_field(r, 5, 4, 3);
  auto t = to_tensor<double>(f);
  auto g = to_field(t);
  EXPECT_EQ(f.data, g.data);
}

TEST(Conv3x3, MatchesDirectStencil) {
  rng r(2);
  conv3x3<double> c;
  c.resize(2, 3);
  c.init(r);
  auto x = random_tensor<double>(r, 2, 5, 6);
  auto y = c.forward(x);
  // Direct evaluation at an interior and a corner pixel.
  for (auto [py, px] : {std::pair{2, 3}, std::pair{0, 0}, std::pair{4, 5}}) {
    for (int oc = 0; oc < 3; ++oc) {
      double want = c.b[oc];
      for (int ic = 0; ic < 2; ++ic)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            int sy = py + ky - 1, sx = px + kx - 1;
            if (sy < 0 || sy >= 5 || sx < 0 || sx >= 6) continue;
            want += c.w[c.widx(oc, ic, ky, kx)] * x.at(ic, sy, sx);
          }
      EXPECT_NEAR(y.at(oc, py, px), want, 1e-12);
    }
  }
}

TEST(Conv3x3, BackwardMatchesFiniteDifferences) {
  rng r(3);
  conv3x3<double> c;
  c.resize(2, 2);
  c.init(r);
  auto x = random_tensor<double>(r, 2, 4, 4);
  auto up = random_tensor<double>(r, 2, 4, 4);
  conv3x3<double> g;
  g.resize(2, 2);
  auto dx = c.backward(x, up, g);

  const double h = 1e-6;
  for (size_t i = 0; i < c.w.size(); i += 3) {
    auto cp = c, cm = c;
    cp.w[i] += h;
    cm.w[i] -= h;
    double fd = (inner(cp.forward(x), up) - inner(cm.forward(x), up)) / (2 * h);
    EXPECT_LT(nfed_test::rel_err(fd, g.w[i]), 1e-6);
  }
  for (size_t i = 0; i < x.v.size(); i += 2) {
    auto xp = x, xm = x;
    xp.v[i] += h;
    xm.v[i] -= h;
    double fd = (inner(c.forward(xp), up) - inner(c.forward(xm), up)) / (2 * h);
    EXPECT_LT(nfed_test::rel_err(fd, dx.v[i]), 1e-6);
  }
  for (size_t i = 0; i < c.b.size(); ++i) {
    auto cp = c, cm = c;
    cp.b[i] += h;
    cm.b[i] -= h;
    double fd = (inner(cp.forward(x), up) - inner(cm.forward(x), up)) / (2 * h);
    EXPECT_LT(nfed_test::rel_err(fd, g.b[i]), 1e-6);
  }
}

TEST(MaxPool, UnpoolRestoresMaximaAtArgmaxPositions) {
  rng r(4);
  auto x = random_tensor<double>(r, 3, 6, 8);
  auto p = maxpool2(x);
  auto u = unpool2_switches(p.y, p.switches);
  ASSERT_TRUE(u.same_shape(x));
  int nonzero = 0;
  for (int ci = 0; ci < 3; ++ci)
    for (int y = 0; y < 6; ++y)
      for (int xx = 0; xx < 8; ++xx) {
        double v = u.at(ci, y, xx);
        if (v != 0.0) {
          ++nonzero;
          EXPECT_EQ(v, p.y.at(ci, y / 2, xx / 2));
          EXPECT_EQ(v, x.at(ci, y, xx));  // restored at its own position
        }
      }
  EXPECT_EQ(nonzero, 3 * 3 * 4);  // one per pooled window
}

TEST(MaxPool, BackwardRoutesToArgmax) {
  rng r(5);
  auto x = random_tensor<double>(r, 1, 4, 4);
  auto p = maxpool2(x);
  auto up = random_tensor<double>(r, 1, 2, 2);
  auto dx = maxpool2_backward(up, p.switches, 4, 4);
  const double h = 1e-6;
  for (size_t i = 0; i < x.v.size(); ++i) {
    auto xp = x, xm = x;
    xp.v[i] += h;
    xm.v[i] -= h;
    double fd = (inner(maxpool2(xp).y, up) - inner(maxpool2(xm).y, up)) / (2 * h);
    EXPECT_NEAR(fd, dx.v[i], 1e-8);
  }
}

TEST(Upsample, NearestBackwardIsAdjoint) {
  rng r(6);
  auto x = random_tensor<double>(r, 2, 3, 3);
  auto gy = random_tensor<double>(r, 2, 6, 6);
  double lhs = inner(upsample2_nearest(x), gy);
  double rhs = inner(x, upsample2_nearest_backward(gy));
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(UnpoolSwitches, BackwardIsAdjoint) {
  rng r(7);
  auto base = random_tensor<double>(r, 2, 6, 6);
  auto sw = maxpool2(base).switches;
  auto x = random_tensor<double>(r, 2, 3, 3);
  auto gy = random_tensor<double>(r, 2, 6, 6);
  double lhs = inner(unpool2_switches(x, sw), gy);
  double rhs = inner(x, unpool2_switches_backward(gy, sw, 3, 3));
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Dense, BackwardMatchesFiniteDifferences) {
  rng r(8);
  dense<double> d;
  d.resize(5, 4);
  d.init(r);
  std::vector<double> x(5), up(4);
  for (auto& v : x) v = r.uniform(-1, 1);
  for (auto& v : up) v = r.uniform(-1, 1);
  dense<double> g;
  g.resize(5, 4);
  auto dx = d.backward(x, up, g);

  auto value = [&](const dense<double>& dd, const std::vector<double>& xx) {
    auto y = dd.forward(xx);
    double s = 0;
    for (size_t i = 0; i < y.size(); ++i) s += y[i] * up[i];
    return s;
  };
  const double h = 1e-6;
  for (size_t i = 0; i < d.w.size(); ++i) {
    auto dp = d, dm = d;
    dp.w[i] += h;
    dm.w[i] -= h;
    EXPECT_LT(nfed_test::rel_err((value(dp, x) - value(dm, x)) / (2 * h), g.w[i]),
              1e-6);
  }
  for (size_t i = 0; i < x.size(); ++i) {
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    EXPECT_LT(nfed_test::rel_err((value(d, xp) - value(d, xm)) / (2 * h), dx[i]),
              1e-6);
  }
}

TEST(Activations, SigmoidBackward) {
  rng r(9);
  auto x = random_tensor<double>(r, 1, 3, 3, -3, 3);
  auto y = sigmoid(x);
  auto up = random_tensor<double>(r, 1, 3, 3);
  auto dx = sigmoid_backward(up, y);
  const double h = 1e-6;
  for (size_t i = 0; i < x.v.size(); ++i) {
    auto xp = x, xm = x;
    xp.v[i] += h;
    xm.v[i] -= h;
    double fd = (inner(sigmoid(xp), up) - inner(sigmoid(xm), up)) / (2 * h);
    EXPECT_LT(nfed_test::rel_err(fd, dx.v[i]), 1e-5);
  }
}
