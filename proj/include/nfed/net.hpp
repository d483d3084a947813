// Minimal layer zoo for the toy networks: planar tensors, 3x3 same-padding
// convolutions, 2x2 max-pooling with argmax switches, switch-routed and
// nearest-neighbor unpooling, dense layers and pointwise nonlinearities.
// Everything is templated on the scalar so the gradient checks can run the
// identical code in float and double.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nfed/fields.hpp"
#include "nfed/rng.hpp"

namespace nfed {

template <class T>
struct tensor3 {
  int c = 0, h = 0, w = 0;
  std::vector<T> v;  // planar channel-major: ((ci*h)+y)*w + x

  tensor3() = default;
  tensor3(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), v(size_t(c_) * h_ * w_, T(0)) {}

  T& at(int ci, int y, int x) { return v[(size_t(ci) * h + y) * w + x]; }
  T at(int ci, int y, int x) const { return v[(size_t(ci) * h + y) * w + x]; }
  size_t size() const { return v.size(); }
  bool same_shape(const tensor3& o) const {
    return c == o.c && h == o.h && w == o.w;
  }
};

template <class T>
tensor3<T> to_tensor(const pixel_field& f) {
  tensor3<T> t(f.channels, f.height, f.width);
  for (int ci = 0; ci < f.channels; ++ci)
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x) t.at(ci, y, x) = T(f.at(y, x, ci));
  return t;
}

template <class T>
pixel_field to_field(const tensor3<T>& t) {
  pixel_field f(t.w, t.h, t.c);
  for (int ci = 0; ci < t.c; ++ci)
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x) f.at(y, x, ci) = double(t.at(ci, y, x));
  return f;
}

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero padding 1 (same size).
// ---------------------------------------------------------------------------

template <class T>
struct conv3x3 {
  int in_c = 0, out_c = 0;
  std::vector<T> w;  // [out][in][ky][kx]
  std::vector<T> b;  // [out]

  void resize(int in, int out) {
    in_c = in;
    out_c = out;
    w.assign(size_t(out) * in * 9, T(0));
    b.assign(out, T(0));
  }

  void init(rng& r) {
    const double s = std::sqrt(6.0 / (in_c * 9));
    for (auto& x : w) x = T(r.uniform(-s, s));
    for (auto& x : b) x = T(0);
  }

  size_t widx(int oc, int ic, int ky, int kx) const {
    return ((size_t(oc) * in_c + ic) * 3 + ky) * 3 + kx;
  }

  tensor3<T> forward(const tensor3<T>& x) const {
    tensor3<T> y(out_c, x.h, x.w);
    for (int oc = 0; oc < out_c; ++oc) {
      for (int ic = 0; ic < in_c; ++ic) {
        const T* wk = &w[widx(oc, ic, 0, 0)];
        for (int yy = 0; yy < x.h; ++yy) {
          T* out_row = &y.v[(size_t(oc) * y.h + yy) * y.w];
          for (int ky = 0; ky < 3; ++ky) {
            const int sy = yy + ky - 1;
            if (sy < 0 || sy >= x.h) continue;
            const T* in_row = &x.v[(size_t(ic) * x.h + sy) * x.w];
            for (int kx = 0; kx < 3; ++kx) {
              const T wv = wk[ky * 3 + kx];
              if (wv == T(0)) continue;
              const int off = kx - 1;
              const int x0 = std::max(0, -off);
              const int x1 = std::min(x.w, x.w - off);
              for (int xx = x0; xx < x1; ++xx)
                out_row[xx] += wv * in_row[xx + off];
            }
          }
        }
      }
      T* plane = &y.v[size_t(oc) * y.h * y.w];
      const T bias = b[oc];
      for (int i = 0; i < y.h * y.w; ++i) plane[i] += bias;
    }
    return y;
  }

  // Accumulates dw/db into `grad`, returns dx.
  tensor3<T> backward(const tensor3<T>& x, const tensor3<T>& dy,
                      conv3x3<T>& grad) const {
    tensor3<T> dx(in_c, x.h, x.w);
    for (int oc = 0; oc < out_c; ++oc) {
      const T* dy_plane = &dy.v[size_t(oc) * dy.h * dy.w];
      T db = T(0);
      for (int i = 0; i < dy.h * dy.w; ++i) db += dy_plane[i];
      grad.b[oc] += db;
      for (int ic = 0; ic < in_c; ++ic) {
        const T* wk = &w[widx(oc, ic, 0, 0)];
        T* gw = &grad.w[widx(oc, ic, 0, 0)];
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int offy = ky - 1, offx = kx - 1;
            T acc = T(0);
            const int y0 = std::max(0, -offy), y1 = std::min(x.h, x.h - offy);
            const int x0 = std::max(0, -offx), x1 = std::min(x.w, x.w - offx);
            const T wv = wk[ky * 3 + kx];
            for (int yy = y0; yy < y1; ++yy) {
              const T* dyr = &dy.v[(size_t(oc) * dy.h + yy) * dy.w];
              const T* xr = &x.v[(size_t(ic) * x.h + yy + offy) * x.w + offx];
              T* dxr = &dx.v[(size_t(ic) * x.h + yy + offy) * x.w + offx];
              for (int xx = x0; xx < x1; ++xx) {
                acc += dyr[xx] * xr[xx];
                dxr[xx] += wv * dyr[xx];
              }
            }
            gw[ky * 3 + kx] += acc;
          }
        }
      }
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// 2x2 max pooling with switches; switch-routed and nearest unpooling.
// ---------------------------------------------------------------------------

template <class T>
struct pool_result {
  tensor3<T> y;
  std::vector<uint8_t> switches;  // 0..3 = dy*2+dx per output cell
};

template <class T>
pool_result<T> maxpool2(const tensor3<T>& x) {
  if (x.h % 2 || x.w % 2)
    throw validation_error("maxpool2: extent must be even");
  pool_result<T> r;
  r.y = tensor3<T>(x.c, x.h / 2, x.w / 2);
  r.switches.assign(r.y.size(), 0);
  for (int ci = 0; ci < x.c; ++ci)
    for (int y = 0; y < r.y.h; ++y)
      for (int xx = 0; xx < r.y.w; ++xx) {
        T best = x.at(ci, 2 * y, 2 * xx);
        uint8_t which = 0;
        for (int k = 1; k < 4; ++k) {
          const T v = x.at(ci, 2 * y + k / 2, 2 * xx + k % 2);
          if (v > best) {
            best = v;
            which = uint8_t(k);
          }
        }
        r.y.at(ci, y, xx) = best;
        r.switches[(size_t(ci) * r.y.h + y) * r.y.w + xx] = which;
      }
  return r;
}

template <class T>
tensor3<T> maxpool2_backward(const tensor3<T>& dy,
                             const std::vector<uint8_t>& switches, int in_h,
                             int in_w) {
  tensor3<T> dx(dy.c, in_h, in_w);
  for (int ci = 0; ci < dy.c; ++ci)
    for (int y = 0; y < dy.h; ++y)
      for (int xx = 0; xx < dy.w; ++xx) {
        const uint8_t k = switches[(size_t(ci) * dy.h + y) * dy.w + xx];
        dx.at(ci, 2 * y + k / 2, 2 * xx + k % 2) += dy.at(ci, y, xx);
      }
  return dx;
}

// Places each value at its recorded argmax position, zero elsewhere.
template <class T>
tensor3<T> unpool2_switches(const tensor3<T>& x,
                            const std::vector<uint8_t>& switches) {
  if (switches.size() != x.size())
    throw validation_error("unpool2_switches: switch count mismatch");
  tensor3<T> y(x.c, x.h * 2, x.w * 2);
  for (int ci = 0; ci < x.c; ++ci)
    for (int yy = 0; yy < x.h; ++yy)
      for (int xx = 0; xx < x.w; ++xx) {
        const uint8_t k = switches[(size_t(ci) * x.h + yy) * x.w + xx];
        y.at(ci, 2 * yy + k / 2, 2 * xx + k % 2) = x.at(ci, yy, xx);
      }
  return y;
}

template <class T>
tensor3<T> unpool2_switches_backward(const tensor3<T>& dy,
                                     const std::vector<uint8_t>& switches,
                                     int in_h, int in_w) {
  tensor3<T> dx(dy.c, in_h, in_w);
  for (int ci = 0; ci < dy.c; ++ci)
    for (int yy = 0; yy < in_h; ++yy)
      for (int xx = 0; xx < in_w; ++xx) {
        const uint8_t k = switches[(size_t(ci) * in_h + yy) * in_w + xx];
        dx.at(ci, yy, xx) = dy.at(ci, 2 * yy + k / 2, 2 * xx + k % 2);
      }
  return dx;
}

template <class T>
tensor3<T> upsample2_nearest(const tensor3<T>& x) {
  tensor3<T> y(x.c, x.h * 2, x.w * 2);
  for (int ci = 0; ci < x.c; ++ci)
    for (int yy = 0; yy < y.h; ++yy)
      for (int xx = 0; xx < y.w; ++xx)
        y.at(ci, yy, xx) = x.at(ci, yy / 2, xx / 2);
  return y;
}

template <class T>
tensor3<T> upsample2_nearest_backward(const tensor3<T>& dy) {
  tensor3<T> dx(dy.c, dy.h / 2, dy.w / 2);
  for (int ci = 0; ci < dy.c; ++ci)
    for (int yy = 0; yy < dy.h; ++yy)
      for (int xx = 0; xx < dy.w; ++xx)
        dx.at(ci, yy / 2, xx / 2) += dy.at(ci, yy, xx);
  return dx;
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities.
// ---------------------------------------------------------------------------

template <class T>
tensor3<T> relu(const tensor3<T>& x) {
  tensor3<T> y = x;
  for (auto& v : y.v) v = v > T(0) ? v : T(0);
  return y;
}

template <class T>
tensor3<T> relu_backward(const tensor3<T>& dy, const tensor3<T>& preact) {
  tensor3<T> dx = dy;
  for (size_t i = 0; i < dx.v.size(); ++i)
    if (!(preact.v[i] > T(0))) dx.v[i] = T(0);
  return dx;
}

template <class T>
T sigmoid_scalar(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                   : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
tensor3<T> sigmoid(const tensor3<T>& x) {
  tensor3<T> y = x;
  for (auto& v : y.v) v = sigmoid_scalar(v);
  return y;
}

template <class T>
tensor3<T> sigmoid_backward(const tensor3<T>& dy, const tensor3<T>& out) {
  tensor3<T> dx = dy;
  for (size_t i = 0; i < dx.v.size(); ++i)
    dx.v[i] *= out.v[i] * (T(1) - out.v[i]);
  return dx;
}

// ---------------------------------------------------------------------------
// Dense layer.
// ---------------------------------------------------------------------------

template <class T>
struct dense {
  int in_n = 0, out_n = 0;
  std::vector<T> w;  // out x in, row-major
  std::vector<T> b;

  void resize(int in, int out) {
    in_n = in;
    out_n = out;
    w.assign(size_t(in) * out, T(0));
    b.assign(out, T(0));
  }

  void init(rng& r) {
    const double s = std::sqrt(6.0 / in_n);
    for (auto& x : w) x = T(r.uniform(-s, s));
    for (auto& x : b) x = T(0);
  }

  std::vector<T> forward(const std::vector<T>& x) const {
    std::vector<T> y(out_n);
    for (int o = 0; o < out_n; ++o) {
      const T* row = &w[size_t(o) * in_n];
      T acc = b[o];
      for (int i = 0; i < in_n; ++i) acc += row[i] * x[i];
      y[o] = acc;
    }
    return y;
  }

  std::vector<T> backward(const std::vector<T>& x, const std::vector<T>& dy,
                          dense<T>& grad) const {
    std::vector<T> dx(in_n, T(0));
    for (int o = 0; o < out_n; ++o) {
      const T g = dy[o];
      grad.b[o] += g;
      const T* row = &w[size_t(o) * in_n];
      T* grow = &grad.w[size_t(o) * in_n];
      for (int i = 0; i < in_n; ++i) {
        grow[i] += g * x[i];
        dx[i] += row[i] * g;
      }
    }
    return dx;
  }
};

// Templated bilinear sampling of a planar tensor at uv coordinates in [0,1];
// mirrors the pixel-field resampling semantics (clamp-to-border, zero
// positional gradient at saturation).
template <class T>
struct tensor_bilinear_axis {
  int i0 = 0, i1 = 0;
  T frac = T(0);
  bool saturated = false;
};

template <class T>
tensor_bilinear_axis<T> tensor_bilinear_locate(T coord01, int extent) {
  tensor_bilinear_axis<T> a;
  if (extent == 1) {
    a.saturated = true;
    return a;
  }
  T pos = coord01 * T(extent - 1);
  if (pos < T(0)) {
    a.i0 = a.i1 = 0;
    a.saturated = true;
    return a;
  }
  if (pos > T(extent - 1)) {
    a.i0 = a.i1 = extent - 1;
    a.saturated = true;
    return a;
  }
  a.i0 = std::min(int(pos), extent - 2);
  a.i1 = a.i0 + 1;
  a.frac = pos - T(a.i0);
  return a;
}

}  // namespace nfed
