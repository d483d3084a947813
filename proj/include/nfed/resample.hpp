// Differentiable resampling and spatial gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "nfed/fields.hpp"

namespace nfed {

namespace detail {

// Bilinear cell lookup with clamp-to-border. `saturated` reports whether the
// continuous coordinate was clamped, in which case the positional derivative
// is zero.
struct bilinear_axis {
  int i0 = 0, i1 = 0;
  double frac = 0.0;
  bool saturated = false;
};

inline bilinear_axis bilinear_locate(double coord01, int extent) {
  bilinear_axis a;
  if (extent == 1) {
    a.saturated = true;
    return a;
  }
  double pos = coord01 * (extent - 1);
  if (pos < 0.0) {
    a.i0 = a.i1 = 0;
    a.saturated = true;
    return a;
  }
  if (pos > extent - 1) {
    a.i0 = a.i1 = extent - 1;
    a.saturated = true;
    return a;
  }
  a.i0 = std::min(int(pos), extent - 2);
  a.i1 = a.i0 + 1;
  a.frac = pos - a.i0;
  return a;
}

}  // namespace detail

// Bilinear sample of `source` at uv coordinates (2-channel field in [0,1],
// scaled to the source extents). Out-of-range coordinates clamp to the border.
inline pixel_field uv_resample(const pixel_field& source, const pixel_field& uv) {
  if (uv.channels != 2)
    throw validation_error("uv_resample: uv must have 2 channels, got " +
                           std::to_string(uv.channels));
  pixel_field out(uv.width, uv.height, source.channels);
  for (int y = 0; y < uv.height; ++y) {
    for (int x = 0; x < uv.width; ++x) {
      auto ax = detail::bilinear_locate(uv.at(y, x, 0), source.width);
      auto ay = detail::bilinear_locate(uv.at(y, x, 1), source.height);
      const double w00 = (1 - ax.frac) * (1 - ay.frac);
      const double w10 = ax.frac * (1 - ay.frac);
      const double w01 = (1 - ax.frac) * ay.frac;
      const double w11 = ax.frac * ay.frac;
      for (int c = 0; c < source.channels; ++c) {
        out.at(y, x, c) = w00 * source.at(ay.i0, ax.i0, c) +
                          w10 * source.at(ay.i0, ax.i1, c) +
                          w01 * source.at(ay.i1, ax.i0, c) +
                          w11 * source.at(ay.i1, ax.i1, c);
      }
    }
  }
  return out;
}

struct uv_resample_grads {
  pixel_field d_source;
  pixel_field d_uv;
};

// Adjoint of uv_resample: gradients with respect to source values (scattered
// bilinear weights) and uv coordinates (piecewise-bilinear slope, zero where
// the coordinate clamped).
inline uv_resample_grads uv_resample_backward(const pixel_field& source,
                                              const pixel_field& uv,
                                              const pixel_field& upstream) {
  if (uv.channels != 2)
    throw validation_error("uv_resample_backward: uv must have 2 channels");
  if (upstream.width != uv.width || upstream.height != uv.height ||
      upstream.channels != source.channels)
    throw validation_error("uv_resample_backward: upstream shape mismatch");

  uv_resample_grads g;
  g.d_source = pixel_field(source.width, source.height, source.channels);
  g.d_uv = pixel_field(uv.width, uv.height, 2);

  for (int y = 0; y < uv.height; ++y) {
    for (int x = 0; x < uv.width; ++x) {
      auto ax = detail::bilinear_locate(uv.at(y, x, 0), source.width);
      auto ay = detail::bilinear_locate(uv.at(y, x, 1), source.height);
      const double w00 = (1 - ax.frac) * (1 - ay.frac);
      const double w10 = ax.frac * (1 - ay.frac);
      const double w01 = (1 - ax.frac) * ay.frac;
      const double w11 = ax.frac * ay.frac;
      double du = 0.0, dv = 0.0;
      for (int c = 0; c < source.channels; ++c) {
        const double up = upstream.at(y, x, c);
        g.d_source.at(ay.i0, ax.i0, c) += up * w00;
        g.d_source.at(ay.i0, ax.i1, c) += up * w10;
        g.d_source.at(ay.i1, ax.i0, c) += up * w01;
        g.d_source.at(ay.i1, ax.i1, c) += up * w11;
        const double dfdx =
            (1 - ay.frac) * (source.at(ay.i0, ax.i1, c) - source.at(ay.i0, ax.i0, c)) +
            ay.frac * (source.at(ay.i1, ax.i1, c) - source.at(ay.i1, ax.i0, c));
        const double dfdy =
            (1 - ax.frac) * (source.at(ay.i1, ax.i0, c) - source.at(ay.i0, ax.i0, c)) +
            ax.frac * (source.at(ay.i1, ax.i1, c) - source.at(ay.i0, ax.i1, c));
        du += up * dfdx;
        dv += up * dfdy;
      }
      g.d_uv.at(y, x, 0) = ax.saturated ? 0.0 : du * (source.width - 1);
      g.d_uv.at(y, x, 1) = ay.saturated ? 0.0 : dv * (source.height - 1);
    }
  }
  return g;
}

// Forward differences; the last column of dx and last row of dy are zero.
inline std::pair<pixel_field, pixel_field> spatial_gradient(const pixel_field& f) {
  if (f.width < 2 || f.height < 2)
    throw validation_error("spatial_gradient: extent must be >= 2");
  pixel_field dx(f.width, f.height, f.channels);
  pixel_field dy(f.width, f.height, f.channels);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x)
      for (int c = 0; c < f.channels; ++c) {
        if (x + 1 < f.width) dx.at(y, x, c) = f.at(y, x + 1, c) - f.at(y, x, c);
        if (y + 1 < f.height) dy.at(y, x, c) = f.at(y + 1, x, c) - f.at(y, x, c);
      }
  return {std::move(dx), std::move(dy)};
}

// Exact adjoint of spatial_gradient (negative-divergence stencil):
// <grad f, (gx,gy)> == <f, adjoint(gx,gy)> for all fields.
inline pixel_field spatial_gradient_adjoint(const pixel_field& gx,
                                            const pixel_field& gy) {
  require_same_shape(gx, gy, "spatial_gradient_adjoint");
  pixel_field out(gx.width, gx.height, gx.channels);
  for (int y = 0; y < gx.height; ++y)
    for (int x = 0; x < gx.width; ++x)
      for (int c = 0; c < gx.channels; ++c) {
        double v = 0.0;
        if (x >= 1) v += gx.at(y, x - 1, c);
        if (x + 1 < gx.width) v -= gx.at(y, x, c);
        if (y >= 1) v += gy.at(y - 1, x, c);
        if (y + 1 < gx.height) v -= gy.at(y, x, c);
        out.at(y, x, c) = v;
      }
  return out;
}

}  // namespace nfed
