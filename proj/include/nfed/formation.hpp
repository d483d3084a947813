// Image formation (albedo (*) shading) and alpha-matte compositing, both with
// exact adjoints. No clamping happens here; layers stay linear where the math
// is linear.
#pragma once

#include <utility>

#include "nfed/fields.hpp"

namespace nfed {

inline pixel_field form_image(const pixel_field& albedo, const pixel_field& shading) {
  require_same_shape(albedo, shading, "form_image");
  pixel_field out(albedo.width, albedo.height, albedo.channels);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = albedo.data[i] * shading.data[i];
  return out;
}

// dI/dA = S, dI/dS = A.
inline std::pair<pixel_field, pixel_field> form_image_backward(
    const pixel_field& albedo, const pixel_field& shading,
    const pixel_field& upstream) {
  require_same_shape(albedo, shading, "form_image_backward");
  require_same_shape(albedo, upstream, "form_image_backward");
  pixel_field d_albedo(albedo.width, albedo.height, albedo.channels);
  pixel_field d_shading = d_albedo;
  for (size_t i = 0; i < upstream.data.size(); ++i) {
    d_albedo.data[i] = upstream.data[i] * shading.data[i];
    d_shading.data[i] = upstream.data[i] * albedo.data[i];
  }
  return {std::move(d_albedo), std::move(d_shading)};
}

inline pixel_field composite(const pixel_field& fg, const pixel_field& bg,
                             const matte_mask& matte) {
  require_same_shape(fg, bg, "composite");
  require_mask_shape(fg, matte, "composite");
  pixel_field out(fg.width, fg.height, fg.channels);
  for (int y = 0; y < fg.height; ++y)
    for (int x = 0; x < fg.width; ++x) {
      const double m = matte.at(y, x);
      for (int c = 0; c < fg.channels; ++c)
        out.at(y, x, c) = m * fg.at(y, x, c) + (1.0 - m) * bg.at(y, x, c);
    }
  return out;
}

struct composite_grads {
  pixel_field d_fg;
  pixel_field d_bg;
  matte_mask d_matte;  // gradient carrier; values are unconstrained reals
};

inline composite_grads composite_backward(const pixel_field& fg, const pixel_field& bg,
                                          const matte_mask& matte,
                                          const pixel_field& upstream) {
  require_same_shape(fg, upstream, "composite_backward");
  composite_grads g;
  g.d_fg = pixel_field(fg.width, fg.height, fg.channels);
  g.d_bg = pixel_field(fg.width, fg.height, fg.channels);
  g.d_matte.width = fg.width;
  g.d_matte.height = fg.height;
  g.d_matte.alpha.assign(size_t(fg.width) * fg.height, 0.0);
  for (int y = 0; y < fg.height; ++y)
    for (int x = 0; x < fg.width; ++x) {
      const double m = matte.at(y, x);
      double dm = 0.0;
      for (int c = 0; c < fg.channels; ++c) {
        const double up = upstream.at(y, x, c);
        g.d_fg.at(y, x, c) = up * m;
        g.d_bg.at(y, x, c) = up * (1.0 - m);
        dm += up * (fg.at(y, x, c) - bg.at(y, x, c));
      }
      g.d_matte.alpha[g.d_matte.index(y, x)] = dm;
    }
  return g;
}

// Bundle of the rendering elements of one image; `consistent` marks that
// composite == matte (*) fg + (1-matte) (*) bg was established on build.
struct render_bundle {
  pixel_field albedo;
  pixel_field shading;
  pixel_field foreground;
  pixel_field background;
  matte_mask matte;
  pixel_field composite_image;
  bool consistent = false;
};

inline render_bundle make_render_bundle(pixel_field albedo, pixel_field shading,
                                        pixel_field background, matte_mask matte) {
  render_bundle b;
  b.foreground = form_image(albedo, shading);
  b.composite_image = composite(b.foreground, background, matte);
  b.albedo = std::move(albedo);
  b.shading = std::move(shading);
  b.background = std::move(background);
  b.matte = std::move(matte);
  b.consistent = true;
  return b;
}

}  // namespace nfed
