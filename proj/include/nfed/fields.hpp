// Image-grid containers shared by every other module: interleaved float maps,
// unit-normal maps and alpha mattes, with validation on construction.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nfed {

// Error taxonomy. validation_error maps to CLI exit code 2 (bad usage or
// malformed inputs), io_error and numeric_error map to exit code 1.
struct validation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// H x W x C grid of real values, row-major, channel-interleaved.
// Carries images, albedo, shading, mattes-as-fields, uv maps and gradients.
// `bounded` fields are constrained to [0,1] at validation time; gradient and
// normal-like carriers leave it off.
struct pixel_field {
  int width = 0;
  int height = 0;
  int channels = 0;
  bool bounded = false;
  std::vector<double> data;

  pixel_field() = default;
  pixel_field(int w, int h, int c, double fill = 0.0, bool bounded_ = false)
      : width(w), height(h), channels(c), bounded(bounded_),
        data(static_cast<size_t>(w) * h * c, fill) {
    if (w <= 0 || h <= 0 || c < 1 || c > 3)
      throw validation_error("pixel_field: bad shape " + shape_string());
    if (bounded_ && (fill < 0.0 || fill > 1.0))
      throw validation_error("pixel_field: fill outside [0,1] for bounded field");
  }

  static pixel_field from_data(int w, int h, int c, std::vector<double> d,
                               bool bounded_ = false) {
    pixel_field f;
    f.width = w;
    f.height = h;
    f.channels = c;
    f.bounded = bounded_;
    f.data = std::move(d);
    if (w <= 0 || h <= 0 || c < 1 || c > 3)
      throw validation_error("pixel_field: bad shape " + f.shape_string());
    if (f.data.size() != static_cast<size_t>(w) * h * c)
      throw validation_error("pixel_field: data length does not match shape");
    f.validate();
    return f;
  }

  size_t index(int y, int x, int c) const {
    return (static_cast<size_t>(y) * width + x) * channels + c;
  }
  double& at(int y, int x, int c) { return data[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data[index(y, x, c)]; }

  int pixel_count() const { return width * height; }
  bool same_shape(const pixel_field& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  std::string shape_string() const {
    return std::to_string(width) + "x" + std::to_string(height) + "x" +
           std::to_string(channels);
  }

  void validate() const {
    for (double v : data) {
      if (!std::isfinite(v))
        throw validation_error("pixel_field: non-finite value");
      if (bounded && (v < 0.0 || v > 1.0))
        throw validation_error("pixel_field: value outside [0,1] in bounded field");
    }
  }
};

// Per-pixel unit surface normals (nx, ny, nz). The constructor path rejects
// vectors whose L2 norm deviates from 1 by more than 1e-6.
struct normal_field {
  int width = 0;
  int height = 0;
  std::vector<double> vecs;  // 3 per pixel

  normal_field() = default;
  normal_field(int w, int h) : width(w), height(h),
      vecs(static_cast<size_t>(w) * h * 3, 0.0) {
    if (w <= 0 || h <= 0) throw validation_error("normal_field: bad shape");
    for (size_t i = 2; i < vecs.size(); i += 3) vecs[i] = 1.0;  // default (0,0,1)
  }

  static normal_field from_vectors(int w, int h, std::vector<double> v) {
    normal_field n;
    n.width = w;
    n.height = h;
    n.vecs = std::move(v);
    if (w <= 0 || h <= 0 || n.vecs.size() != static_cast<size_t>(w) * h * 3)
      throw validation_error("normal_field: data length does not match shape");
    n.validate();
    return n;
  }

  size_t index(int y, int x) const {
    return (static_cast<size_t>(y) * width + x) * 3;
  }
  double nx(int y, int x) const { return vecs[index(y, x) + 0]; }
  double ny(int y, int x) const { return vecs[index(y, x) + 1]; }
  double nz(int y, int x) const { return vecs[index(y, x) + 2]; }
  void set(int y, int x, double vx, double vy, double vz) {
    size_t i = index(y, x);
    vecs[i + 0] = vx;
    vecs[i + 1] = vy;
    vecs[i + 2] = vz;
  }

  int pixel_count() const { return width * height; }

  void validate() const {
    for (size_t i = 0; i < vecs.size(); i += 3) {
      double n2 = vecs[i] * vecs[i] + vecs[i + 1] * vecs[i + 1] +
                  vecs[i + 2] * vecs[i + 2];
      if (!std::isfinite(n2) || std::abs(std::sqrt(n2) - 1.0) > 1e-6)
        throw validation_error("normal_field: non-unit normal at element " +
                               std::to_string(i / 3));
    }
  }

  // 3-channel view for map losses and float-map export.
  pixel_field as_field() const {
    pixel_field f(width, height, 3);
    f.data = vecs;
    return f;
  }
};

// Per-pixel alpha in [0,1].
struct matte_mask {
  int width = 0;
  int height = 0;
  std::vector<double> alpha;

  matte_mask() = default;
  matte_mask(int w, int h, double fill = 0.0)
      : width(w), height(h), alpha(static_cast<size_t>(w) * h, fill) {
    if (w <= 0 || h <= 0) throw validation_error("matte_mask: bad shape");
    if (fill < 0.0 || fill > 1.0)
      throw validation_error("matte_mask: fill outside [0,1]");
  }

  static matte_mask from_data(int w, int h, std::vector<double> a) {
    matte_mask m;
    m.width = w;
    m.height = h;
    m.alpha = std::move(a);
    if (w <= 0 || h <= 0 || m.alpha.size() != static_cast<size_t>(w) * h)
      throw validation_error("matte_mask: data length does not match shape");
    m.validate();
    return m;
  }

  size_t index(int y, int x) const { return static_cast<size_t>(y) * width + x; }
  double at(int y, int x) const { return alpha[index(y, x)]; }
  double& at(int y, int x) { return alpha[index(y, x)]; }

  // Hard-membership convention used by masked reductions throughout.
  bool inside(int y, int x) const { return at(y, x) > 0.5; }
  bool inside_flat(size_t i) const { return alpha[i] > 0.5; }

  int count_inside() const {
    int n = 0;
    for (double a : alpha) n += a > 0.5 ? 1 : 0;
    return n;
  }

  void validate() const {
    for (double a : alpha) {
      if (!std::isfinite(a) || a < 0.0 || a > 1.0)
        throw validation_error("matte_mask: alpha outside [0,1]");
    }
  }
};

inline void require_same_shape(const pixel_field& a, const pixel_field& b,
                               const char* where) {
  if (!a.same_shape(b))
    throw validation_error(std::string(where) + ": shape mismatch " +
                           a.shape_string() + " vs " + b.shape_string());
}

inline void require_mask_shape(const pixel_field& f, const matte_mask& m,
                               const char* where) {
  if (f.width != m.width || f.height != m.height)
    throw validation_error(std::string(where) + ": mask shape mismatch");
}

}  // namespace nfed
