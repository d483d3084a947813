// Scaled-down disentangling autoencoder with in-network shading, image
// formation and matte compositing, trained by manual backpropagation. The
// encoder feeds a shared code that fans out into per-factor latents (albedo,
// normals, background, mask, and the 27 lighting coefficients used directly
// by the shading layer). Background and mask decoders reuse the encoder's
// pooling switches; the foreground decoders pass everything through the
// bottleneck. An autoencoder discriminator provides the energy-based
// adversarial term.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nfed/adam.hpp"
#include "nfed/fields.hpp"
#include "nfed/losses.hpp"
#include "nfed/net.hpp"
#include "nfed/parallel.hpp"
#include "nfed/rng.hpp"
#include "nfed/sh.hpp"
#include "nfed/synth.hpp"

namespace nfed {

struct toy_config {
  int size = 32;
  std::array<int, 3> filters{16, 32, 32};
  int z_shared = 64;
  int z_factor = 32;
  int disc_bottleneck = 64;
  bool baseline = false;          // plain autoencoder, single wide bottleneck
  int baseline_bottleneck = 265;  // 128 + 128 + 9 analog
  bool implicit_aux = false;      // auxiliary uv / uv-space-normal decoders
  bool implicit_mode = false;     // decode albedo/normals in uv space and warp

  int epochs = 120;
  int batch = 16;
  double lr = 3e-3;
  double lr_end = 3e-4;  // geometric per-epoch decay target; 0 keeps lr flat
  uint64_t seed = 1234;
  int checkpoint_every = 5;
  int threads = 0;  // 0: NFED_THREADS or hardware
  loss_weights weights;

  static constexpr int z_light = 27;  // pinned: the shading layer consumes it

  void validate() const {
    if (size < 8 || size % 8 != 0)
      throw validation_error("toy_config: size must be a positive multiple of 8");
    for (int f : filters)
      if (f < 1) throw validation_error("toy_config: filter counts must be >= 1");
    if (z_shared < 1 || z_factor < 1)
      throw validation_error("toy_config: latent dims must be >= 1");
    if (batch < 1) throw validation_error("toy_config: batch must be >= 1");
    if (epochs < 0) throw validation_error("toy_config: epochs must be >= 0");
    if (implicit_mode && !implicit_aux)
      throw validation_error("toy_config: implicit_mode requires implicit_aux");
    weights.validate();
  }

  static toy_config preset(const std::string& name) {
    toy_config c;
    if (name == "default") return c;
    if (name == "paper") {
      c.size = 64;
      c.filters = {32, 64, 64};
      c.z_shared = 128;
      c.z_factor = 128;
      return c;
    }
    if (name == "baseline") {
      c.baseline = true;
      return c;
    }
    throw validation_error("toy_config: unknown preset \"" + name + "\"");
  }
};

inline nlohmann::json toy_config_to_json(const toy_config& c) {
  return nlohmann::json{
      {"size", c.size},
      {"filters", {c.filters[0], c.filters[1], c.filters[2]}},
      {"z_shared", c.z_shared},
      {"z_factor", c.z_factor},
      {"disc_bottleneck", c.disc_bottleneck},
      {"baseline", c.baseline},
      {"baseline_bottleneck", c.baseline_bottleneck},
      {"implicit_aux", c.implicit_aux},
      {"implicit_mode", c.implicit_mode},
      {"epochs", c.epochs},
      {"batch", c.batch},
      {"lr", c.lr},
      {"lr_end", c.lr_end},
      {"seed", c.seed},
      {"checkpoint_every", c.checkpoint_every},
      {"threads", c.threads},
      {"weights", weights_to_json(c.weights)}};
}

inline toy_config toy_config_from_json(const nlohmann::json& j) {
  toy_config c;
  if (j.contains("preset")) c = toy_config::preset(j["preset"].get<std::string>());
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "preset") continue;
    else if (k == "size") c.size = it.value().get<int>();
    else if (k == "filters") {
      auto f = it.value().get<std::vector<int>>();
      if (f.size() != 3)
        throw validation_error("toy_config: filters must have 3 entries");
      c.filters = {f[0], f[1], f[2]};
    } else if (k == "z_shared") c.z_shared = it.value().get<int>();
    else if (k == "z_factor") c.z_factor = it.value().get<int>();
    else if (k == "disc_bottleneck") c.disc_bottleneck = it.value().get<int>();
    else if (k == "baseline") c.baseline = it.value().get<bool>();
    else if (k == "baseline_bottleneck") c.baseline_bottleneck = it.value().get<int>();
    else if (k == "implicit_aux") c.implicit_aux = it.value().get<bool>();
    else if (k == "implicit_mode") c.implicit_mode = it.value().get<bool>();
    else if (k == "epochs") c.epochs = it.value().get<int>();
    else if (k == "batch") c.batch = it.value().get<int>();
    else if (k == "lr") c.lr = it.value().get<double>();
    else if (k == "lr_end") c.lr_end = it.value().get<double>();
    else if (k == "seed") c.seed = it.value().get<uint64_t>();
    else if (k == "checkpoint_every") c.checkpoint_every = it.value().get<int>();
    else if (k == "threads") c.threads = it.value().get<int>();
    else if (k == "weights") c.weights = weights_from_json(it.value());
    else throw validation_error("toy_config: unknown key \"" + k + "\"");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Decoder stack: fc to the bottleneck grid, then three unpool+conv stages
// mirroring the encoder. Background/mask stacks route the encoder's pooling
// switches; foreground stacks upsample nearest.
// ---------------------------------------------------------------------------

struct switch_set {
  std::vector<uint8_t> s1, s2, s3;  // recorded at size/2, size/4, size/8
};

template <class T>
struct dec_cache {
  std::vector<T> z, fc_out;
  tensor3<T> t0, u1, c1, r1, u2, c2, r2, u3, c3, out;
};

template <class T>
struct decoder_stack {
  dense<T> fc;
  conv3x3<T> conv1, conv2, conv3;
  int out_ch = 3;
  int out_act = 0;  // 0 linear, 1 logistic
  bool use_switches = false;
  int base_c = 0, base_hw = 0;

  void configure(int z_dim, const std::array<int, 3>& f, int size, int out_channels,
                 int act, bool switches) {
    out_ch = out_channels;
    out_act = act;
    use_switches = switches;
    base_c = f[2];
    base_hw = size / 8;
    fc.resize(z_dim, base_c * base_hw * base_hw);
    conv1.resize(f[2], f[1]);
    conv2.resize(f[1], f[0]);
    conv3.resize(f[0], out_channels);
  }

  void init(rng& r) {
    fc.init(r);
    conv1.init(r);
    conv2.init(r);
    conv3.init(r);
  }

  dec_cache<T> forward(const std::vector<T>& z, const switch_set* sw) const {
    dec_cache<T> c;
    c.z = z;
    c.fc_out = fc.forward(z);
    c.t0 = tensor3<T>(base_c, base_hw, base_hw);
    c.t0.v = c.fc_out;
    c.u1 = use_switches ? unpool2_switches(c.t0, sw->s3) : upsample2_nearest(c.t0);
    c.c1 = conv1.forward(c.u1);
    c.r1 = relu(c.c1);
    c.u2 = use_switches ? unpool2_switches(c.r1, sw->s2) : upsample2_nearest(c.r1);
    c.c2 = conv2.forward(c.u2);
    c.r2 = relu(c.c2);
    c.u3 = use_switches ? unpool2_switches(c.r2, sw->s1) : upsample2_nearest(c.r2);
    c.c3 = conv3.forward(c.u3);
    c.out = out_act == 1 ? sigmoid(c.c3) : c.c3;
    return c;
  }

  std::vector<T> backward(const dec_cache<T>& c, const tensor3<T>& d_out,
                          const switch_set* sw, decoder_stack<T>& grad) const {
    tensor3<T> d = out_act == 1 ? sigmoid_backward(d_out, c.out) : d_out;
    tensor3<T> du3 = conv3.backward(c.u3, d, grad.conv3);
    tensor3<T> dr2 = use_switches
                         ? unpool2_switches_backward(du3, sw->s1, c.r2.h, c.r2.w)
                         : upsample2_nearest_backward(du3);
    tensor3<T> dc2 = relu_backward(dr2, c.c2);
    tensor3<T> du2 = conv2.backward(c.u2, dc2, grad.conv2);
    tensor3<T> dr1 = use_switches
                         ? unpool2_switches_backward(du2, sw->s2, c.r1.h, c.r1.w)
                         : upsample2_nearest_backward(du2);
    tensor3<T> dc1 = relu_backward(dr1, c.c1);
    tensor3<T> du1 = conv1.backward(c.u1, dc1, grad.conv1);
    tensor3<T> dt0 = use_switches
                         ? unpool2_switches_backward(du1, sw->s3, c.t0.h, c.t0.w)
                         : upsample2_nearest_backward(du1);
    return fc.backward(c.z, dt0.v, grad.fc);
  }
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <class T>
struct param_ref {
  std::string name;
  std::vector<T>* data;
  std::vector<uint32_t> dims;
};

template <class T>
struct toy_model {
  toy_config cfg;

  conv3x3<T> enc1, enc2, enc3;
  dense<T> fc_zi;
  dense<T> head_albedo, head_normals, head_bg, head_mask, head_light;
  decoder_stack<T> dec_albedo, dec_normals, dec_bg, dec_mask;
  decoder_stack<T> dec_baseline;
  // Implicit-representation extras: uv decoder plus one decoder shared by the
  // uv-space albedo and normal latents.
  dense<T> head_uv, head_ai, head_ni;
  decoder_stack<T> dec_uv, dec_impl;
  // Discriminator autoencoder.
  conv3x3<T> disc_e1, disc_e2, disc_e3;
  dense<T> disc_fc_in, disc_fc_out;
  conv3x3<T> disc_d1, disc_d2, disc_d3;

  static toy_model shaped(const toy_config& cfg) {
    cfg.validate();
    toy_model m;
    m.cfg = cfg;
    const auto& f = cfg.filters;
    const int flat_n = f[2] * (cfg.size / 8) * (cfg.size / 8);
    m.enc1.resize(3, f[0]);
    m.enc2.resize(f[0], f[1]);
    m.enc3.resize(f[1], f[2]);
    if (cfg.baseline) {
      m.fc_zi.resize(flat_n, cfg.baseline_bottleneck);
      m.dec_baseline.configure(cfg.baseline_bottleneck, f, cfg.size, 3, 0, false);
    } else {
      m.fc_zi.resize(flat_n, cfg.z_shared);
      m.head_albedo.resize(cfg.z_shared, cfg.z_factor);
      m.head_normals.resize(cfg.z_shared, cfg.z_factor);
      m.head_bg.resize(cfg.z_shared, cfg.z_factor);
      m.head_mask.resize(cfg.z_shared, cfg.z_factor);
      m.head_light.resize(cfg.z_shared, toy_config::z_light);
      m.dec_albedo.configure(cfg.z_factor, f, cfg.size, 3, 0, false);
      m.dec_normals.configure(cfg.z_factor, f, cfg.size, 3, 0, false);
      m.dec_bg.configure(cfg.z_factor, f, cfg.size, 3, 0, true);
      m.dec_mask.configure(cfg.z_factor, f, cfg.size, 1, 1, true);
      if (cfg.implicit_aux) {
        m.head_uv.resize(cfg.z_shared, cfg.z_factor);
        m.head_ai.resize(cfg.z_shared, cfg.z_factor);
        m.head_ni.resize(cfg.z_shared, cfg.z_factor);
        m.dec_uv.configure(cfg.z_factor, f, cfg.size, 2, 1, false);
        m.dec_impl.configure(cfg.z_factor, f, cfg.size, 3, 0, false);
      }
    }
    m.disc_e1.resize(3, f[0]);
    m.disc_e2.resize(f[0], f[1]);
    m.disc_e3.resize(f[1], f[2]);
    m.disc_fc_in.resize(flat_n, cfg.disc_bottleneck);
    m.disc_fc_out.resize(cfg.disc_bottleneck, flat_n);
    m.disc_d1.resize(f[2], f[1]);
    m.disc_d2.resize(f[1], f[0]);
    m.disc_d3.resize(f[0], 3);
    return m;
  }

  static toy_model make(const toy_config& cfg, uint64_t seed) {
    toy_model m = shaped(cfg);
    rng r(seed);
    // Parameters pass through float32 so a fresh checkpoint round-trips
    // bit-exactly.
    for (auto& p : m.params())
      for (auto& v : *p.data) v = T(float(v));
    m.enc1.init(r);
    m.enc2.init(r);
    m.enc3.init(r);
    m.fc_zi.init(r);
    if (!m.cfg.baseline) {
      m.head_albedo.init(r);
      m.head_normals.init(r);
      m.head_bg.init(r);
      m.head_mask.init(r);
      m.head_light.init(r);
      m.dec_albedo.init(r);
      m.dec_normals.init(r);
      m.dec_bg.init(r);
      m.dec_mask.init(r);
      if (m.cfg.implicit_aux) {
        m.head_uv.init(r);
        m.head_ai.init(r);
        m.head_ni.init(r);
        m.dec_uv.init(r);
        m.dec_impl.init(r);
      }
    } else {
      m.dec_baseline.init(r);
    }
    m.disc_e1.init(r);
    m.disc_e2.init(r);
    m.disc_e3.init(r);
    m.disc_fc_in.init(r);
    m.disc_fc_out.init(r);
    m.disc_d1.init(r);
    m.disc_d2.init(r);
    m.disc_d3.init(r);
    for (auto& p : m.params())
      for (auto& v : *p.data) v = T(float(v));
    return m;
  }

  toy_model zero_like() const {
    toy_model g = shaped(cfg);
    return g;
  }

  // Generator parameters (everything the reconstruction objective trains).
  std::vector<param_ref<T>> generator_params() {
    std::vector<param_ref<T>> out;
    auto add_conv = [&](const std::string& n, conv3x3<T>& c) {
      out.push_back({n + ".w", &c.w,
                     {uint32_t(c.out_c), uint32_t(c.in_c), 3, 3}});
      out.push_back({n + ".b", &c.b, {uint32_t(c.out_c)}});
    };
    auto add_dense = [&](const std::string& n, dense<T>& d) {
      out.push_back({n + ".w", &d.w, {uint32_t(d.out_n), uint32_t(d.in_n)}});
      out.push_back({n + ".b", &d.b, {uint32_t(d.out_n)}});
    };
    auto add_stack = [&](const std::string& n, decoder_stack<T>& s) {
      add_dense(n + ".fc", s.fc);
      add_conv(n + ".conv1", s.conv1);
      add_conv(n + ".conv2", s.conv2);
      add_conv(n + ".conv3", s.conv3);
    };
    add_conv("enc.conv1", enc1);
    add_conv("enc.conv2", enc2);
    add_conv("enc.conv3", enc3);
    add_dense("enc.fc_zi", fc_zi);
    if (cfg.baseline) {
      add_stack("dec.baseline", dec_baseline);
    } else {
      add_dense("head.albedo", head_albedo);
      add_dense("head.normals", head_normals);
      add_dense("head.bg", head_bg);
      add_dense("head.mask", head_mask);
      add_dense("head.light", head_light);
      add_stack("dec.albedo", dec_albedo);
      add_stack("dec.normals", dec_normals);
      add_stack("dec.bg", dec_bg);
      add_stack("dec.mask", dec_mask);
      if (cfg.implicit_aux) {
        add_dense("head.uv", head_uv);
        add_dense("head.ai", head_ai);
        add_dense("head.ni", head_ni);
        add_stack("dec.uv", dec_uv);
        add_stack("dec.impl", dec_impl);
      }
    }
    return out;
  }

  std::vector<param_ref<T>> discriminator_params() {
    std::vector<param_ref<T>> out;
    auto add_conv = [&](const std::string& n, conv3x3<T>& c) {
      out.push_back({n + ".w", &c.w,
                     {uint32_t(c.out_c), uint32_t(c.in_c), 3, 3}});
      out.push_back({n + ".b", &c.b, {uint32_t(c.out_c)}});
    };
    auto add_dense = [&](const std::string& n, dense<T>& d) {
      out.push_back({n + ".w", &d.w, {uint32_t(d.out_n), uint32_t(d.in_n)}});
      out.push_back({n + ".b", &d.b, {uint32_t(d.out_n)}});
    };
    add_conv("disc.e1", disc_e1);
    add_conv("disc.e2", disc_e2);
    add_conv("disc.e3", disc_e3);
    add_dense("disc.fc_in", disc_fc_in);
    add_dense("disc.fc_out", disc_fc_out);
    add_conv("disc.d1", disc_d1);
    add_conv("disc.d2", disc_d2);
    add_conv("disc.d3", disc_d3);
    return out;
  }

  std::vector<param_ref<T>> params() {
    auto out = generator_params();
    auto d = discriminator_params();
    out.insert(out.end(), d.begin(), d.end());
    return out;
  }
};

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

template <class T>
struct enc_cache {
  tensor3<T> x, c1, p1, r1, c2, p2, r2, c3, p3, r3;
  switch_set sw;
  std::vector<T> flat, zi;
};

template <class T>
struct latent_set {
  std::vector<T> zi;
  std::vector<T> albedo, normals, bg, mask, light;
  std::vector<T> uv, ai, ni;  // implicit extras
};

template <class T>
struct toy_cache {
  enc_cache<T> enc;
  latent_set<T> z;
  dec_cache<T> d_albedo, d_normals, d_bg, d_mask, d_baseline;
  dec_cache<T> d_uv, d_ai, d_ni;
  tensor3<T> albedo;       // image-space albedo (decoded or warped)
  tensor3<T> normals_raw;  // pre-normalization
  tensor3<T> normals_unit;
  tensor3<T> shading, ifg, io;
  int degenerate_normals = 0;
};

template <class T>
enc_cache<T> toy_encode(const toy_model<T>& m, const tensor3<T>& x) {
  if (x.c != 3 || x.h != m.cfg.size || x.w != m.cfg.size)
    throw validation_error("toy_encode: input must be 3x" +
                           std::to_string(m.cfg.size) + "x" +
                           std::to_string(m.cfg.size));
  enc_cache<T> e;
  e.x = x;
  e.c1 = m.enc1.forward(e.x);
  auto pr1 = maxpool2(e.c1);
  e.p1 = std::move(pr1.y);
  e.sw.s1 = std::move(pr1.switches);
  e.r1 = relu(e.p1);
  e.c2 = m.enc2.forward(e.r1);
  auto pr2 = maxpool2(e.c2);
  e.p2 = std::move(pr2.y);
  e.sw.s2 = std::move(pr2.switches);
  e.r2 = relu(e.p2);
  e.c3 = m.enc3.forward(e.r2);
  auto pr3 = maxpool2(e.c3);
  e.p3 = std::move(pr3.y);
  e.sw.s3 = std::move(pr3.switches);
  e.r3 = relu(e.p3);
  e.flat = e.r3.v;
  e.zi = m.fc_zi.forward(e.flat);
  return e;
}

template <class T>
latent_set<T> toy_latents(const toy_model<T>& m, const enc_cache<T>& e) {
  latent_set<T> z;
  z.zi = e.zi;
  if (m.cfg.baseline) return z;
  z.albedo = m.head_albedo.forward(z.zi);
  z.normals = m.head_normals.forward(z.zi);
  z.bg = m.head_bg.forward(z.zi);
  z.mask = m.head_mask.forward(z.zi);
  z.light = m.head_light.forward(z.zi);
  if (m.cfg.implicit_aux) {
    z.uv = m.head_uv.forward(z.zi);
    z.ai = m.head_ai.forward(z.zi);
    z.ni = m.head_ni.forward(z.zi);
  }
  return z;
}

// Bilinear warp of a uv-space chart into image space; uv holds 2 channels in
// [0,1]. Mirrors the pixel-field resampling semantics.
template <class T>
tensor3<T> warp_by_uv(const tensor3<T>& chart, const tensor3<T>& uv) {
  tensor3<T> out(chart.c, uv.h, uv.w);
  for (int y = 0; y < uv.h; ++y)
    for (int x = 0; x < uv.w; ++x) {
      const auto ax = tensor_bilinear_locate(uv.at(0, y, x), chart.w);
      const auto ay = tensor_bilinear_locate(uv.at(1, y, x), chart.h);
      const T w00 = (T(1) - ax.frac) * (T(1) - ay.frac);
      const T w10 = ax.frac * (T(1) - ay.frac);
      const T w01 = (T(1) - ax.frac) * ay.frac;
      const T w11 = ax.frac * ay.frac;
      for (int ci = 0; ci < chart.c; ++ci)
        out.at(ci, y, x) = w00 * chart.at(ci, ay.i0, ax.i0) +
                           w10 * chart.at(ci, ay.i0, ax.i1) +
                           w01 * chart.at(ci, ay.i1, ax.i0) +
                           w11 * chart.at(ci, ay.i1, ax.i1);
    }
  return out;
}

template <class T>
void warp_by_uv_backward(const tensor3<T>& chart, const tensor3<T>& uv,
                         const tensor3<T>& upstream, tensor3<T>& d_chart,
                         tensor3<T>& d_uv) {
  d_chart = tensor3<T>(chart.c, chart.h, chart.w);
  d_uv = tensor3<T>(2, uv.h, uv.w);
  for (int y = 0; y < uv.h; ++y)
    for (int x = 0; x < uv.w; ++x) {
      const auto ax = tensor_bilinear_locate(uv.at(0, y, x), chart.w);
      const auto ay = tensor_bilinear_locate(uv.at(1, y, x), chart.h);
      const T w00 = (T(1) - ax.frac) * (T(1) - ay.frac);
      const T w10 = ax.frac * (T(1) - ay.frac);
      const T w01 = (T(1) - ax.frac) * ay.frac;
      const T w11 = ax.frac * ay.frac;
      T du = T(0), dv = T(0);
      for (int ci = 0; ci < chart.c; ++ci) {
        const T up = upstream.at(ci, y, x);
        d_chart.at(ci, ay.i0, ax.i0) += up * w00;
        d_chart.at(ci, ay.i0, ax.i1) += up * w10;
        d_chart.at(ci, ay.i1, ax.i0) += up * w01;
        d_chart.at(ci, ay.i1, ax.i1) += up * w11;
        const T dfdx = (T(1) - ay.frac) *
                           (chart.at(ci, ay.i0, ax.i1) - chart.at(ci, ay.i0, ax.i0)) +
                       ay.frac *
                           (chart.at(ci, ay.i1, ax.i1) - chart.at(ci, ay.i1, ax.i0));
        const T dfdy = (T(1) - ax.frac) *
                           (chart.at(ci, ay.i1, ax.i0) - chart.at(ci, ay.i0, ax.i0)) +
                       ax.frac *
                           (chart.at(ci, ay.i1, ax.i1) - chart.at(ci, ay.i0, ax.i1));
        du += up * dfdx;
        dv += up * dfdy;
      }
      d_uv.at(0, y, x) = ax.saturated ? T(0) : du * T(chart.w - 1);
      d_uv.at(1, y, x) = ay.saturated ? T(0) : dv * T(chart.h - 1);
    }
}

template <class T>
toy_cache<T> toy_decode(const toy_model<T>& m, const latent_set<T>& z,
                        const enc_cache<T>& enc) {
  toy_cache<T> c;
  c.enc = enc;
  c.z = z;
  if (m.cfg.baseline) {
    c.d_baseline = m.dec_baseline.forward(z.zi, nullptr);
    c.io = c.d_baseline.out;
    return c;
  }

  c.d_bg = m.dec_bg.forward(z.bg, &enc.sw);
  c.d_mask = m.dec_mask.forward(z.mask, &enc.sw);

  if (m.cfg.implicit_mode) {
    c.d_uv = m.dec_uv.forward(z.uv, nullptr);
    c.d_ai = m.dec_impl.forward(z.ai, nullptr);
    c.d_ni = m.dec_impl.forward(z.ni, nullptr);
    c.albedo = warp_by_uv(c.d_ai.out, c.d_uv.out);
    c.normals_raw = warp_by_uv(c.d_ni.out, c.d_uv.out);
  } else {
    if (m.cfg.implicit_aux) {
      c.d_uv = m.dec_uv.forward(z.uv, nullptr);
      c.d_ni = m.dec_impl.forward(z.ni, nullptr);
      c.d_ai = m.dec_impl.forward(z.ai, nullptr);
    }
    c.d_albedo = m.dec_albedo.forward(z.albedo, nullptr);
    c.d_normals = m.dec_normals.forward(z.normals, nullptr);
    c.albedo = c.d_albedo.out;
    c.normals_raw = c.d_normals.out;
  }

  const int s = m.cfg.size;
  c.normals_unit = tensor3<T>(3, s, s);
  c.degenerate_normals = 0;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const auto n = normalize_with_grad(c.normals_raw.at(0, y, x),
                                         c.normals_raw.at(1, y, x),
                                         c.normals_raw.at(2, y, x));
      c.normals_unit.at(0, y, x) = n.nx;
      c.normals_unit.at(1, y, x) = n.ny;
      c.normals_unit.at(2, y, x) = n.nz;
      c.degenerate_normals += n.degenerate ? 1 : 0;
    }

  c.shading = tensor3<T>(3, s, s);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const auto b = sh_basis_t(c.normals_unit.at(0, y, x),
                                c.normals_unit.at(1, y, x),
                                c.normals_unit.at(2, y, x));
      for (int ch = 0; ch < 3; ++ch) {
        T acc = T(0);
        for (int k = 0; k < 9; ++k) acc += b[k] * z.light[ch * 9 + k];
        c.shading.at(ch, y, x) = acc;
      }
    }

  c.ifg = tensor3<T>(3, s, s);
  for (size_t i = 0; i < c.ifg.v.size(); ++i)
    c.ifg.v[i] = c.albedo.v[i] * c.shading.v[i];

  c.io = tensor3<T>(3, s, s);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const T mv = c.d_mask.out.at(0, y, x);
        c.io.at(ch, y, x) = mv * c.ifg.at(ch, y, x) +
                            (T(1) - mv) * c.d_bg.out.at(ch, y, x);
      }
  return c;
}

template <class T>
toy_cache<T> toy_forward(const toy_model<T>& m, const tensor3<T>& x) {
  enc_cache<T> enc = toy_encode(m, x);
  latent_set<T> z = toy_latents(m, enc);
  return toy_decode(m, z, enc);
}

struct toy_outputs {
  pixel_field io, albedo, shading, background, mask;
  normal_field normals;
  sh_coeffs light;
};

template <class T>
toy_outputs outputs_from_cache(const toy_model<T>& m, const toy_cache<T>& c) {
  toy_outputs o;
  o.io = to_field(c.io);
  if (m.cfg.baseline) return o;
  o.albedo = to_field(c.albedo);
  o.shading = to_field(c.shading);
  o.background = to_field(c.d_bg.out);
  o.mask = to_field(c.d_mask.out);
  std::vector<double> vecs(c.normals_unit.size());
  for (int y = 0; y < c.normals_unit.h; ++y)
    for (int x = 0; x < c.normals_unit.w; ++x)
      for (int k = 0; k < 3; ++k)
        vecs[(size_t(y) * c.normals_unit.w + x) * 3 + k] =
            double(c.normals_unit.at(k, y, x));
  o.normals = normal_field::from_vectors(c.normals_unit.w, c.normals_unit.h,
                                         std::move(vecs));
  for (int k = 0; k < 27; ++k) o.light[k] = double(c.z.light[k]);
  return o;
}

// ---------------------------------------------------------------------------
// Discriminator (autoencoder energy)
// ---------------------------------------------------------------------------

template <class T>
struct disc_cache {
  tensor3<T> x, c1, p1, r1, c2, p2, r2, c3, p3, r3;
  std::vector<uint8_t> s1, s2, s3;
  std::vector<T> flat, zb, fcb;
  tensor3<T> t0, u1, d1, dr1, u2, d2, dr2, u3, recon;
  double energy = 0.0;  // mean squared reconstruction error
};

template <class T>
disc_cache<T> disc_forward(const toy_model<T>& m, const tensor3<T>& x) {
  disc_cache<T> c;
  c.x = x;
  c.c1 = m.disc_e1.forward(x);
  auto p1 = maxpool2(c.c1);
  c.p1 = std::move(p1.y);
  c.s1 = std::move(p1.switches);
  c.r1 = relu(c.p1);
  c.c2 = m.disc_e2.forward(c.r1);
  auto p2 = maxpool2(c.c2);
  c.p2 = std::move(p2.y);
  c.s2 = std::move(p2.switches);
  c.r2 = relu(c.p2);
  c.c3 = m.disc_e3.forward(c.r2);
  auto p3 = maxpool2(c.c3);
  c.p3 = std::move(p3.y);
  c.s3 = std::move(p3.switches);
  c.r3 = relu(c.p3);
  c.flat = c.r3.v;
  c.zb = m.disc_fc_in.forward(c.flat);
  c.fcb = m.disc_fc_out.forward(c.zb);
  c.t0 = tensor3<T>(c.r3.c, c.r3.h, c.r3.w);
  c.t0.v = c.fcb;
  c.u1 = upsample2_nearest(c.t0);
  c.d1 = m.disc_d1.forward(c.u1);
  c.dr1 = relu(c.d1);
  c.u2 = upsample2_nearest(c.dr1);
  c.d2 = m.disc_d2.forward(c.u2);
  c.dr2 = relu(c.d2);
  c.u3 = upsample2_nearest(c.dr2);
  c.recon = m.disc_d3.forward(c.u3);
  double e = 0.0;
  for (size_t i = 0; i < c.recon.v.size(); ++i) {
    const double d = double(c.recon.v[i]) - double(x.v[i]);
    e += d * d;
  }
  c.energy = e / double(c.recon.v.size());
  return c;
}

// Backpropagates an upstream gradient on the reconstruction through the
// discriminator. Parameter gradients accumulate into `g` (pass a scratch
// model when only the input gradient matters); when `d_input` is non-null,
// the gradient with respect to the discriminator input (the generator
// pathway) is returned there. The direct dependence of the energy on the
// input is handled by the caller.
template <class T>
void disc_backward(const toy_model<T>& m, const disc_cache<T>& c,
                   const tensor3<T>& d_recon, toy_model<T>& g,
                   tensor3<T>* d_input) {
  tensor3<T> du3 = m.disc_d3.backward(c.u3, d_recon, g.disc_d3);
  tensor3<T> ddr2 = upsample2_nearest_backward(du3);
  tensor3<T> dd2 = relu_backward(ddr2, c.d2);
  tensor3<T> du2 = m.disc_d2.backward(c.u2, dd2, g.disc_d2);
  tensor3<T> ddr1 = upsample2_nearest_backward(du2);
  tensor3<T> dd1 = relu_backward(ddr1, c.d1);
  tensor3<T> du1 = m.disc_d1.backward(c.u1, dd1, g.disc_d1);
  tensor3<T> dt0 = upsample2_nearest_backward(du1);
  std::vector<T> dzb = m.disc_fc_out.backward(c.zb, dt0.v, g.disc_fc_out);
  std::vector<T> dflat = m.disc_fc_in.backward(c.flat, dzb, g.disc_fc_in);
  tensor3<T> dr3(c.r3.c, c.r3.h, c.r3.w);
  dr3.v = dflat;
  tensor3<T> dp3 = relu_backward(dr3, c.p3);
  tensor3<T> dc3 = maxpool2_backward(dp3, c.s3, c.c3.h, c.c3.w);
  tensor3<T> dr2 = m.disc_e3.backward(c.r2, dc3, g.disc_e3);
  tensor3<T> dp2 = relu_backward(dr2, c.p2);
  tensor3<T> dc2 = maxpool2_backward(dp2, c.s2, c.c2.h, c.c2.w);
  tensor3<T> dr1 = m.disc_e2.backward(c.r1, dc2, g.disc_e2);
  tensor3<T> dp1 = relu_backward(dr1, c.p1);
  tensor3<T> dc1 = maxpool2_backward(dp1, c.s1, c.c1.h, c.c1.w);
  tensor3<T> dx = m.disc_e1.backward(c.x, dc1, g.disc_e1);
  if (d_input) *d_input = std::move(dx);
}

}  // namespace nfed

#include "nfed/toynet_train.hpp"
