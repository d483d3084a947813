// Finite-difference verification of every analytic backward path: shading,
// formation, compositing, resampling, the loss suite, the solver objective
// and the full toy network (double and float). Shared by the gradcheck CLI
// command, the unit tests and the acceptance suite.
//
// Relative errors use a two-sided metric with a scale floor,
//   err = |fd - an| / max(|an|, |fd|, 0.01 * gmax),
// so central-difference roundoff on near-zero gradient entries does not
// register as failure. Evaluation points are redrawn until every kink
// (ReLU, max-pool tie, hinge, normalization guard) has clearance, since the
// difference quotient is meaningless across a kink.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "nfed/fields.hpp"
#include "nfed/formation.hpp"
#include "nfed/losses.hpp"
#include "nfed/resample.hpp"
#include "nfed/rng.hpp"
#include "nfed/sh.hpp"
#include "nfed/solver.hpp"
#include "nfed/synth.hpp"
#include "nfed/toynet.hpp"

namespace nfed {

struct gradcheck_result {
  std::string layer;
  double max_rel_err = 0.0;
  int samples = 0;
};

namespace detail {

inline double gc_rel(double fd, double an, double gmax) {
  return std::abs(fd - an) /
         std::max({std::abs(fd), std::abs(an), 1e-2 * gmax, 1e-12});
}

inline double gc_inner(const pixel_field& a, const pixel_field& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

inline pixel_field gc_random_field(rng& r, int w, int h, int c, double lo,
                                   double hi) {
  pixel_field f(w, h, c);
  for (auto& v : f.data) v = r.uniform(lo, hi);
  return f;
}

inline normal_field gc_random_normals(rng& r, int w, int h) {
  normal_field n(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double nz = r.uniform(0.15, 1.0);
      double phi = r.uniform(0.0, 2.0 * 3.14159265358979323846);
      double rad = std::sqrt(std::max(0.0, 1.0 - nz * nz));
      n.set(y, x, rad * std::cos(phi), rad * std::sin(phi), nz);
    }
  return n;
}

}  // namespace detail

// --- shading layer: free-component normal partials and light partials ------
inline gradcheck_result gradcheck_shading(uint64_t seed, int samples) {
  rng r(seed);
  const double h = 1e-5;
  gradcheck_result res{"shading", 0.0, samples};
  for (int t = 0; t < samples; ++t) {
    double nx = r.uniform(-1, 1), ny = r.uniform(-1, 1), nz = r.uniform(0.1, 1);
    const double norm = std::sqrt(nx * nx + ny * ny + nz * nz);
    nx /= norm;
    ny /= norm;
    nz /= norm;
    double L[9];
    for (auto& v : L) v = r.uniform(-1, 1);

    double dnx, dny, dnz;
    sh_normal_partials(L, nx, ny, nz, dnx, dny, dnz);
    const auto basis = sh_basis_t(nx, ny, nz);
    double gmax = std::max({std::abs(dnx), std::abs(dny), std::abs(dnz)});
    for (int k = 0; k < 9; ++k) gmax = std::max(gmax, std::abs(basis[k]));

    const double fdx = (sh_shade_pixel(L, nx + h, ny, nz) -
                        sh_shade_pixel(L, nx - h, ny, nz)) / (2 * h);
    const double fdy = (sh_shade_pixel(L, nx, ny + h, nz) -
                        sh_shade_pixel(L, nx, ny - h, nz)) / (2 * h);
    const double fdz = (sh_shade_pixel(L, nx, ny, nz + h) -
                        sh_shade_pixel(L, nx, ny, nz - h)) / (2 * h);
    res.max_rel_err = std::max(res.max_rel_err, detail::gc_rel(fdx, dnx, gmax));
    res.max_rel_err = std::max(res.max_rel_err, detail::gc_rel(fdy, dny, gmax));
    res.max_rel_err = std::max(res.max_rel_err, detail::gc_rel(fdz, dnz, gmax));
    const int j = r.uniform_int(0, 8);
    double lp[9], lm[9];
    for (int k = 0; k < 9; ++k) lp[k] = lm[k] = L[k];
    lp[j] += h;
    lm[j] -= h;
    const double fdl = (sh_shade_pixel(lp, nx, ny, nz) -
                        sh_shade_pixel(lm, nx, ny, nz)) / (2 * h);
    res.max_rel_err = std::max(res.max_rel_err, detail::gc_rel(fdl, basis[j], gmax));
  }
  return res;
}

// --- image formation -------------------------------------------------------
inline gradcheck_result gradcheck_formation(uint64_t seed, int samples) {
  rng r(seed);
  const double h = 1e-6;
  gradcheck_result res{"formation", 0.0, samples};
  for (int t = 0; t < samples; ++t) {
    auto a = detail::gc_random_field(r, 3, 3, 3, 0.0, 1.5);
    auto s = detail::gc_random_field(r, 3, 3, 3, -0.5, 1.5);
    auto up = detail::gc_random_field(r, 3, 3, 3, -1.0, 1.0);
    auto [da, ds] = form_image_backward(a, s, up);
    double gmax = 0.0;
    for (double v : da.data) gmax = std::max(gmax, std::abs(v));
    for (double v : ds.data) gmax = std::max(gmax, std::abs(v));
    const size_t i = size_t(r.uniform_int(0, int(a.data.size()) - 1));
    auto ap = a, am = a;
    ap.data[i] += h;
    am.data[i] -= h;
    double fd = (detail::gc_inner(form_image(ap, s), up) -
                 detail::gc_inner(form_image(am, s), up)) / (2 * h);
    res.max_rel_err = std::max(res.max_rel_err, detail::gc_rel(fd, da.data[i], gmax));
    auto sp = s, sm = s;
    sp.data[i] += h;
    sm.data[i] -= h;
    fd = (detail::gc_inner(form_image(a, sp), up) -
          detail::gc_inner(form_image(a, sm), up)) / (2 * h);
    res.max_rel_err = std::max(res.max_rel_err, detail::gc_rel(fd, ds.data[i], gmax));
  }
  return res;
}

// --- compositing ------------------------------------------------------------
inline gradcheck_result gradcheck_compositing(uint64_t seed, int samples) {
  rng r(seed);
  const double h = 1e-6;
  gradcheck_result res{"compositing", 0.0, samples};
  for (int t = 0; t < samples; ++t) {
    auto fg = detail::gc_random_field(r, 3, 3, 3, -0.5, 1.5);
    auto bg = detail::gc_random_field(r, 3, 3, 3, -0.5, 1.5);
    matte_mask m(3, 3);
    for (auto& a : m.alpha) a = r.uniform(0.05, 0.95);
    auto up = detail::gc_random_field(r, 3, 3, 3, -1.0, 1.0);
    auto g = composite_backward(fg, bg, m, up);
    double gmax = 0.0;
    for (double v : g.d_fg.data) gmax = std::max(gmax, std::abs(v));
    for (double v : g.d_matte.alpha) gmax = std::max(gmax, std::abs(v));

    const size_t i = size_t(r.uniform_int(0, int(fg.data.size()) - 1));
    auto fp = fg, fm = fg;
    fp.data[i] += h;
    fm.data[i] -= h;
    double fd = (detail::gc_inner(composite(fp, bg, m), up) -
                 detail::gc_inner(composite(fm, bg, m), up)) / (2 * h);
    res.max_rel_err = std::max(res.max_rel_err, detail::gc_rel(fd, g.d_fg.data[i], gmax));
    const size_t mi = size_t(r.uniform_int(0, int(m.alpha.size()) - 1));
    auto mp = m, mm = m;
    mp.alpha[mi] += h;
    mm.alpha[mi] -= h;
    fd = (detail::gc_inner(composite(fg, bg, mp), up) -
          detail::gc_inner(composite(fg, bg, mm), up)) / (2 * h);
    res.max_rel_err =
        std::max(res.max_rel_err, detail::gc_rel(fd, g.d_matte.alpha[mi], gmax));
  }
  return res;
}

// --- uv resampling ----------------------------------------------------------
inline gradcheck_result gradcheck_uv_resample(uint64_t seed, int samples) {
  rng r(seed);
  const double h = 1e-6;
  gradcheck_result res{"uv_resample", 0.0, samples};
  for (int t = 0; t < samples; ++t) {
    auto src = detail::gc_random_field(r, 5, 4, 2, 0.0, 1.0);
    pixel_field uv(3, 3, 2);
    for (auto& v : uv.data) v = r.uniform(0.08, 0.92);
    // Keep clear of the bilinear cell boundaries.
    for (int k = 0; k < 2; ++k)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
          const int extent = k == 0 ? src.width : src.height;
          double pos = uv.at(y, x, k) * (extent - 1);
          if (std::abs(pos - std::round(pos)) < 0.02)
            uv.at(y, x, k) += 0.05 / (extent - 1);
        }
    auto up = detail::gc_random_field(r, 3, 3, 2, -1.0, 1.0);
    auto g = uv_resample_backward(src, uv, up);
    double gmax = 0.0;
    for (double v : g.d_source.data) gmax = std::max(gmax, std::abs(v));
    for (double v : g.d_uv.data) gmax = std::max(gmax, std::abs(v));
    const size_t i = size_t(r.uniform_int(0, int(src.data.size()) - 1));
    auto sp = src, sm = src;
    sp.data[i] += h;
    sm.data[i] -= h;
    double fd = (detail::gc_inner(uv_resample(sp, uv), up) -
                 detail::gc_inner(uv_resample(sm, uv), up)) / (2 * h);
    res.max_rel_err =
        std::max(res.max_rel_err, detail::gc_rel(fd, g.d_source.data[i], gmax));
    const size_t ui = size_t(r.uniform_int(0, int(uv.data.size()) - 1));
    auto up2 = uv, um2 = uv;
    up2.data[ui] += h;
    um2.data[ui] -= h;
    fd = (detail::gc_inner(uv_resample(src, up2), up) -
          detail::gc_inner(uv_resample(src, um2), up)) / (2 * h);
    res.max_rel_err = std::max(res.max_rel_err, detail::gc_rel(fd, g.d_uv.data[ui], gmax));
  }
  return res;
}

// --- loss suite --------------------------------------------------------------
inline gradcheck_result gradcheck_losses(uint64_t seed, int samples) {
  rng r(seed);
  const double h = 1e-6;
  gradcheck_result res{"losses", 0.0, samples};
  for (int t = 0; t < samples; ++t) {
    const int which = t % 5;
    auto f = detail::gc_random_field(r, 5, 5, 3, 0.0, 1.0);
    auto g2 = detail::gc_random_field(r, 5, 5, 3, 0.0, 1.0);
    matte_mask m(5, 5, 1.0);
    for (auto& a : m.alpha) a = r.uniform() < 0.75 ? 1.0 : 0.0;
    if (m.count_inside() == 0) m.alpha[0] = 1.0;
    const size_t i = size_t(r.uniform_int(0, int(f.data.size()) - 1));
    auto fp = f, fm = f;
    fp.data[i] += h;
    fm.data[i] -= h;
    double an = 0.0, fd = 0.0, gmax = 0.0;
    if (which == 0) {
      auto l = l2_map_loss(f, g2, &m);
      an = l.grad.data[i];
      fd = (l2_map_loss(fp, g2, &m).value - l2_map_loss(fm, g2, &m).value) / (2 * h);
      for (double v : l.grad.data) gmax = std::max(gmax, std::abs(v));
    } else if (which == 1) {
      auto l = albedo_smoothness(f, &m, 1e-3);
      an = l.grad.data[i];
      fd = (albedo_smoothness(fp, &m, 1e-3).value -
            albedo_smoothness(fm, &m, 1e-3).value) / (2 * h);
      for (double v : l.grad.data) gmax = std::max(gmax, std::abs(v));
    } else if (which == 2) {
      auto l = shading_smoothness(f, &m);
      an = l.grad.data[i];
      fd = (shading_smoothness(fp, &m).value - shading_smoothness(fm, &m).value) /
           (2 * h);
      for (double v : l.grad.data) gmax = std::max(gmax, std::abs(v));
    } else if (which == 3) {
      auto l = bws_penalty({f}, {m}, 0.75);
      an = l.grads[0].data[i];
      fd = (bws_penalty({fp}, {m}, 0.75).value - bws_penalty({fm}, {m}, 0.75).value) /
           (2 * h);
      for (double v : l.grads[0].data) gmax = std::max(gmax, std::abs(v));
    } else {
      // ebgan: perturb the fake reconstruction; f = recon_fake, g2 = fake.
      auto real = detail::gc_random_field(r, 5, 5, 3, 0.0, 1.0);
      auto rr = detail::gc_random_field(r, 5, 5, 3, 0.0, 1.0);
      const double margin = 0.5;  // hinge active for in-range inputs
      auto l = ebgan_losses(rr, real, f, g2, margin);
      if (std::abs(l.d_fake - margin) < 1e-3) continue;  // kink clearance
      an = l.d_dloss_recon_fake.data[i];
      fd = (ebgan_losses(rr, real, fp, g2, margin).d_loss -
            ebgan_losses(rr, real, fm, g2, margin).d_loss) / (2 * h);
      for (double v : l.d_dloss_recon_fake.data) gmax = std::max(gmax, std::abs(v));
      double an_g = l.d_gloss_fake.data[i];
      auto gp = g2, gm = g2;
      gp.data[i] += h;
      gm.data[i] -= h;
      double fd_g = (ebgan_losses(rr, real, f, gp, margin).g_loss -
                     ebgan_losses(rr, real, f, gm, margin).g_loss) / (2 * h);
      res.max_rel_err = std::max(res.max_rel_err, detail::gc_rel(fd_g, an_g, gmax));
    }
    res.max_rel_err = std::max(res.max_rel_err, detail::gc_rel(fd, an, gmax));
  }
  return res;
}

// --- solver objective ---------------------------------------------------------
inline gradcheck_result gradcheck_solver(uint64_t seed, int samples) {
  auto scene = generate_scene(16, seed);
  solver_config cfg;
  auto st = init_state(scene.image, scene.gt_normals, scene.gt_mask, cfg);
  rng r(seed ^ 0xABCDu);
  for (auto& v : st.albedo.data) v = std::clamp(v + r.uniform(-0.05, 0.05), 0.0, 4.0);
  for (auto& v : st.raw_normals) v += r.uniform(-0.05, 0.05);
  for (auto& v : st.light.v) v += r.uniform(-0.05, 0.05);

  auto ev = eval_objective(st);
  double gmax = 0.0;
  for (double g : ev.d_albedo.data) gmax = std::max(gmax, std::abs(g));
  for (double g : ev.d_raw_normals) gmax = std::max(gmax, std::abs(g));
  for (double g : ev.d_light) gmax = std::max(gmax, std::abs(g));

  const double h = 1e-6;
  gradcheck_result res{"solver_objective", 0.0, samples};
  for (int t = 0; t < samples; ++t) {
    const int which = r.uniform_int(0, 2);
    auto st2 = st;
    double* slot;
    double an;
    if (which == 0) {
      size_t i = size_t(r.uniform_int(0, int(st.albedo.data.size()) - 1));
      slot = &st2.albedo.data[i];
      an = ev.d_albedo.data[i];
    } else if (which == 1) {
      size_t i = size_t(r.uniform_int(0, int(st.raw_normals.size()) - 1));
      slot = &st2.raw_normals[i];
      an = ev.d_raw_normals[i];
    } else {
      size_t i = size_t(r.uniform_int(0, 26));
      slot = &st2.light.v[i];
      an = ev.d_light[i];
    }
    const double keep = *slot;
    *slot = keep + h;
    const double fp = eval_objective(st2).report.total;
    *slot = keep - h;
    const double fm = eval_objective(st2).report.total;
    const double fd = (fp - fm) / (2 * h);
    res.max_rel_err = std::max(res.max_rel_err, detail::gc_rel(fd, an, gmax));
  }
  return res;
}

// --- full toy network ----------------------------------------------------------

// Hand-built micro scene (generate_scene needs size >= 16; the gradcheck runs
// the network at 8x8).
inline scene_sample gc_micro_scene(int size, uint64_t seed) {
  rng r(seed);
  scene_sample s;
  s.seed = seed;
  s.image = detail::gc_random_field(r, size, size, 3, 0.05, 0.95);
  s.gt_albedo = detail::gc_random_field(r, size, size, 3, 0.2, 0.9);
  s.gt_normals = detail::gc_random_normals(r, size, size);
  for (int ch = 0; ch < 3; ++ch) {
    s.gt_light.channel(ch)[0] = r.uniform(0.8, 1.0);
    for (int k = 1; k < 9; ++k) s.gt_light.channel(ch)[k] = r.normal(0.0, 0.1);
  }
  s.gt_mask = matte_mask(size, size, 0.0);
  for (auto& a : s.gt_mask.alpha) a = r.uniform() < 0.8 ? 1.0 : 0.0;
  if (s.gt_mask.count_inside() < 4) s.gt_mask.alpha[0] = 1.0;
  s.gt_uv = detail::gc_random_field(r, size, size, 2, 0.0, 1.0);
  s.background = detail::gc_random_field(r, size, size, 3, 0.1, 0.9);
  return s;
}

namespace detail {

struct gc_hash {
  uint64_t h = 1469598103934665603ull;
  void bit(bool b) {
    h ^= b ? 0x9Eu : 0x3Bu;
    h *= 1099511628211ull;
  }
  void bytes(const std::vector<uint8_t>& v) {
    for (uint8_t b : v) {
      h ^= b;
      h *= 1099511628211ull;
    }
  }
  template <class T>
  void signs(const tensor3<T>& t) {
    for (const T v : t.v) bit(v > T(0));
  }
};

// Activation pattern of one evaluation: ReLU masks, pool switches, the
// normalization guards and the hinge state. A finite-difference interval is
// only meaningful while this signature is constant.
template <class T>
uint64_t toy_signature(const toy_model<T>& m, const scene_sample& target,
                       const loss_weights& w) {
  toy_cache<T> cache = toy_forward(m, to_tensor<T>(target.image));
  gc_hash hash;
  hash.signs(cache.enc.p1);
  hash.signs(cache.enc.p2);
  hash.signs(cache.enc.p3);
  hash.bytes(cache.enc.sw.s1);
  hash.bytes(cache.enc.sw.s2);
  hash.bytes(cache.enc.sw.s3);
  auto stack = [&](const dec_cache<T>& d) {
    hash.signs(d.c1);
    hash.signs(d.c2);
  };
  if (!m.cfg.baseline) {
    stack(cache.d_bg);
    stack(cache.d_mask);
    if (m.cfg.implicit_mode) {
      stack(cache.d_uv);
      stack(cache.d_ai);
      stack(cache.d_ni);
    } else {
      stack(cache.d_albedo);
      stack(cache.d_normals);
      if (m.cfg.implicit_aux) {
        stack(cache.d_uv);
        stack(cache.d_ni);
      }
    }
    for (int y = 0; y < m.cfg.size; ++y)
      for (int x = 0; x < m.cfg.size; ++x) {
        const double nx = double(cache.normals_raw.at(0, y, x));
        const double ny = double(cache.normals_raw.at(1, y, x));
        const double nz = double(cache.normals_raw.at(2, y, x));
        hash.bit(std::sqrt(nx * nx + ny * ny + nz * nz) > 1e-8);
      }
  }
  if (w.w_adv > 0.0) {
    for (const tensor3<T>* input : {&cache.enc.x, &cache.io}) {
      auto dc = disc_forward(m, *input);
      hash.signs(dc.p1);
      hash.signs(dc.p2);
      hash.signs(dc.p3);
      hash.signs(dc.d1);
      hash.signs(dc.d2);
      hash.bytes(dc.s1);
      hash.bytes(dc.s2);
      hash.bytes(dc.s3);
      hash.bit(dc.energy < w.adv_margin);
    }
  }
  return hash.h;
}

}  // namespace detail

// Objective value only (for difference quotients).
template <class T>
double toy_objective(const toy_model<T>& m, const scene_sample& target,
                     const loss_weights& w) {
  toy_cache<T> cache = toy_forward(m, to_tensor<T>(target.image));
  auto sl = toy_sample_losses(m, cache, target, w);
  if (!m.cfg.baseline) {
    auto bws = bws_penalty({sl.shading_field}, {target.gt_mask}, w.bws_target);
    sl.terms.push_back({"bws", bws.value, w.w_bws, bws.value});
  }
  if (w.w_adv > 0.0) {
    auto dc = disc_forward(m, cache.io);
    sl.terms.push_back({"adv", dc.energy, w.w_adv, dc.energy});
  }
  return total_objective(sl.terms).total;
}

template <class T>
double toy_disc_objective(const toy_model<T>& m, const scene_sample& target,
                          const loss_weights& w) {
  toy_cache<T> cache = toy_forward(m, to_tensor<T>(target.image));
  auto dr = disc_forward(m, to_tensor<T>(target.image));
  auto dc = disc_forward(m, cache.io);
  auto eb = ebgan_losses(to_field(dr.recon), target.image, to_field(dc.recon),
                         to_field(cache.io), w.adv_margin);
  return eb.d_loss;
}

// Clearance from all kinks at the evaluation point: ReLU preactivations,
// pooling gaps, normalization guards and the hinge.
template <class T>
bool toy_point_has_margin(const toy_model<T>& m, const scene_sample& target,
                          const loss_weights& w, double tau) {
  toy_cache<T> cache = toy_forward(m, to_tensor<T>(target.image));
  auto check_relu = [&](const tensor3<T>& pre) {
    for (const T v : pre.v)
      if (std::abs(double(v)) < tau) return false;
    return true;
  };
  auto check_pool = [&](const tensor3<T>& x) {
    for (int ci = 0; ci < x.c; ++ci)
      for (int y = 0; y + 1 < x.h; y += 2)
        for (int xx = 0; xx + 1 < x.w; xx += 2) {
          T top = std::max(std::max(x.at(ci, y, xx), x.at(ci, y, xx + 1)),
                           std::max(x.at(ci, y + 1, xx), x.at(ci, y + 1, xx + 1)));
          int near = 0;
          for (int k = 0; k < 4; ++k)
            if (double(top - x.at(ci, y + k / 2, xx + k % 2)) < tau) ++near;
          if (near > 1) return false;  // ambiguous argmax
        }
    return true;
  };
  if (!check_relu(cache.enc.p1) || !check_relu(cache.enc.p2) ||
      !check_relu(cache.enc.p3))
    return false;
  if (!check_pool(cache.enc.c1) || !check_pool(cache.enc.c2) ||
      !check_pool(cache.enc.c3))
    return false;
  if (!m.cfg.baseline) {
    auto check_dec = [&](const dec_cache<T>& d) {
      return check_relu(d.c1) && check_relu(d.c2);
    };
    if (!check_dec(cache.d_bg) || !check_dec(cache.d_mask)) return false;
    if (m.cfg.implicit_mode) {
      if (!check_dec(cache.d_uv) || !check_dec(cache.d_ai) ||
          !check_dec(cache.d_ni))
        return false;
    } else {
      if (!check_dec(cache.d_albedo) || !check_dec(cache.d_normals)) return false;
      if (m.cfg.implicit_aux &&
          (!check_dec(cache.d_uv) || !check_dec(cache.d_ni)))
        return false;
    }
    for (int y = 0; y < m.cfg.size; ++y)
      for (int x = 0; x < m.cfg.size; ++x) {
        const double nx = double(cache.normals_raw.at(0, y, x));
        const double ny = double(cache.normals_raw.at(1, y, x));
        const double nz = double(cache.normals_raw.at(2, y, x));
        if (std::sqrt(nx * nx + ny * ny + nz * nz) < 10 * tau) return false;
      }
  }
  if (w.w_adv > 0.0) {
    auto dr = disc_forward(m, to_tensor<T>(target.image));
    auto dc = disc_forward(m, cache.io);
    if (!check_relu(dr.p1) || !check_relu(dr.p2) || !check_relu(dr.p3) ||
        !check_relu(dr.d1) || !check_relu(dr.d2))
      return false;
    if (!check_relu(dc.p1) || !check_relu(dc.p2) || !check_relu(dc.p3) ||
        !check_relu(dc.d1) || !check_relu(dc.d2))
      return false;
    if (!check_pool(dr.c1) || !check_pool(dr.c2) || !check_pool(dr.c3)) return false;
    if (!check_pool(dc.c1) || !check_pool(dc.c2) || !check_pool(dc.c3)) return false;
    if (std::abs(dc.energy - w.adv_margin) < 10 * tau) return false;
  }
  return true;
}

// Checks every generator parameter of an 8x8 micro configuration against
// central differences (and the discriminator parameters against the margin
// loss). `sample_limit` caps the number of coordinates per parameter tensor;
// 0 checks all of them.
template <class T>
gradcheck_result gradcheck_toynet(uint64_t seed, int sample_limit,
                                  bool implicit_mode = false) {
  toy_config cfg;
  cfg.size = 8;
  cfg.filters = {4, 6, 6};
  cfg.z_shared = 10;
  cfg.z_factor = 5;
  cfg.disc_bottleneck = 6;
  cfg.implicit_aux = implicit_mode;
  cfg.implicit_mode = implicit_mode;
  loss_weights w;  // all terms active
  w.w_adv = 0.02;
  w.adv_margin = 0.5;
  cfg.weights = w;

  const bool is_double = sizeof(T) == 8;
  const double tau = 1e-4;
  const double h_rel = is_double ? 1e-6 : 6e-3;
  // In float, forward roundoff caps the achievable difference-quotient
  // accuracy at a few 1e-5 absolute; near-zero gradient entries are held to
  // a gradient-scale absolute tolerance instead of a meaningless relative
  // one.
  const double floor_scale = is_double ? 1e-2 : 1.0;

  toy_model<T> m;
  scene_sample scene;
  uint64_t s = seed;
  for (int attempt = 0; attempt < 64; ++attempt, ++s) {
    m = toy_model<T>::make(cfg, s);
    scene = gc_micro_scene(cfg.size, s ^ 0x9E37u);
    if (toy_point_has_margin(m, scene, w, tau)) break;
    if (attempt == 63)
      throw numeric_error("gradcheck_toynet: no kink-free evaluation point found");
  }

  auto grads = toy_backward(m, scene, w);
  gradcheck_result res{is_double ? "toynet_fp64" : "toynet_fp32", 0.0, 0};
  const uint64_t base_sig = detail::toy_signature(m, scene, w);

  rng pick(seed ^ 0x51Cu);
  auto check_params = [&](std::vector<param_ref<T>> model_refs,
                          std::vector<param_ref<T>> grad_refs, auto objective) {
    double gmax = 0.0;
    for (auto& g : grad_refs)
      for (const T v : *g.data) gmax = std::max(gmax, std::abs(double(v)));
    for (size_t pi = 0; pi < model_refs.size(); ++pi) {
      std::vector<T>& data = *model_refs[pi].data;
      const std::vector<T>& gr = *grad_refs[pi].data;
      const int n = int(data.size());
      const int count = sample_limit > 0 ? std::min(sample_limit, n) : n;
      for (int t = 0; t < count; ++t) {
        const int i = sample_limit > 0 ? pick.uniform_int(0, n - 1) : t;
        const double keep = double(data[i]);
        const double hh = h_rel * std::max(1.0, std::abs(keep));
        data[size_t(i)] = T(keep + hh);
        const double fp = objective();
        const uint64_t sig_p = detail::toy_signature(m, scene, w);
        data[size_t(i)] = T(keep - hh);
        const double fm = objective();
        const uint64_t sig_m = detail::toy_signature(m, scene, w);
        data[size_t(i)] = T(keep);
        // The quotient is only a derivative while the activation pattern is
        // stable across the interval.
        if (sig_p != base_sig || sig_m != base_sig) continue;
        const double fd = (fp - fm) / (2 * hh);
        const double err = std::abs(fd - double(gr[i])) /
                           std::max({std::abs(fd), std::abs(double(gr[i])),
                                     floor_scale * gmax, 1e-12});
        res.max_rel_err = std::max(res.max_rel_err, err);
        ++res.samples;
      }
    }
  };

  check_params(m.generator_params(), grads.generator.generator_params(),
               [&] { return toy_objective(m, scene, w); });
  check_params(m.discriminator_params(), grads.discriminator.discriminator_params(),
               [&] { return toy_disc_objective(m, scene, w); });
  return res;
}

inline std::vector<gradcheck_result> run_gradient_suite(uint64_t seed,
                                                        int samples_per_layer,
                                                        bool toy_fp64,
                                                        bool toy_fp32) {
  std::vector<gradcheck_result> out;
  out.push_back(gradcheck_shading(seed + 1, samples_per_layer));
  out.push_back(gradcheck_formation(seed + 2, samples_per_layer));
  out.push_back(gradcheck_compositing(seed + 3, samples_per_layer));
  out.push_back(gradcheck_uv_resample(seed + 4, samples_per_layer));
  out.push_back(gradcheck_losses(seed + 5, samples_per_layer));
  out.push_back(gradcheck_solver(seed + 6, std::min(samples_per_layer, 300)));
  if (toy_fp64) out.push_back(gradcheck_toynet<double>(seed + 7, 0));
  if (toy_fp32) out.push_back(gradcheck_toynet<float>(seed + 8, 0));
  return out;
}

}  // namespace nfed
