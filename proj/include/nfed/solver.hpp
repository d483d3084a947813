// Single-image intrinsic decomposition: jointly optimize per-pixel albedo,
// normals and SH light against the training objective, given a prior normal
// map and mask. Normals are optimized as unconstrained 3-vectors and
// renormalized with the exact Jacobian on every evaluation.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nfed/adam.hpp"
#include "nfed/fields.hpp"
#include "nfed/formation.hpp"
#include "nfed/image_io.hpp"
#include "nfed/losses.hpp"
#include "nfed/sh.hpp"

namespace nfed {

struct solver_config {
  int max_iters = 2000;
  double lr_albedo = 5e-3;
  double lr_normals = 1e-2;
  double lr_light = 1e-2;
  double tol = 1e-7;           // relative total-loss change over a 50-step window
  double eps_shading = 1e-4;   // division floor for albedo init and relighting
  double albedo_max = 4.0;
  // Albedo-invariant light refit (shading-ratio fit against the current
  // effective normals) interleaved with the Adam steps; 0 disables. Useful
  // when the normals themselves are being refined; with exact priors the
  // initial estimate already sits at the optimum.
  int light_refit_every = 250;
  ratio_light_options light_fit;
  std::string bws_mode = "rescale";  // "penalty" | "rescale"
  loss_weights weights;

  solver_config() {
    weights.w_light = 0.01;
    weights.w_albedo_smooth = 0.05;
    weights.charbonnier_delta = 1e-4;
  }

  void validate() const {
    if (max_iters < 0) throw validation_error("solver: max_iters must be >= 0");
    if (!(eps_shading > 0)) throw validation_error("solver: eps_shading must be > 0");
    if (!(albedo_max > 0)) throw validation_error("solver: albedo_max must be > 0");
    if (light_refit_every < 0)
      throw validation_error("solver: light_refit_every must be >= 0");
    if (bws_mode != "penalty" && bws_mode != "rescale")
      throw validation_error("solver: bws_mode must be penalty or rescale");
    weights.validate();
  }
};

struct decomp_state {
  pixel_field image;
  matte_mask mask;
  normal_field prior_normals;
  sh_coeffs prior_light;

  pixel_field albedo;               // free variable, clamped to [0, albedo_max]
  std::vector<double> raw_normals;  // free 3-vectors, one per pixel
  sh_coeffs light;                  // free variable

  adam_state opt_albedo, opt_normals, opt_light;
  int step = 0;
  solver_config cfg;
};

struct decomp_result {
  pixel_field albedo;
  pixel_field shading;
  normal_field normals;
  sh_coeffs light;
  std::vector<loss_report> trace;
  bool converged = false;
};

inline decomp_state init_state(const pixel_field& image,
                               const normal_field& prior_normals,
                               const matte_mask& mask, const solver_config& cfg) {
  cfg.validate();
  if (image.channels != 3)
    throw validation_error("init_state: image must have 3 channels");
  if (image.width != prior_normals.width || image.height != prior_normals.height)
    throw validation_error("init_state: image/prior shape mismatch");
  require_mask_shape(image, mask, "init_state");
  if (mask.count_inside() == 0) throw validation_error("init_state: empty mask");

  decomp_state st;
  st.image = image;
  st.mask = mask;
  st.prior_normals = prior_normals;
  st.cfg = cfg;
  st.raw_normals = prior_normals.vecs;
  // Albedo-invariant ratio fit rather than the constant-albedo least squares.
  // The plain fit is doubly poisoned here: scene normals cover only a cap of
  // the sphere (coefficients explode along the cap's near-null directions),
  // and albedo structure correlated with geometry biases the in-cap fit. The
  // ratio fit cancels the albedo within flat regions and pins the scale to
  // the white-shading constant. Falls back to the ridge least squares when
  // the scene offers too few same-albedo pixel pairs.
  ratio_light_options fit = cfg.light_fit;
  fit.target_mean = cfg.weights.bws_target;
  try {
    st.prior_light = estimate_light_ratio(image, prior_normals, mask, fit);
  } catch (const numeric_error&) {
    st.prior_light = estimate_light_ridge(image, prior_normals, mask, 1e-3);
  }
  st.light = st.prior_light;

  // Albedo init: divide out the prior shading, floored at eps.
  auto shading = shade_forward(prior_normals, st.light);
  st.albedo = pixel_field(image.width, image.height, 3);
  for (size_t i = 0; i < st.albedo.data.size(); ++i) {
    const double s = std::max(shading.data[i], cfg.eps_shading);
    st.albedo.data[i] = std::clamp(image.data[i] / s, 0.0, cfg.albedo_max);
  }

  st.opt_albedo = adam_state(st.albedo.data.size());
  st.opt_normals = adam_state(st.raw_normals.size());
  st.opt_light = adam_state(27);
  return st;
}

// Effective (unit) normals of the current iterate.
inline normal_field effective_normals(const decomp_state& st) {
  normal_field n(st.image.width, st.image.height);
  for (int i = 0; i < st.image.pixel_count(); ++i) {
    const auto r = normalize_with_grad(st.raw_normals[3 * i], st.raw_normals[3 * i + 1],
                                       st.raw_normals[3 * i + 2]);
    n.vecs[3 * i] = r.nx;
    n.vecs[3 * i + 1] = r.ny;
    n.vecs[3 * i + 2] = r.nz;
  }
  return n;
}

struct objective_eval {
  loss_report report;
  pixel_field shading;
  normal_field normals;
  pixel_field d_albedo;
  std::vector<double> d_raw_normals;
  std::array<double, 27> d_light{};
};

// Full objective with gradients through normalization, shading, formation and
// all loss terms. Pure; reused by solve() and the finite-difference checks.
inline objective_eval eval_objective(const decomp_state& st) {
  const loss_weights& w = st.cfg.weights;
  objective_eval ev;
  ev.normals = effective_normals(st);
  ev.shading = shade_forward(ev.normals, st.light);
  auto rendered = form_image(st.albedo, ev.shading);

  auto recon = l2_map_loss(rendered, st.image, &st.mask);
  auto nprior = l2_map_loss(ev.normals.as_field(), st.prior_normals.as_field(),
                            &st.mask);
  auto lprior = light_loss(st.light, st.prior_light);
  auto asmooth = albedo_smoothness(st.albedo, &st.mask, w.charbonnier_delta);
  auto ssmooth = shading_smoothness(ev.shading, &st.mask);
  auto bws = bws_penalty({ev.shading}, {st.mask}, w.bws_target);

  ev.report = total_objective({{"recon", recon.value, w.w_recon, recon.raw_sum},
                               {"normal_prior", nprior.value, w.w_normal, nprior.raw_sum},
                               {"light_prior", lprior.value, w.w_light, lprior.value},
                               {"albedo_smooth", asmooth.value, w.w_albedo_smooth,
                                asmooth.raw_sum},
                               {"shading_smooth", ssmooth.value, w.w_shading_smooth,
                                ssmooth.raw_sum},
                               {"bws", bws.value, w.w_bws, bws.value}});

  // d/d albedo: recon through the formation product, plus smoothness.
  auto [d_alb_recon, d_sh_recon] = form_image_backward(st.albedo, ev.shading,
                                                       recon.grad);
  ev.d_albedo = pixel_field(st.image.width, st.image.height, 3);
  for (size_t i = 0; i < ev.d_albedo.data.size(); ++i)
    ev.d_albedo.data[i] = w.w_recon * d_alb_recon.data[i] +
                          w.w_albedo_smooth * asmooth.grad.data[i];

  // d/d shading accumulated from recon, smoothness and BWS, then pulled back
  // through the shading layer.
  pixel_field d_shading(st.image.width, st.image.height, 3);
  for (size_t i = 0; i < d_shading.data.size(); ++i)
    d_shading.data[i] = w.w_recon * d_sh_recon.data[i] +
                        w.w_shading_smooth * ssmooth.grad.data[i] +
                        w.w_bws * bws.grads[0].data[i];
  auto shade_g = shade_backward(ev.normals, st.light, d_shading);

  for (int j = 0; j < 27; ++j)
    ev.d_light[j] = shade_g.d_light[j] + w.w_light * lprior.grad[j];

  // d/d raw normals: (shading pullback + normal prior) through the
  // normalization Jacobian.
  ev.d_raw_normals.assign(st.raw_normals.size(), 0.0);
  for (int i = 0; i < st.image.pixel_count(); ++i) {
    const auto r = normalize_with_grad(st.raw_normals[3 * i], st.raw_normals[3 * i + 1],
                                       st.raw_normals[3 * i + 2]);
    double dn[3] = {
        shade_g.d_normals.data[3 * i] + w.w_normal * nprior.grad.data[3 * i],
        shade_g.d_normals.data[3 * i + 1] + w.w_normal * nprior.grad.data[3 * i + 1],
        shade_g.d_normals.data[3 * i + 2] + w.w_normal * nprior.grad.data[3 * i + 2]};
    for (int col = 0; col < 3; ++col) {
      double acc = 0.0;
      for (int row = 0; row < 3; ++row) acc += r.jac[row][col] * dn[row];
      ev.d_raw_normals[3 * i + col] = acc;
    }
  }
  return ev;
}

// Rescale shading channel means to the BWS constant by moving scale between
// light and albedo; the albedo (*) shading product is untouched.
inline void bws_exact_rescale(pixel_field& albedo, sh_coeffs& light,
                              pixel_field& shading, const normal_field& normals,
                              const matte_mask& mask, double c) {
  std::array<double, 3> mean{};
  int64_t count = 0;
  for (int y = 0; y < shading.height; ++y)
    for (int x = 0; x < shading.width; ++x) {
      if (!mask.inside(y, x)) continue;
      ++count;
      for (int ch = 0; ch < 3; ++ch) mean[ch] += shading.at(y, x, ch);
    }
  if (count == 0) throw validation_error("bws_exact_rescale: empty mask");
  for (int ch = 0; ch < 3; ++ch) {
    mean[ch] /= double(count);
    if (std::abs(mean[ch]) < 1e-12)
      throw numeric_error("bws_exact_rescale: zero mean shading in channel " +
                          std::to_string(ch));
    const double f = c / mean[ch];
    for (int j = 0; j < 9; ++j) light.channel(ch)[j] *= f;
    for (int y = 0; y < shading.height; ++y)
      for (int x = 0; x < shading.width; ++x) {
        shading.at(y, x, ch) *= f;
        albedo.at(y, x, ch) /= f;
      }
  }
  // Keep shading bit-consistent with shade_forward(normals, light).
  shading = shade_forward(normals, light);
}

inline decomp_result solve(const pixel_field& image, const normal_field& prior_normals,
                           const matte_mask& mask, const solver_config& cfg) {
  decomp_state st = init_state(image, prior_normals, mask, cfg);

  auto ev = eval_objective(st);
  decomp_result res;
  res.trace.push_back(ev.report);

  struct snapshot {
    pixel_field albedo;
    std::vector<double> raw;
    sh_coeffs light;
    double total;
  };
  snapshot best{st.albedo, st.raw_normals, st.light, ev.report.total};

  const int window = 50;
  std::vector<double> history{ev.report.total};
  for (int it = 1; it <= cfg.max_iters; ++it) {
    st.opt_albedo.step(st.albedo.data, ev.d_albedo.data, cfg.lr_albedo);
    st.opt_normals.step(st.raw_normals, ev.d_raw_normals, cfg.lr_normals);
    st.opt_light.step(st.light.v, ev.d_light, cfg.lr_light);
    for (auto& a : st.albedo.data) a = std::clamp(a, 0.0, cfg.albedo_max);
    st.step = it;

    // Re-sync the light with the current normal refinement. The ratio fit
    // does not depend on the albedo iterate, so this is a small correction,
    // not a jump.
    if (cfg.light_refit_every > 0 && it % cfg.light_refit_every == 0) {
      ratio_light_options fit = cfg.light_fit;
      fit.target_mean = cfg.weights.bws_target;
      try {
        st.light = estimate_light_ratio(st.image, effective_normals(st), st.mask,
                                        fit);
        st.opt_light = adam_state(27);
      } catch (const numeric_error&) {
        // Too few usable pairs: keep the gradient path.
      }
    }

    try {
      ev = eval_objective(st);
    } catch (const numeric_error& e) {
      throw numeric_error("solve: iteration " + std::to_string(it) + ": " + e.what());
    }
    res.trace.push_back(ev.report);
    history.push_back(ev.report.total);
    if (ev.report.total < best.total)
      best = {st.albedo, st.raw_normals, st.light, ev.report.total};

    if (it >= window) {
      const double prev = history[it - window];
      const double rel = std::abs(prev - ev.report.total) / std::max(std::abs(prev), 1e-12);
      if (rel < cfg.tol) {
        res.converged = true;
        break;
      }
    }
  }

  // Return the best-loss iterate; the trace ends with the returned state.
  if (best.total < res.trace.back().total) {
    st.albedo = best.albedo;
    st.raw_normals = best.raw;
    st.light = best.light;
    ev = eval_objective(st);
    res.trace.push_back(ev.report);
  }

  res.albedo = st.albedo;
  res.normals = effective_normals(st);
  res.light = st.light;
  res.shading = shade_forward(res.normals, res.light);
  if (cfg.bws_mode == "rescale")
    bws_exact_rescale(res.albedo, res.light, res.shading, res.normals, mask,
                      cfg.weights.bws_target);
  return res;
}

// DecompResult directory layout: albedo.pfm, shading.pfm, normals.pfm,
// light.json, trace.json.
inline void save_decomp(const decomp_result& res, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_float_map(res.albedo, dir + "/albedo.pfm");
  save_float_map(res.shading, dir + "/shading.pfm");
  save_float_map(res.normals, dir + "/normals.pfm");
  std::ofstream lf(dir + "/light.json");
  if (!lf) throw io_error("save_decomp: cannot write light.json");
  lf << sh_to_json(res.light).dump(2) << "\n";
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& rep : res.trace) trace.push_back(report_to_json(rep));
  std::ofstream tf(dir + "/trace.json");
  if (!tf) throw io_error("save_decomp: cannot write trace.json");
  tf << nlohmann::json{{"iterations", res.trace.size()},
                       {"converged", res.converged},
                       {"trace", trace}}
            .dump() << "\n";
}

inline decomp_result load_decomp(const std::string& dir) {
  decomp_result res;
  res.albedo = load_float_map(dir + "/albedo.pfm");
  res.shading = load_float_map(dir + "/shading.pfm");
  res.normals = load_normal_map(dir + "/normals.pfm");
  std::ifstream lf(dir + "/light.json");
  if (!lf) throw io_error("load_decomp: cannot read light.json in " + dir);
  nlohmann::json j;
  lf >> j;
  res.light = sh_from_json(j);
  return res;
}

}  // namespace nfed
