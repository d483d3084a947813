// Training objectives over fields, light coefficients and latent codes, each
// returning value plus analytic gradient. Map losses are mean-normalized per
// masked pixel so weights are resolution-independent; raw sums are reported
// alongside.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nfed/fields.hpp"
#include "nfed/resample.hpp"
#include "nfed/sh.hpp"

namespace nfed {

struct loss_weights {
  double w_recon = 1.0;
  double w_adv = 0.01;
  double w_normal = 0.5;
  double w_light = 0.1;
  double w_albedo_smooth = 0.02;
  double w_shading_smooth = 0.02;
  double w_bws = 1.0;
  double w_mask = 0.5;
  double w_uv = 0.5;
  double w_ni = 0.5;
  double bws_target = 0.75;
  double charbonnier_delta = 1e-3;
  double adv_margin = 0.1;  // on mean-per-pixel MSE scale

  void validate() const {
    const double ws[] = {w_recon, w_adv, w_normal, w_light, w_albedo_smooth,
                         w_shading_smooth, w_bws, w_mask, w_uv, w_ni};
    for (double w : ws)
      if (!(w >= 0.0) || !std::isfinite(w))
        throw validation_error("loss_weights: weights must be nonnegative finite");
    if (!(charbonnier_delta > 0.0))
      throw validation_error("loss_weights: charbonnier_delta must be > 0");
    if (!(adv_margin > 0.0))
      throw validation_error("loss_weights: adv_margin must be > 0");
    if (!std::isfinite(bws_target))
      throw validation_error("loss_weights: bws_target must be finite");
  }
};

inline nlohmann::json weights_to_json(const loss_weights& w) {
  return nlohmann::json{{"w_recon", w.w_recon},
                        {"w_adv", w.w_adv},
                        {"w_normal", w.w_normal},
                        {"w_light", w.w_light},
                        {"w_albedo_smooth", w.w_albedo_smooth},
                        {"w_shading_smooth", w.w_shading_smooth},
                        {"w_bws", w.w_bws},
                        {"w_mask", w.w_mask},
                        {"w_uv", w.w_uv},
                        {"w_ni", w.w_ni},
                        {"bws_target", w.bws_target},
                        {"charbonnier_delta", w.charbonnier_delta},
                        {"adv_margin", w.adv_margin}};
}

inline loss_weights weights_from_json(const nlohmann::json& j) {
  loss_weights w;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    double v = it.value().get<double>();
    if (k == "w_recon") w.w_recon = v;
    else if (k == "w_adv") w.w_adv = v;
    else if (k == "w_normal") w.w_normal = v;
    else if (k == "w_light") w.w_light = v;
    else if (k == "w_albedo_smooth") w.w_albedo_smooth = v;
    else if (k == "w_shading_smooth") w.w_shading_smooth = v;
    else if (k == "w_bws") w.w_bws = v;
    else if (k == "w_mask") w.w_mask = v;
    else if (k == "w_uv") w.w_uv = v;
    else if (k == "w_ni") w.w_ni = v;
    else if (k == "bws_target") w.bws_target = v;
    else if (k == "charbonnier_delta") w.charbonnier_delta = v;
    else if (k == "adv_margin") w.adv_margin = v;
    else throw validation_error("loss_weights: unknown key \"" + k + "\"");
  }
  w.validate();
  return w;
}

struct map_loss {
  double value = 0.0;    // mean-normalized
  double raw_sum = 0.0;  // plain sum, as the equations are written
  pixel_field grad;      // d value / d pred
};

namespace detail {

inline int masked_count(const matte_mask* mask, int w, int h) {
  if (!mask) return w * h;
  int n = mask->count_inside();
  if (n == 0) throw validation_error("loss: empty mask");
  return n;
}

}  // namespace detail

// Squared-L2 map loss: sum over masked pixels of |pred - target|^2 divided by
// the masked pixel count. Covers image, normal-map, mask, uv and implicit
// normal reconstruction objectives.
inline map_loss l2_map_loss(const pixel_field& pred, const pixel_field& target,
                            const matte_mask* mask = nullptr) {
  require_same_shape(pred, target, "l2_map_loss");
  if (mask) require_mask_shape(pred, *mask, "l2_map_loss");
  const int count = detail::masked_count(mask, pred.width, pred.height);
  map_loss out;
  out.grad = pixel_field(pred.width, pred.height, pred.channels);
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      if (mask && !mask->inside(y, x)) continue;
      for (int c = 0; c < pred.channels; ++c) {
        const double d = pred.at(y, x, c) - target.at(y, x, c);
        out.raw_sum += d * d;
        out.grad.at(y, x, c) = 2.0 * d / count;
      }
    }
  out.value = out.raw_sum / count;
  return out;
}

inline map_loss l2_map_loss(const normal_field& pred, const normal_field& target,
                            const matte_mask* mask = nullptr) {
  return l2_map_loss(pred.as_field(), target.as_field(), mask);
}

struct light_loss_result {
  double value = 0.0;
  std::array<double, 27> grad{};
};

// Squared L2 over the 27 lighting coefficients.
inline light_loss_result light_loss(const sh_coeffs& pred, const sh_coeffs& target) {
  light_loss_result out;
  for (size_t i = 0; i < 27; ++i) {
    const double d = pred[i] - target[i];
    out.value += d * d;
    out.grad[i] = 2.0 * d;
  }
  return out;
}

namespace detail {

// A forward-difference entry at (y,x) participates when its two endpoints are
// inside the mask; the zero-padded last column/row never participates.
inline bool dx_entry_valid(const matte_mask* mask, int y, int x, int w) {
  if (x + 1 >= w) return false;
  return !mask || (mask->inside(y, x) && mask->inside(y, x + 1));
}
inline bool dy_entry_valid(const matte_mask* mask, int y, int x, int h) {
  if (y + 1 >= h) return false;
  return !mask || (mask->inside(y, x) && mask->inside(y + 1, x));
}

}  // namespace detail

// Charbonnier-smoothed L1 of the forward-difference gradients
// (sqrt(g^2 + delta^2) - delta per component), averaged over masked pixels.
// Encourages piecewise-constant albedo.
inline map_loss albedo_smoothness(const pixel_field& albedo,
                                  const matte_mask* mask = nullptr,
                                  double delta = 1e-3) {
  if (albedo.width < 2 || albedo.height < 2)
    throw validation_error("albedo_smoothness: extent must be >= 2");
  if (mask) require_mask_shape(albedo, *mask, "albedo_smoothness");
  const int count = detail::masked_count(mask, albedo.width, albedo.height);
  map_loss out;
  out.grad = pixel_field(albedo.width, albedo.height, albedo.channels);
  for (int y = 0; y < albedo.height; ++y)
    for (int x = 0; x < albedo.width; ++x)
      for (int c = 0; c < albedo.channels; ++c) {
        if (detail::dx_entry_valid(mask, y, x, albedo.width)) {
          const double g = albedo.at(y, x + 1, c) - albedo.at(y, x, c);
          const double s = std::sqrt(g * g + delta * delta);
          out.raw_sum += s - delta;
          const double dg = g / s / count;
          out.grad.at(y, x + 1, c) += dg;
          out.grad.at(y, x, c) -= dg;
        }
        if (detail::dy_entry_valid(mask, y, x, albedo.height)) {
          const double g = albedo.at(y + 1, x, c) - albedo.at(y, x, c);
          const double s = std::sqrt(g * g + delta * delta);
          out.raw_sum += s - delta;
          const double dg = g / s / count;
          out.grad.at(y + 1, x, c) += dg;
          out.grad.at(y, x, c) -= dg;
        }
      }
  out.value = out.raw_sum / count;
  return out;
}

// Mean squared forward-difference gradient magnitude; shading varies smoothly.
inline map_loss shading_smoothness(const pixel_field& shading,
                                   const matte_mask* mask = nullptr) {
  if (shading.width < 2 || shading.height < 2)
    throw validation_error("shading_smoothness: extent must be >= 2");
  if (mask) require_mask_shape(shading, *mask, "shading_smoothness");
  const int count = detail::masked_count(mask, shading.width, shading.height);
  map_loss out;
  out.grad = pixel_field(shading.width, shading.height, shading.channels);
  for (int y = 0; y < shading.height; ++y)
    for (int x = 0; x < shading.width; ++x)
      for (int c = 0; c < shading.channels; ++c) {
        if (detail::dx_entry_valid(mask, y, x, shading.width)) {
          const double g = shading.at(y, x + 1, c) - shading.at(y, x, c);
          out.raw_sum += g * g;
          const double dg = 2.0 * g / count;
          out.grad.at(y, x + 1, c) += dg;
          out.grad.at(y, x, c) -= dg;
        }
        if (detail::dy_entry_valid(mask, y, x, shading.height)) {
          const double g = shading.at(y + 1, x, c) - shading.at(y, x, c);
          out.raw_sum += g * g;
          const double dg = 2.0 * g / count;
          out.grad.at(y + 1, x, c) += dg;
          out.grad.at(y, x, c) -= dg;
        }
      }
  out.value = out.raw_sum / count;
  return out;
}

struct bws_result {
  double value = 0.0;
  std::array<double, 3> channel_means{};
  std::vector<pixel_field> grads;  // per batch image
};

// Batch-wise white shading: per channel, the mean of masked shading over the
// whole batch is pinned to the constant c by a quadratic penalty.
inline bws_result bws_penalty(const std::vector<pixel_field>& shading_batch,
                              const std::vector<matte_mask>& masks, double c) {
  if (shading_batch.empty())
    throw validation_error("bws_penalty: empty batch");
  if (masks.size() != shading_batch.size())
    throw validation_error("bws_penalty: batch/mask count mismatch");

  int64_t m_total = 0;
  std::array<double, 3> sums{};
  for (size_t i = 0; i < shading_batch.size(); ++i) {
    const pixel_field& s = shading_batch[i];
    if (s.channels != 3)
      throw validation_error("bws_penalty: shading must have 3 channels");
    require_mask_shape(s, masks[i], "bws_penalty");
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        if (!masks[i].inside(y, x)) continue;
        ++m_total;
        for (int ch = 0; ch < 3; ++ch) sums[ch] += s.at(y, x, ch);
      }
  }
  if (m_total == 0) throw validation_error("bws_penalty: empty masks");

  bws_result out;
  std::array<double, 3> coeff{};
  for (int ch = 0; ch < 3; ++ch) {
    out.channel_means[ch] = sums[ch] / double(m_total);
    const double d = out.channel_means[ch] - c;
    out.value += d * d;
    coeff[ch] = 2.0 * d / double(m_total);
  }
  out.grads.reserve(shading_batch.size());
  for (size_t i = 0; i < shading_batch.size(); ++i) {
    const pixel_field& s = shading_batch[i];
    pixel_field g(s.width, s.height, 3);
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        if (!masks[i].inside(y, x)) continue;
        for (int ch = 0; ch < 3; ++ch) g.at(y, x, ch) = coeff[ch];
      }
    out.grads.push_back(std::move(g));
  }
  return out;
}

struct ebgan_result {
  double d_real = 0.0;  // discriminator reconstruction MSE on the real image
  double d_fake = 0.0;  // same on the generated image
  double d_loss = 0.0;  // d_real + max(0, margin - d_fake)
  double g_loss = 0.0;  // d_fake
  bool hinge_active = false;
  // Gradients of d_loss and g_loss with respect to the reconstructions; the
  // direct d g_loss / d fake term completes the generator chain.
  pixel_field d_dloss_recon_real;
  pixel_field d_dloss_recon_fake;
  pixel_field d_gloss_recon_fake;
  pixel_field d_gloss_fake;
};

// Energy-based adversarial pair: the discriminator is an autoencoder and its
// mean squared reconstruction error is the energy D(x).
inline ebgan_result ebgan_losses(const pixel_field& disc_recon_real,
                                 const pixel_field& real,
                                 const pixel_field& disc_recon_fake,
                                 const pixel_field& fake, double margin) {
  require_same_shape(disc_recon_real, real, "ebgan_losses");
  require_same_shape(disc_recon_fake, fake, "ebgan_losses");
  if (!(margin > 0.0)) throw validation_error("ebgan_losses: margin must be > 0");

  const double n_real = double(real.data.size());
  const double n_fake = double(fake.data.size());
  ebgan_result out;
  for (size_t i = 0; i < real.data.size(); ++i) {
    const double d = disc_recon_real.data[i] - real.data[i];
    out.d_real += d * d;
  }
  out.d_real /= n_real;
  for (size_t i = 0; i < fake.data.size(); ++i) {
    const double d = disc_recon_fake.data[i] - fake.data[i];
    out.d_fake += d * d;
  }
  out.d_fake /= n_fake;

  out.hinge_active = out.d_fake < margin;
  out.d_loss = out.d_real + std::max(0.0, margin - out.d_fake);
  out.g_loss = out.d_fake;

  out.d_dloss_recon_real = pixel_field(real.width, real.height, real.channels);
  out.d_dloss_recon_fake = pixel_field(fake.width, fake.height, fake.channels);
  out.d_gloss_recon_fake = pixel_field(fake.width, fake.height, fake.channels);
  out.d_gloss_fake = pixel_field(fake.width, fake.height, fake.channels);
  for (size_t i = 0; i < real.data.size(); ++i)
    out.d_dloss_recon_real.data[i] =
        2.0 * (disc_recon_real.data[i] - real.data[i]) / n_real;
  for (size_t i = 0; i < fake.data.size(); ++i) {
    const double g = 2.0 * (disc_recon_fake.data[i] - fake.data[i]) / n_fake;
    out.d_gloss_recon_fake.data[i] = g;
    out.d_gloss_fake.data[i] = -g;
    out.d_dloss_recon_fake.data[i] = out.hinge_active ? -g : 0.0;
  }
  return out;
}

struct loss_term {
  std::string name;
  double value = 0.0;
  double weight = 0.0;
  double raw = 0.0;
};

struct loss_report {
  struct entry {
    std::string name;
    double value = 0.0;
    double weighted = 0.0;
    double raw = 0.0;
  };
  std::vector<entry> terms;
  double total = 0.0;

  const entry* find(const std::string& name) const {
    for (const auto& t : terms)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline nlohmann::json report_to_json(const loss_report& r) {
  nlohmann::json terms = nlohmann::json::object();
  for (const auto& t : r.terms)
    terms[t.name] = {{"value", t.value}, {"weighted", t.weighted}, {"raw", t.raw}};
  return nlohmann::json{{"terms", terms}, {"total", r.total}};
}

// Weighted sum with itemized report. A NaN in any term aborts with the term
// name attached.
inline loss_report total_objective(const std::vector<loss_term>& parts) {
  loss_report r;
  for (const auto& p : parts) {
    if (std::isnan(p.value) || std::isnan(p.weight))
      throw numeric_error("total_objective: NaN in term \"" + p.name + "\"");
    loss_report::entry e;
    e.name = p.name;
    e.value = p.value;
    e.weighted = p.weight * p.value;
    e.raw = p.raw;
    r.terms.push_back(e);
    r.total += e.weighted;
  }
  if (std::isnan(r.total)) throw numeric_error("total_objective: NaN total");
  return r;
}

}  // namespace nfed
