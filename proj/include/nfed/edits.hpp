// Editing procedures over decompositions and latent codes: detailed-albedo
// lighting transfer, direct relighting, and attribute manifold traversal.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nfed/fields.hpp"
#include "nfed/formation.hpp"
#include "nfed/sh.hpp"
#include "nfed/toynet.hpp"

namespace nfed {

// Decomposition pieces a transfer or relight needs; fields are borrowed.
struct decomp_view {
  const pixel_field* albedo = nullptr;
  const pixel_field* shading = nullptr;
  const normal_field* normals = nullptr;
  const matte_mask* mask = nullptr;
  const pixel_field* background = nullptr;  // optional; zeros when absent
};

namespace detail {

inline pixel_field background_or_zero(const decomp_view& v, int w, int h) {
  if (v.background) return *v.background;
  return pixel_field(w, h, 3);
}

}  // namespace detail

struct transfer_result {
  pixel_field image;
  pixel_field transferred_shading;
};

// Detailed-albedo lighting transfer: divide the target image by its own
// shading (floored at eps) to recover an albedo carrying all image detail,
// re-shade the target normals under the source light, and composite over the
// original background.
inline transfer_result transfer_lighting(const pixel_field& target_image,
                                         const decomp_view& target,
                                         const sh_coeffs& source_light,
                                         double eps = 1e-4) {
  if (!target.shading || !target.normals || !target.mask)
    throw validation_error("transfer_lighting: missing decomposition pieces");
  require_same_shape(target_image, *target.shading, "transfer_lighting");
  if (target_image.channels != 3)
    throw validation_error("transfer_lighting: image must have 3 channels");

  pixel_field detailed_albedo(target_image.width, target_image.height, 3);
  for (size_t i = 0; i < detailed_albedo.data.size(); ++i)
    detailed_albedo.data[i] =
        target_image.data[i] / std::max(target.shading->data[i], eps);

  transfer_result out;
  out.transferred_shading = shade_forward(*target.normals, source_light);
  pixel_field bg = detail::background_or_zero(target, target_image.width,
                                              target_image.height);
  out.image = composite(form_image(detailed_albedo, out.transferred_shading), bg,
                        *target.mask);
  return out;
}

// Re-render the decomposed albedo under a new light and composite.
inline pixel_field relight_direct(const decomp_view& target,
                                  const sh_coeffs& new_light) {
  if (!target.albedo || !target.normals || !target.mask)
    throw validation_error("relight_direct: missing decomposition pieces");
  auto shading = shade_forward(*target.normals, new_light);
  pixel_field bg = detail::background_or_zero(target, target.albedo->width,
                                              target.albedo->height);
  return composite(form_image(*target.albedo, shading), bg, *target.mask);
}

// ---------------------------------------------------------------------------
// Manifold traversal
// ---------------------------------------------------------------------------

struct attribute_sets {
  std::vector<std::vector<double>> positive;
  std::vector<std::vector<double>> negative;
  std::string factor;

  void validate() const {
    if (positive.empty() || negative.empty())
      throw validation_error("attribute_sets: positive and negative sets must be "
                             "nonempty");
    const size_t dim = positive.front().size();
    for (const auto& z : positive)
      if (z.size() != dim)
        throw validation_error("attribute_sets: inconsistent dimensionality");
    for (const auto& z : negative)
      if (z.size() != dim)
        throw validation_error("attribute_sets: inconsistent dimensionality");
  }
};

struct traversal_config {
  double lambda = 0.05;  // larger = more conservative edits
  std::string mode = "mean-shift-linear";  // or "kernel-weighted"
  double kernel_bandwidth = 1.0;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
      throw validation_error("traversal_config: lambda must be finite positive");
    if (mode != "mean-shift-linear" && mode != "kernel-weighted")
      throw validation_error("traversal_config: unknown mode \"" + mode + "\"");
    if (!(kernel_bandwidth > 0.0))
      throw validation_error("traversal_config: bandwidth must be > 0");
  }
};

namespace detail {

inline std::vector<double> set_mean(const std::vector<std::vector<double>>& set) {
  std::vector<double> mu(set.front().size(), 0.0);
  for (const auto& z : set)
    for (size_t i = 0; i < mu.size(); ++i) mu[i] += z[i];
  for (auto& v : mu) v /= double(set.size());
  return mu;
}

inline std::vector<double> clip_norm(std::vector<double> v, double max_norm) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > max_norm && n > 0.0)
    for (auto& x : v) x *= max_norm / n;
  return v;
}

}  // namespace detail

// Move a code toward the positive set. Mean-shift-linear steps along the
// difference of set means scaled by 1/lambda, so smaller lambda gives a
// stronger edit; kernel-weighted blends toward a similarity-weighted average
// of the positive codes with alpha = 1/(1+lambda).
inline std::vector<double> traverse(const std::vector<double>& z,
                                    const attribute_sets& sets,
                                    const traversal_config& cfg) {
  sets.validate();
  cfg.validate();
  if (sets.positive.front().size() != z.size())
    throw validation_error("traverse: latent dimensionality mismatch");

  if (cfg.mode == "mean-shift-linear") {
    auto mu_p = detail::set_mean(sets.positive);
    auto mu_n = detail::set_mean(sets.negative);
    std::vector<double> dir(z.size());
    double norm = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
      dir[i] = mu_p[i] - mu_n[i];
      norm += dir[i] * dir[i];
    }
    dir = detail::clip_norm(std::move(dir), std::sqrt(norm));
    std::vector<double> out = z;
    for (size_t i = 0; i < z.size(); ++i) out[i] += dir[i] / cfg.lambda;
    return out;
  }

  // kernel-weighted
  const double alpha = 1.0 / (1.0 + cfg.lambda);
  const double bw2 = cfg.kernel_bandwidth * cfg.kernel_bandwidth;
  std::vector<double> target(z.size(), 0.0);
  double wsum = 0.0;
  for (const auto& zp : sets.positive) {
    double d2 = 0.0;
    for (size_t i = 0; i < z.size(); ++i) d2 += (z[i] - zp[i]) * (z[i] - zp[i]);
    const double k = std::exp(-d2 / (2.0 * bw2));
    wsum += k;
    for (size_t i = 0; i < z.size(); ++i) target[i] += k * zp[i];
  }
  if (wsum <= 0.0)
    throw numeric_error("traverse: kernel weights vanished; increase bandwidth");
  std::vector<double> out(z.size());
  for (size_t i = 0; i < z.size(); ++i)
    out[i] = (1.0 - alpha) * z[i] + alpha * target[i] / wsum;
  return out;
}

// Encode, traverse only the named factor latents, decode; unnamed factors are
// bit-untouched.
template <class T>
pixel_field edit_and_decode(const toy_model<T>& m, const pixel_field& image,
                            const std::vector<std::string>& factors,
                            const std::map<std::string, attribute_sets>& sets,
                            const traversal_config& cfg) {
  enc_cache<T> enc = toy_encode(m, to_tensor<T>(image));
  latent_set<T> z = toy_latents(m, enc);
  for (const auto& name : factors) {
    auto it = sets.find(name);
    if (it == sets.end())
      throw validation_error("edit_and_decode: no attribute sets for factor \"" +
                             name + "\"");
    std::vector<T>* latent = factor_latent(z, m.cfg, name);
    std::vector<double> zd(latent->begin(), latent->end());
    zd = traverse(zd, it->second, cfg);
    for (size_t i = 0; i < latent->size(); ++i) (*latent)[i] = T(zd[i]);
  }
  return to_field(toy_decode(m, z, enc).io);
}

// ---------------------------------------------------------------------------
// Latent JSON files: {"factors": {"light": [...], "albedo": [...], ...}}
// ---------------------------------------------------------------------------

template <class T>
nlohmann::json latents_to_json(const toy_model<T>& m, const latent_set<T>& z) {
  nlohmann::json factors = nlohmann::json::object();
  auto put = [&](const char* name, const std::vector<T>& v) {
    if (!v.empty())
      factors[name] = std::vector<double>(v.begin(), v.end());
  };
  put("shared", z.zi);
  put("albedo", m.cfg.implicit_mode ? z.ai : z.albedo);
  put("normals", m.cfg.implicit_mode ? z.ni : z.normals);
  put("background", z.bg);
  put("mask", z.mask);
  put("light", z.light);
  put("uv", z.uv);
  return nlohmann::json{{"factors", factors}};
}

// Loads one factor's codes from every *.json file in a directory.
inline std::vector<std::vector<double>> load_latent_dir(const std::string& dir,
                                                        const std::string& factor) {
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  std::vector<std::vector<double>> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw io_error("load_latent_dir: cannot read " + f);
    nlohmann::json j;
    in >> j;
    if (!j.contains("factors") || !j["factors"].contains(factor))
      throw validation_error("load_latent_dir: " + f + " has no factor \"" +
                             factor + "\"");
    out.push_back(j["factors"][factor].get<std::vector<double>>());
  }
  if (out.empty())
    throw validation_error("load_latent_dir: no latent files in " + dir);
  return out;
}

}  // namespace nfed
