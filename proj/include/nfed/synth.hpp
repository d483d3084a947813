// Procedural Lambertian scenes with exact ground truth: blobby height fields
// under low-order SH lighting, piecewise-constant Voronoi albedo, smooth
// backgrounds. Every sample satisfies
//   image == composite(albedo (*) shade(normals, light), background, mask)
// to rounding, and the masked mean shading per channel equals the BWS
// constant exactly.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nfed/fields.hpp"
#include "nfed/formation.hpp"
#include "nfed/image_io.hpp"
#include "nfed/rng.hpp"
#include "nfed/sh.hpp"

namespace nfed {

struct synth_config {
  int min_bumps = 2, max_bumps = 6;
  int min_cells = 3, max_cells = 8;
  double albedo_lo = 0.2, albedo_hi = 0.9;
  double ambient_lo = 0.8, ambient_hi = 1.2;
  double dir_sigma = 0.15;
  double target_mean_shading = 0.75;
  // Applied after the mean-shading normalization; used by attribute splits.
  double shading_gain = 1.0;
  std::optional<sh_coeffs> fixed_light;  // bypasses draw + normalization
  // Redraw band keeping in-mask shading positive and products below 1.
  double shading_band_lo = 0.05, shading_band_hi = 1.1;
  int max_light_draws = 100;
};

struct scene_sample {
  pixel_field image;
  pixel_field gt_albedo;
  normal_field gt_normals;
  sh_coeffs gt_light;
  matte_mask gt_mask;
  pixel_field gt_uv;  // 2 channels, zero outside the mask
  pixel_field background;
  uint64_t seed = 0;
};

namespace detail {

struct gaussian_bump {
  double cx, cy, sigma, amp;
};

}  // namespace detail

inline scene_sample generate_scene(int size, uint64_t seed,
                                   const synth_config& cfg = {}) {
  if (size < 16) throw validation_error("generate_scene: size must be >= 16");
  rng r(seed);
  scene_sample s;
  s.seed = seed;
  const int W = size, H = size;

  // Ellipsoidal base plus a few gaussian bumps; support with a margin so the
  // boundary slope stays finite.
  const double ax = r.uniform(0.65, 0.9);
  const double by = r.uniform(0.6, 0.85);
  const double h0 = r.uniform(0.5, 0.9);
  const int n_bumps = r.uniform_int(cfg.min_bumps, cfg.max_bumps);
  std::vector<detail::gaussian_bump> bumps;
  for (int i = 0; i < n_bumps; ++i) {
    const double rad = std::sqrt(r.uniform()) * 0.7;
    const double th = r.uniform(0.0, 2.0 * 3.14159265358979323846);
    detail::gaussian_bump b;
    b.cx = rad * ax * std::cos(th);
    b.cy = rad * by * std::sin(th);
    b.sigma = r.uniform(0.08, 0.25);
    b.amp = (r.uniform() < 0.5 ? -1.0 : 1.0) * r.uniform(0.03, 0.12);
    bumps.push_back(b);
  }

  auto px = [&](int j) { return -1.0 + 2.0 * (j + 0.5) / W; };
  auto py = [&](int i) { return -1.0 + 2.0 * (i + 0.5) / H; };
  const double support = 0.02;

  s.gt_mask = matte_mask(W, H, 0.0);
  s.gt_normals = normal_field(W, H);
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      const double x = px(j), y = py(i);
      const double base = 1.0 - (x / ax) * (x / ax) - (y / by) * (y / by);
      if (base <= support) continue;  // outside: mask 0, normal stays (0,0,1)
      s.gt_mask.at(i, j) = 1.0;
      const double sq = std::sqrt(base);
      double hx = -h0 * x / (ax * ax * sq);
      double hy = -h0 * y / (by * by * sq);
      for (const auto& b : bumps) {
        const double dx = x - b.cx, dy = y - b.cy;
        const double g = b.amp * std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma));
        hx += g * (-dx / (b.sigma * b.sigma));
        hy += g * (-dy / (b.sigma * b.sigma));
      }
      const double inv = 1.0 / std::sqrt(hx * hx + hy * hy + 1.0);
      s.gt_normals.set(i, j, -hx * inv, -hy * inv, inv);
    }
  }
  if (s.gt_mask.count_inside() < 9)
    throw numeric_error("generate_scene: degenerate mask");

  // Piecewise-constant albedo: Voronoi cells over the full frame, seeds spread
  // inside the ellipse by best-candidate sampling.
  const int n_cells = r.uniform_int(cfg.min_cells, cfg.max_cells);
  std::vector<std::array<double, 2>> sites;
  for (int c = 0; c < n_cells; ++c) {
    std::array<double, 2> best{0.0, 0.0};
    double best_d = -1.0;
    for (int cand = 0; cand < 8; ++cand) {
      const double rad = std::sqrt(r.uniform()) * 0.85;
      const double th = r.uniform(0.0, 2.0 * 3.14159265358979323846);
      const std::array<double, 2> p{rad * ax * std::cos(th), rad * by * std::sin(th)};
      double d = 1e9;
      for (const auto& q : sites)
        d = std::min(d, std::hypot(p[0] - q[0], p[1] - q[1]));
      if (sites.empty()) d = r.uniform();  // any first candidate
      if (d > best_d) {
        best_d = d;
        best = p;
      }
    }
    sites.push_back(best);
  }
  std::vector<std::array<double, 3>> colors(sites.size());
  for (auto& c : colors)
    for (auto& v : c) v = r.uniform(cfg.albedo_lo, cfg.albedo_hi);

  s.gt_albedo = pixel_field(W, H, 3);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      const double x = px(j), y = py(i);
      size_t nearest = 0;
      double best_d = 1e18;
      for (size_t c = 0; c < sites.size(); ++c) {
        const double d = (x - sites[c][0]) * (x - sites[c][0]) +
                         (y - sites[c][1]) * (y - sites[c][1]);
        if (d < best_d) {
          best_d = d;
          nearest = c;
        }
      }
      for (int ch = 0; ch < 3; ++ch) s.gt_albedo.at(i, j, ch) = colors[nearest][ch];
    }

  // Ambient-dominant light, rescaled per channel so the masked mean shading
  // equals the target exactly; redraw until the in-mask band holds.
  if (cfg.fixed_light) {
    s.gt_light = *cfg.fixed_light;
  } else {
    auto masked_stats = [&](const sh_coeffs& light, std::array<double, 3>& mean,
                            std::array<double, 3>& lo, std::array<double, 3>& hi) {
      mean = {0, 0, 0};
      lo = {1e18, 1e18, 1e18};
      hi = {-1e18, -1e18, -1e18};
      int64_t count = 0;
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          if (!s.gt_mask.inside(i, j)) continue;
          ++count;
          const auto b = sh_basis_t(s.gt_normals.nx(i, j), s.gt_normals.ny(i, j),
                                    s.gt_normals.nz(i, j));
          for (int ch = 0; ch < 3; ++ch) {
            double v = 0.0;
            for (int k = 0; k < 9; ++k) v += b[k] * light.channel(ch)[k];
            mean[ch] += v;
            lo[ch] = std::min(lo[ch], v);
            hi[ch] = std::max(hi[ch], v);
          }
        }
      for (int ch = 0; ch < 3; ++ch) mean[ch] /= double(count);
    };

    bool accepted = false;
    for (int attempt = 0; attempt < cfg.max_light_draws && !accepted; ++attempt) {
      sh_coeffs cand;
      for (int ch = 0; ch < 3; ++ch) {
        cand.channel(ch)[0] = r.uniform(cfg.ambient_lo, cfg.ambient_hi);
        for (int k = 1; k < 9; ++k) cand.channel(ch)[k] = r.normal(0.0, cfg.dir_sigma);
      }
      std::array<double, 3> mean, lo, hi;
      masked_stats(cand, mean, lo, hi);
      bool ok = true;
      for (int ch = 0; ch < 3 && ok; ++ch) {
        if (mean[ch] < 0.2) ok = false;
        else {
          const double f = cfg.target_mean_shading / mean[ch];
          if (f * lo[ch] < cfg.shading_band_lo || f * hi[ch] > cfg.shading_band_hi)
            ok = false;
        }
      }
      if (ok) {
        for (int ch = 0; ch < 3; ++ch) {
          const double f = cfg.target_mean_shading / mean[ch];
          for (int k = 0; k < 9; ++k) cand.channel(ch)[k] *= f;
        }
        s.gt_light = cand;
        accepted = true;
      }
    }
    if (!accepted) {
      // Ambient-only fallback: shading is the target constant everywhere.
      sh_coeffs flat;
      for (int ch = 0; ch < 3; ++ch)
        flat.channel(ch)[0] = cfg.target_mean_shading / sh_c4;
      s.gt_light = flat;
    }
    if (cfg.shading_gain != 1.0) s.gt_light = cfg.shading_gain * s.gt_light;
  }

  // uv: normalized object-space coordinates over the mask bounding box.
  int x0 = W, x1 = -1, y0 = H, y1 = -1;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      if (s.gt_mask.inside(i, j)) {
        x0 = std::min(x0, j);
        x1 = std::max(x1, j);
        y0 = std::min(y0, i);
        y1 = std::max(y1, i);
      }
  s.gt_uv = pixel_field(W, H, 2);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      if (!s.gt_mask.inside(i, j)) continue;
      s.gt_uv.at(i, j, 0) = x1 > x0 ? double(j - x0) / (x1 - x0) : 0.0;
      s.gt_uv.at(i, j, 1) = y1 > y0 ? double(i - y0) / (y1 - y0) : 0.0;
    }

  // Background: bilinear blend of four corner colors plus a coarse value-noise
  // texture.
  std::array<std::array<double, 3>, 4> corners;
  for (auto& c : corners)
    for (auto& v : c) v = r.uniform(0.1, 0.9);
  const int G = 8;
  std::vector<double> noise(size_t(G) * G);
  for (auto& v : noise) v = r.uniform(-0.05, 0.05);
  s.background = pixel_field(W, H, 3);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      const double u = W == 1 ? 0.0 : double(j) / (W - 1);
      const double v = H == 1 ? 0.0 : double(i) / (H - 1);
      const double gu = u * (G - 1), gv = v * (G - 1);
      const int gx = std::min(int(gu), G - 2), gy = std::min(int(gv), G - 2);
      const double fu = gu - gx, fv = gv - gy;
      const double nz = (1 - fu) * (1 - fv) * noise[gy * G + gx] +
                        fu * (1 - fv) * noise[gy * G + gx + 1] +
                        (1 - fu) * fv * noise[(gy + 1) * G + gx] +
                        fu * fv * noise[(gy + 1) * G + gx + 1];
      for (int ch = 0; ch < 3; ++ch) {
        const double base = (1 - u) * (1 - v) * corners[0][ch] +
                            u * (1 - v) * corners[1][ch] +
                            (1 - u) * v * corners[2][ch] + u * v * corners[3][ch];
        s.background.at(i, j, ch) = std::clamp(base + nz, 0.01, 0.99);
      }
    }

  s.image = composite(form_image(s.gt_albedo, shade_forward(s.gt_normals, s.gt_light)),
                      s.background, s.gt_mask);
  return s;
}

// Derived uv-space normal target for the implicit auxiliary decoders: splat
// image-space normals through the uv map with bilinear weights, normalize the
// accumulated vectors, and fill empty texels with (0,0,1).
inline normal_field uv_space_normals(const scene_sample& s, int tex_size) {
  std::vector<double> acc(size_t(tex_size) * tex_size * 3, 0.0);
  std::vector<double> wsum(size_t(tex_size) * tex_size, 0.0);
  for (int i = 0; i < s.gt_uv.height; ++i)
    for (int j = 0; j < s.gt_uv.width; ++j) {
      if (!s.gt_mask.inside(i, j)) continue;
      const double u = s.gt_uv.at(i, j, 0) * (tex_size - 1);
      const double v = s.gt_uv.at(i, j, 1) * (tex_size - 1);
      const int u0 = std::clamp(int(u), 0, tex_size - 2);
      const int v0 = std::clamp(int(v), 0, tex_size - 2);
      const double fu = u - u0, fv = v - v0;
      const double w[4] = {(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
      const int idx[4] = {v0 * tex_size + u0, v0 * tex_size + u0 + 1,
                          (v0 + 1) * tex_size + u0, (v0 + 1) * tex_size + u0 + 1};
      for (int k = 0; k < 4; ++k) {
        wsum[idx[k]] += w[k];
        acc[idx[k] * 3 + 0] += w[k] * s.gt_normals.nx(i, j);
        acc[idx[k] * 3 + 1] += w[k] * s.gt_normals.ny(i, j);
        acc[idx[k] * 3 + 2] += w[k] * s.gt_normals.nz(i, j);
      }
    }
  normal_field out(tex_size, tex_size);
  for (int t = 0; t < tex_size * tex_size; ++t) {
    if (wsum[t] < 1e-9) continue;  // stays (0,0,1)
    const double nx = acc[t * 3], ny = acc[t * 3 + 1], nz = acc[t * 3 + 2];
    const double norm = std::sqrt(nx * nx + ny * ny + nz * nz);
    if (norm < 1e-9) continue;
    out.vecs[t * 3] = nx / norm;
    out.vecs[t * 3 + 1] = ny / norm;
    out.vecs[t * 3 + 2] = nz / norm;
  }
  return out;
}

inline std::string sample_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%04d", index);
  return buf;
}

inline void save_scene(const scene_sample& s, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_image(s.image, dir + "/image.png", 16);
  save_float_map(s.gt_albedo, dir + "/albedo.pfm");
  save_float_map(s.gt_normals, dir + "/normals.pfm");
  save_mask(s.gt_mask, dir + "/mask.png");
  // PFM carries 1 or 3 channels; uv is stored with a zero-filled third channel.
  pixel_field uv3(s.gt_uv.width, s.gt_uv.height, 3);
  for (int i = 0; i < s.gt_uv.height; ++i)
    for (int j = 0; j < s.gt_uv.width; ++j) {
      uv3.at(i, j, 0) = s.gt_uv.at(i, j, 0);
      uv3.at(i, j, 1) = s.gt_uv.at(i, j, 1);
    }
  save_float_map(uv3, dir + "/uv.pfm");
  std::ofstream lf(dir + "/light.json");
  if (!lf) throw io_error("save_scene: cannot write light.json");
  lf << sh_to_json(s.gt_light).dump(2) << "\n";
  save_image(s.background, dir + "/background.png", 16);
}

inline scene_sample load_scene(const std::string& dir) {
  scene_sample s;
  s.image = load_image(dir + "/image.png");
  s.gt_albedo = load_float_map(dir + "/albedo.pfm");
  s.gt_normals = load_normal_map(dir + "/normals.pfm");
  s.gt_mask = load_mask(dir + "/mask.png");
  auto uv3 = load_float_map(dir + "/uv.pfm");
  s.gt_uv = pixel_field(uv3.width, uv3.height, 2);
  for (int i = 0; i < uv3.height; ++i)
    for (int j = 0; j < uv3.width; ++j) {
      s.gt_uv.at(i, j, 0) = uv3.at(i, j, 0);
      s.gt_uv.at(i, j, 1) = uv3.at(i, j, 1);
    }
  std::ifstream lf(dir + "/light.json");
  if (!lf) throw io_error("load_scene: cannot read light.json in " + dir);
  nlohmann::json j;
  lf >> j;
  s.gt_light = sh_from_json(j);
  s.background = load_image(dir + "/background.png");
  return s;
}

// Writes `count` samples plus a manifest; the 90/10 train/val split ranks
// sample seeds by hash so the validation share is exact to within one sample.
inline nlohmann::json generate_dataset(int count, int size, uint64_t seed,
                                       const std::string& out_dir,
                                       const synth_config& cfg = {}) {
  if (count < 1) throw validation_error("generate_dataset: count must be >= 1");
  std::filesystem::create_directories(out_dir);

  std::vector<uint64_t> seeds(count);
  std::vector<uint64_t> hashes(count);
  for (int i = 0; i < count; ++i) {
    seeds[i] = seed + uint64_t(i);
    rng h(seeds[i]);
    hashes[i] = h.next_u64();
  }
  std::vector<int> order(count);
  for (int i = 0; i < count; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return hashes[a] < hashes[b]; });
  const int n_val = int(std::lround(count * 0.1));
  std::vector<bool> is_val(count, false);
  for (int k = 0; k < std::min(n_val, count); ++k) is_val[order[k]] = true;

  nlohmann::json samples = nlohmann::json::array();
  for (int i = 0; i < count; ++i) {
    auto s = generate_scene(size, seeds[i], cfg);
    const std::string name = sample_dir_name(i);
    save_scene(s, out_dir + "/" + name);
    samples.push_back({{"dir", name},
                       {"seed", seeds[i]},
                       {"split", is_val[i] ? "val" : "train"}});
  }
  nlohmann::json manifest = {{"rng", "splitmix64-boxmuller-v1"},
                             {"base_seed", seed},
                             {"count", count},
                             {"size", size},
                             {"samples", samples}};
  std::ofstream mf(out_dir + "/manifest.json");
  if (!mf) throw io_error("generate_dataset: cannot write manifest.json");
  mf << manifest.dump(2) << "\n";
  return manifest;
}

inline nlohmann::json load_manifest(const std::string& dataset_dir) {
  std::ifstream mf(dataset_dir + "/manifest.json");
  if (!mf) throw io_error("load_manifest: cannot read manifest in " + dataset_dir);
  nlohmann::json j;
  mf >> j;
  return j;
}

}  // namespace nfed
