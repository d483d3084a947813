// Training-side half of the toy network: loss assembly, full manual backward,
// the alternating generator/discriminator loop, latent swapping and the
// checkpoint format. Included by toynet.hpp.
#pragma once

namespace nfed {

// Upstream gradients entering the decode pipeline; all in network scalar T.
template <class T>
struct toy_upstreams {
  tensor3<T> d_io;
  tensor3<T> d_albedo;        // direct term (smoothness)
  tensor3<T> d_shading;       // direct terms (smoothness + batch BWS)
  tensor3<T> d_mask_out;      // direct term on the sigmoid output (mask loss)
  tensor3<T> d_normals_unit;  // direct term (normal supervision)
  std::array<T, 27> d_light{};
  tensor3<T> d_uv_out;        // implicit: on the sigmoid uv chart
  tensor3<T> d_ni_chart;      // implicit: on the raw (pre-normalize) ni chart
};

template <class T>
toy_upstreams<T> make_upstreams(const toy_model<T>& m) {
  const int s = m.cfg.size;
  toy_upstreams<T> u;
  u.d_io = tensor3<T>(3, s, s);
  if (m.cfg.baseline) return u;
  u.d_albedo = tensor3<T>(3, s, s);
  u.d_shading = tensor3<T>(3, s, s);
  u.d_mask_out = tensor3<T>(1, s, s);
  u.d_normals_unit = tensor3<T>(3, s, s);
  if (m.cfg.implicit_aux) {
    u.d_uv_out = tensor3<T>(2, s, s);
    u.d_ni_chart = tensor3<T>(3, s, s);
  }
  return u;
}

template <class T>
void add_cast(tensor3<T>& dst, const pixel_field& grad, double scale) {
  for (int ci = 0; ci < dst.c; ++ci)
    for (int y = 0; y < dst.h; ++y)
      for (int x = 0; x < dst.w; ++x)
        dst.at(ci, y, x) += T(scale * grad.at(y, x, ci));
}

// Full backpropagation of the assembled upstreams through compositing,
// formation, shading, normalization, decoders, latent heads and the encoder.
template <class T>
void toy_backward_chain(const toy_model<T>& m, const toy_cache<T>& c,
                        const toy_upstreams<T>& u, toy_model<T>& g) {
  std::vector<T> dzi;
  if (m.cfg.baseline) {
    dzi = m.dec_baseline.backward(c.d_baseline, u.d_io, nullptr, g.dec_baseline);
  } else {
    const int s = m.cfg.size;
    // Compositing.
    tensor3<T> d_ifg(3, s, s), d_bg(3, s, s), d_msig(1, s, s);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const T mv = c.d_mask.out.at(0, y, x);
        T dm = u.d_mask_out.at(0, y, x);
        for (int ch = 0; ch < 3; ++ch) {
          const T dio = u.d_io.at(ch, y, x);
          d_ifg.at(ch, y, x) = dio * mv;
          d_bg.at(ch, y, x) = dio * (T(1) - mv);
          dm += dio * (c.ifg.at(ch, y, x) - c.d_bg.out.at(ch, y, x));
        }
        d_msig.at(0, y, x) = dm;
      }
    // Formation.
    tensor3<T> d_alb = u.d_albedo, d_sh = u.d_shading;
    for (size_t i = 0; i < d_alb.v.size(); ++i) {
      d_alb.v[i] += d_ifg.v[i] * c.shading.v[i];
      d_sh.v[i] += d_ifg.v[i] * c.albedo.v[i];
    }
    // Shading.
    tensor3<T> d_nunit = u.d_normals_unit;
    std::array<T, 27> d_light = u.d_light;
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const T nx = c.normals_unit.at(0, y, x);
        const T ny = c.normals_unit.at(1, y, x);
        const T nz = c.normals_unit.at(2, y, x);
        const auto b = sh_basis_t(nx, ny, nz);
        for (int ch = 0; ch < 3; ++ch) {
          const T up = d_sh.at(ch, y, x);
          if (up == T(0)) continue;
          for (int k = 0; k < 9; ++k) d_light[ch * 9 + k] += up * b[k];
          T dnx, dny, dnz;
          sh_normal_partials(&c.z.light[ch * 9], nx, ny, nz, dnx, dny, dnz);
          d_nunit.at(0, y, x) += up * dnx;
          d_nunit.at(1, y, x) += up * dny;
          d_nunit.at(2, y, x) += up * dnz;
        }
      }
    // Unit-normalization.
    tensor3<T> d_nraw(3, s, s);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const auto n = normalize_with_grad(c.normals_raw.at(0, y, x),
                                           c.normals_raw.at(1, y, x),
                                           c.normals_raw.at(2, y, x));
        for (int col = 0; col < 3; ++col) {
          T acc = T(0);
          for (int row = 0; row < 3; ++row)
            acc += n.jac[row][col] * d_nunit.at(row, y, x);
          d_nraw.at(col, y, x) = acc;
        }
      }
    // Mask sigmoid output feeds its decoder directly (activation handled by
    // the stack).
    std::vector<T> dz_mask =
        m.dec_mask.backward(c.d_mask, d_msig, &c.enc.sw, g.dec_mask);
    std::vector<T> dz_bg = m.dec_bg.backward(c.d_bg, d_bg, &c.enc.sw, g.dec_bg);

    std::vector<T> dz_albedo, dz_normals, dz_uv, dz_ai, dz_ni;
    if (m.cfg.implicit_mode) {
      tensor3<T> d_ai_chart, d_uv_a, d_ni_chart_w, d_uv_n;
      warp_by_uv_backward(c.d_ai.out, c.d_uv.out, d_alb, d_ai_chart, d_uv_a);
      warp_by_uv_backward(c.d_ni.out, c.d_uv.out, d_nraw, d_ni_chart_w, d_uv_n);
      tensor3<T> d_uv_total = u.d_uv_out;
      for (size_t i = 0; i < d_uv_total.v.size(); ++i)
        d_uv_total.v[i] += d_uv_a.v[i] + d_uv_n.v[i];
      tensor3<T> d_ni_total = u.d_ni_chart;
      for (size_t i = 0; i < d_ni_total.v.size(); ++i)
        d_ni_total.v[i] += d_ni_chart_w.v[i];
      dz_uv = m.dec_uv.backward(c.d_uv, d_uv_total, nullptr, g.dec_uv);
      dz_ai = m.dec_impl.backward(c.d_ai, d_ai_chart, nullptr, g.dec_impl);
      dz_ni = m.dec_impl.backward(c.d_ni, d_ni_total, nullptr, g.dec_impl);
    } else {
      dz_albedo = m.dec_albedo.backward(c.d_albedo, d_alb, nullptr, g.dec_albedo);
      dz_normals =
          m.dec_normals.backward(c.d_normals, d_nraw, nullptr, g.dec_normals);
      if (m.cfg.implicit_aux) {
        bool any_uv = false, any_ni = false;
        for (const T v : u.d_uv_out.v) any_uv = any_uv || v != T(0);
        for (const T v : u.d_ni_chart.v) any_ni = any_ni || v != T(0);
        if (any_uv) dz_uv = m.dec_uv.backward(c.d_uv, u.d_uv_out, nullptr, g.dec_uv);
        if (any_ni)
          dz_ni = m.dec_impl.backward(c.d_ni, u.d_ni_chart, nullptr, g.dec_impl);
      }
    }

    // Latent heads.
    dzi.assign(size_t(m.cfg.z_shared), T(0));
    auto add_head = [&](const dense<T>& head, dense<T>& ghead,
                        const std::vector<T>& z_in, const std::vector<T>& dz) {
      if (dz.empty()) return;
      auto d = head.backward(z_in, dz, ghead);
      for (size_t i = 0; i < dzi.size(); ++i) dzi[i] += d[i];
    };
    std::vector<T> dz_light(d_light.begin(), d_light.end());
    add_head(m.head_light, g.head_light, c.z.zi, dz_light);
    add_head(m.head_bg, g.head_bg, c.z.zi, dz_bg);
    add_head(m.head_mask, g.head_mask, c.z.zi, dz_mask);
    if (m.cfg.implicit_mode) {
      add_head(m.head_uv, g.head_uv, c.z.zi, dz_uv);
      add_head(m.head_ai, g.head_ai, c.z.zi, dz_ai);
      add_head(m.head_ni, g.head_ni, c.z.zi, dz_ni);
    } else {
      add_head(m.head_albedo, g.head_albedo, c.z.zi, dz_albedo);
      add_head(m.head_normals, g.head_normals, c.z.zi, dz_normals);
      if (m.cfg.implicit_aux) {
        add_head(m.head_uv, g.head_uv, c.z.zi, dz_uv);
        add_head(m.head_ni, g.head_ni, c.z.zi, dz_ni);
      }
    }
  }

  // Encoder.
  std::vector<T> dflat = m.fc_zi.backward(c.enc.flat, dzi, g.fc_zi);
  tensor3<T> dr3(c.enc.r3.c, c.enc.r3.h, c.enc.r3.w);
  dr3.v = std::move(dflat);
  tensor3<T> dp3 = relu_backward(dr3, c.enc.p3);
  tensor3<T> dc3 = maxpool2_backward(dp3, c.enc.sw.s3, c.enc.c3.h, c.enc.c3.w);
  tensor3<T> dr2 = m.enc3.backward(c.enc.r2, dc3, g.enc3);
  tensor3<T> dp2 = relu_backward(dr2, c.enc.p2);
  tensor3<T> dc2 = maxpool2_backward(dp2, c.enc.sw.s2, c.enc.c2.h, c.enc.c2.w);
  tensor3<T> dr1 = m.enc2.backward(c.enc.r1, dc2, g.enc2);
  tensor3<T> dp1 = relu_backward(dr1, c.enc.p1);
  tensor3<T> dc1 = maxpool2_backward(dp1, c.enc.sw.s1, c.enc.c1.h, c.enc.c1.w);
  m.enc1.backward(c.enc.x, dc1, g.enc1);
}

// Losses and upstream assembly for one sample (everything except the batch
// BWS statistic and the adversarial pathway, which the callers own).
template <class T>
struct sample_losses {
  std::vector<loss_term> terms;
  toy_upstreams<T> upstreams;
  pixel_field shading_field;  // for batch BWS
};

template <class T>
sample_losses<T> toy_sample_losses(const toy_model<T>& m, const toy_cache<T>& c,
                                   const scene_sample& target,
                                   const loss_weights& w) {
  sample_losses<T> out;
  out.upstreams = make_upstreams(m);

  const pixel_field io_f = to_field(c.io);
  auto recon = l2_map_loss(io_f, target.image);
  out.terms.push_back({"recon", recon.value, w.w_recon, recon.raw_sum});
  add_cast(out.upstreams.d_io, recon.grad, w.w_recon);
  if (m.cfg.baseline) return out;

  const matte_mask& mask = target.gt_mask;
  const pixel_field normals_f = to_field(c.normals_unit);
  auto nrec = l2_map_loss(normals_f, target.gt_normals.as_field(), &mask);
  out.terms.push_back({"recon_normals", nrec.value, w.w_normal, nrec.raw_sum});
  add_cast(out.upstreams.d_normals_unit, nrec.grad, w.w_normal);

  sh_coeffs zl;
  for (int k = 0; k < 27; ++k) zl[k] = double(c.z.light[k]);
  auto lrec = light_loss(zl, target.gt_light);
  out.terms.push_back({"recon_light", lrec.value, w.w_light, lrec.value});
  for (int k = 0; k < 27; ++k)
    out.upstreams.d_light[k] += T(w.w_light * lrec.grad[k]);

  pixel_field mask_gt(m.cfg.size, m.cfg.size, 1);
  for (int y = 0; y < m.cfg.size; ++y)
    for (int x = 0; x < m.cfg.size; ++x) mask_gt.at(y, x, 0) = mask.at(y, x);
  const pixel_field mask_f = to_field(c.d_mask.out);
  auto mrec = l2_map_loss(mask_f, mask_gt);
  out.terms.push_back({"recon_mask", mrec.value, w.w_mask, mrec.raw_sum});
  add_cast(out.upstreams.d_mask_out, mrec.grad, w.w_mask);

  const pixel_field albedo_f = to_field(c.albedo);
  auto asm_ = albedo_smoothness(albedo_f, &mask, w.charbonnier_delta);
  out.terms.push_back({"albedo_smooth", asm_.value, w.w_albedo_smooth, asm_.raw_sum});
  add_cast(out.upstreams.d_albedo, asm_.grad, w.w_albedo_smooth);

  out.shading_field = to_field(c.shading);
  auto ssm = shading_smoothness(out.shading_field, &mask);
  out.terms.push_back({"shading_smooth", ssm.value, w.w_shading_smooth, ssm.raw_sum});
  add_cast(out.upstreams.d_shading, ssm.grad, w.w_shading_smooth);

  if (m.cfg.implicit_aux) {
    pixel_field uv_f = to_field(c.d_uv.out);
    auto uvrec = l2_map_loss(uv_f, target.gt_uv, &mask);
    out.terms.push_back({"recon_uv", uvrec.value, w.w_uv, uvrec.raw_sum});
    add_cast(out.upstreams.d_uv_out, uvrec.grad, w.w_uv);

    // Supervise the normalized uv-space normal chart against the splatted
    // ground truth; chain through the per-texel normalization here.
    normal_field ni_target = uv_space_normals(target, m.cfg.size);
    pixel_field ni_unit(m.cfg.size, m.cfg.size, 3);
    for (int y = 0; y < m.cfg.size; ++y)
      for (int x = 0; x < m.cfg.size; ++x) {
        const auto n = normalize_with_grad(c.d_ni.out.at(0, y, x),
                                           c.d_ni.out.at(1, y, x),
                                           c.d_ni.out.at(2, y, x));
        ni_unit.at(y, x, 0) = double(n.nx);
        ni_unit.at(y, x, 1) = double(n.ny);
        ni_unit.at(y, x, 2) = double(n.nz);
      }
    auto nirec = l2_map_loss(ni_unit, ni_target.as_field());
    out.terms.push_back({"recon_ni", nirec.value, w.w_ni, nirec.raw_sum});
    for (int y = 0; y < m.cfg.size; ++y)
      for (int x = 0; x < m.cfg.size; ++x) {
        const auto n = normalize_with_grad(c.d_ni.out.at(0, y, x),
                                           c.d_ni.out.at(1, y, x),
                                           c.d_ni.out.at(2, y, x));
        for (int col = 0; col < 3; ++col) {
          double acc = 0.0;
          for (int row = 0; row < 3; ++row)
            acc += double(n.jac[row][col]) * nirec.grad.at(y, x, row);
          out.upstreams.d_ni_chart.at(col, y, x) += T(w.w_ni * acc);
        }
      }
  }
  return out;
}

// Single-sample training gradient: the batch statistic degenerates to this
// sample, the adversarial term uses the current discriminator.
template <class T>
struct toy_gradients {
  toy_model<T> generator;
  toy_model<T> discriminator;
  loss_report report;
  double d_loss = 0.0;
};

template <class T>
toy_gradients<T> toy_backward(const toy_model<T>& m, const scene_sample& target,
                              const loss_weights& w) {
  toy_gradients<T> out{m.zero_like(), m.zero_like(), {}, 0.0};
  const tensor3<T> x = to_tensor<T>(target.image);
  toy_cache<T> cache = toy_forward(m, x);
  auto sl = toy_sample_losses(m, cache, target, w);

  if (!m.cfg.baseline) {
    auto bws = bws_penalty({sl.shading_field}, {target.gt_mask}, w.bws_target);
    sl.terms.push_back({"bws", bws.value, w.w_bws, bws.value});
    add_cast(sl.upstreams.d_shading, bws.grads[0], w.w_bws);
  }

  if (w.w_adv > 0.0) {
    toy_model<T> scratch = m.zero_like();
    disc_cache<T> dc = disc_forward(m, cache.io);
    sl.terms.push_back({"adv", dc.energy, w.w_adv, dc.energy});
    // g_loss = mean((recon - io)^2): gradient flows through the
    // discriminator into io and directly through the residual.
    const double n = double(dc.recon.v.size());
    tensor3<T> d_recon(3, m.cfg.size, m.cfg.size);
    for (size_t i = 0; i < d_recon.v.size(); ++i)
      d_recon.v[i] = T(w.w_adv * 2.0 *
                       (double(dc.recon.v[i]) - double(cache.io.v[i])) / n);
    tensor3<T> d_io_via_disc;
    disc_backward(m, dc, d_recon, scratch, &d_io_via_disc);
    for (size_t i = 0; i < sl.upstreams.d_io.v.size(); ++i)
      sl.upstreams.d_io.v[i] += d_io_via_disc.v[i] - d_recon.v[i];

    // Discriminator's own margin loss on (real, fake) = (input, io).
    disc_cache<T> dr = disc_forward(m, x);
    auto eb = ebgan_losses(to_field(dr.recon), target.image, to_field(dc.recon),
                           to_field(cache.io), w.adv_margin);
    out.d_loss = eb.d_loss;
    tensor3<T> up_real(3, m.cfg.size, m.cfg.size);
    add_cast(up_real, eb.d_dloss_recon_real, 1.0);
    disc_backward(m, dr, up_real, out.discriminator,
                  static_cast<tensor3<T>*>(nullptr));
    if (eb.hinge_active) {
      tensor3<T> up_fake(3, m.cfg.size, m.cfg.size);
      add_cast(up_fake, eb.d_dloss_recon_fake, 1.0);
      disc_backward(m, dc, up_fake, out.discriminator,
                    static_cast<tensor3<T>*>(nullptr));
    }
  }

  out.report = total_objective(sl.terms);
  toy_backward_chain(m, cache, sl.upstreams, out.generator);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "NFED", version u32, then per parameter
// [u32 name length, name bytes, u32 rank, u32 dims..., float32 data LE].
// A sibling <path>.json carries the architecture config.
// ---------------------------------------------------------------------------

template <class T>
void save_toy_model(toy_model<T>& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("save_toy_model: cannot open " + path);
  f.write("NFED", 4);
  const uint32_t version = 1;
  f.write(reinterpret_cast<const char*>(&version), 4);
  for (auto& p : m.params()) {
    const uint32_t name_len = uint32_t(p.name.size());
    f.write(reinterpret_cast<const char*>(&name_len), 4);
    f.write(p.name.data(), name_len);
    const uint32_t rank = uint32_t(p.dims.size());
    f.write(reinterpret_cast<const char*>(&rank), 4);
    for (uint32_t d : p.dims) f.write(reinterpret_cast<const char*>(&d), 4);
    std::vector<float> data(p.data->size());
    for (size_t i = 0; i < data.size(); ++i) data[i] = float((*p.data)[i]);
    f.write(reinterpret_cast<const char*>(data.data()),
            std::streamsize(data.size() * sizeof(float)));
  }
  if (!f) throw io_error("save_toy_model: write failed for " + path);
  std::ofstream cf(path + ".json");
  if (!cf) throw io_error("save_toy_model: cannot open " + path + ".json");
  cf << toy_config_to_json(m.cfg).dump(2) << "\n";
}

template <class T>
toy_model<T> load_toy_model(const std::string& path) {
  std::ifstream cf(path + ".json");
  if (!cf) throw io_error("load_toy_model: missing config " + path + ".json");
  nlohmann::json cj;
  cf >> cj;
  toy_model<T> m = toy_model<T>::shaped(toy_config_from_json(cj));

  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("load_toy_model: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "NFED", 4) != 0)
    throw io_error("load_toy_model: bad magic in " + path);
  uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1)
    throw io_error("load_toy_model: unsupported version " + std::to_string(version));

  std::map<std::string, param_ref<T>> by_name;
  for (auto& p : m.params()) by_name.emplace(p.name, p);
  size_t loaded = 0;
  while (true) {
    uint32_t name_len = 0;
    f.read(reinterpret_cast<char*>(&name_len), 4);
    if (!f) break;  // clean EOF
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    uint32_t rank = 0;
    f.read(reinterpret_cast<char*>(&rank), 4);
    std::vector<uint32_t> dims(rank);
    size_t count = 1;
    for (auto& d : dims) {
      f.read(reinterpret_cast<char*>(&d), 4);
      count *= d;
    }
    std::vector<float> data(count);
    f.read(reinterpret_cast<char*>(data.data()),
           std::streamsize(count * sizeof(float)));
    if (!f) throw io_error("load_toy_model: truncated chunk \"" + name + "\"");
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw io_error("load_toy_model: unknown parameter \"" + name + "\"");
    if (it->second.dims != dims || it->second.data->size() != count)
      throw io_error("load_toy_model: shape mismatch for \"" + name + "\"");
    for (size_t i = 0; i < count; ++i) (*it->second.data)[i] = T(data[i]);
    ++loaded;
  }
  if (loaded != by_name.size())
    throw io_error("load_toy_model: parameter count mismatch in " + path);
  return m;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

template <class T>
double validation_mse(const toy_model<T>& m, const std::vector<scene_sample>& val) {
  if (val.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : val) {
    auto cache = toy_forward(m, to_tensor<T>(s.image));
    double e = 0.0;
    const auto img = to_tensor<T>(s.image);
    for (size_t i = 0; i < cache.io.v.size(); ++i) {
      const double d = double(cache.io.v[i]) - double(img.v[i]);
      e += d * d;
    }
    total += e / double(cache.io.v.size());
  }
  return total / double(val.size());
}

struct train_metrics {
  std::vector<nlohmann::json> lines;
  double final_val_mse = 0.0;
  int total_batches = 0;
};

template <class T>
train_metrics toy_train(toy_model<T>& m, const std::vector<scene_sample>& train_set,
                        const std::vector<scene_sample>& val_set,
                        const std::string& out_dir = "") {
  const toy_config& cfg = m.cfg;
  cfg.validate();
  if (train_set.empty()) throw validation_error("toy_train: empty training set");
  const int threads =
      cfg.threads > 0 ? cfg.threads : default_thread_count();
  const loss_weights& w = cfg.weights;

  auto gen_params = m.generator_params();
  auto disc_params = m.discriminator_params();
  std::vector<adam_state> gen_opt, disc_opt;
  for (auto& p : gen_params) gen_opt.emplace_back(p.data->size());
  for (auto& p : disc_params) disc_opt.emplace_back(p.data->size());

  train_metrics metrics;
  std::ofstream log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log.open(out_dir + "/metrics.jsonl");
    if (!log) throw io_error("toy_train: cannot open metrics.jsonl");
  }
  auto emit = [&](nlohmann::json j) {
    if (log) log << j.dump() << "\n";
    metrics.lines.push_back(std::move(j));
  };

  const int batch_size = std::min<int>(cfg.batch, int(train_set.size()));
  std::vector<toy_model<T>> sample_grads;
  std::vector<toy_cache<T>> caches(batch_size);
  std::vector<disc_cache<T>> disc_fakes(batch_size);
  std::vector<sample_losses<T>> losses(batch_size);
  for (int i = 0; i < batch_size; ++i) sample_grads.push_back(m.zero_like());
  std::vector<toy_model<T>> disc_grads;
  for (int i = 0; i < batch_size; ++i) disc_grads.push_back(m.zero_like());

  rng shuffle_rng(cfg.seed ^ 0x5Eull);
  std::vector<int> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  double initial_total = -1.0;
  auto checkpoint = [&](const std::string& name) {
    if (!out_dir.empty()) save_toy_model(m, out_dir + "/" + name);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_epoch =
        (cfg.lr_end > 0.0 && cfg.epochs > 1)
            ? cfg.lr * std::pow(cfg.lr_end / cfg.lr,
                                double(epoch) / double(cfg.epochs - 1))
            : cfg.lr;
    // Fisher-Yates with the run's seeded stream.
    for (int i = int(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    const int n_batches = int(train_set.size()) / batch_size;
    for (int bi = 0; bi < n_batches; ++bi) {
      const int* idx = nullptr;
      std::vector<int> batch_idx(order.begin() + size_t(bi) * batch_size,
                                 order.begin() + size_t(bi + 1) * batch_size);
      idx = batch_idx.data();

      // Forward + per-sample losses (parallel across samples).
      parallel_chunks(batch_size, threads, [&](int, int begin, int end) {
        for (int i = begin; i < end; ++i) {
          const scene_sample& s = train_set[size_t(idx[i])];
          caches[i] = toy_forward(m, to_tensor<T>(s.image));
          losses[i] = toy_sample_losses(m, caches[i], s, w);
          if (w.w_adv > 0.0) disc_fakes[i] = disc_forward(m, caches[i].io);
        }
      });

      // Batch-level white-shading statistic.
      std::vector<loss_term> batch_terms;
      std::map<std::string, std::pair<double, double>> averaged;  // value, raw
      for (int i = 0; i < batch_size; ++i)
        for (const auto& t : losses[i].terms) {
          averaged[t.name].first += t.value / batch_size;
          averaged[t.name].second += t.raw / batch_size;
        }
      double adv_mean = 0.0;
      if (w.w_adv > 0.0) {
        for (int i = 0; i < batch_size; ++i) adv_mean += disc_fakes[i].energy;
        adv_mean /= batch_size;
      }
      bws_result bws;
      if (!cfg.baseline) {
        std::vector<pixel_field> shadings;
        std::vector<matte_mask> masks;
        for (int i = 0; i < batch_size; ++i) {
          shadings.push_back(losses[i].shading_field);
          masks.push_back(train_set[size_t(idx[i])].gt_mask);
        }
        bws = bws_penalty(shadings, masks, w.bws_target);
      }
      for (auto& [name, vr] : averaged) {
        double weight = name == "recon" ? w.w_recon
                        : name == "recon_normals" ? w.w_normal
                        : name == "recon_light" ? w.w_light
                        : name == "recon_mask" ? w.w_mask
                        : name == "albedo_smooth" ? w.w_albedo_smooth
                        : name == "shading_smooth" ? w.w_shading_smooth
                        : name == "recon_uv" ? w.w_uv
                        : name == "recon_ni" ? w.w_ni
                                             : 0.0;
        batch_terms.push_back({name, vr.first, weight, vr.second});
      }
      if (!cfg.baseline)
        batch_terms.push_back({"bws", bws.value, w.w_bws, bws.value});
      if (w.w_adv > 0.0)
        batch_terms.push_back({"adv", adv_mean, w.w_adv, adv_mean});
      loss_report report = total_objective(batch_terms);

      if (initial_total < 0.0) initial_total = report.total;
      if (report.total > 10.0 * std::max(initial_total, 1e-12))
        throw numeric_error("toy_train: divergence guard tripped at epoch " +
                            std::to_string(epoch) + " batch " + std::to_string(bi) +
                            " (total " + std::to_string(report.total) + ")");

      // Generator backward (parallel across samples, deterministic merge).
      parallel_chunks(batch_size, threads, [&](int, int begin, int end) {
        for (int i = begin; i < end; ++i) {
          auto& up = losses[i].upstreams;
          const double inv_b = 1.0 / batch_size;
          for (auto& v : up.d_io.v) v = T(double(v) * inv_b);
          if (!cfg.baseline) {
            for (auto& v : up.d_albedo.v) v = T(double(v) * inv_b);
            for (auto& v : up.d_shading.v) v = T(double(v) * inv_b);
            for (auto& v : up.d_mask_out.v) v = T(double(v) * inv_b);
            for (auto& v : up.d_normals_unit.v) v = T(double(v) * inv_b);
            for (auto& v : up.d_light) v = T(double(v) * inv_b);
            if (cfg.implicit_aux) {
              for (auto& v : up.d_uv_out.v) v = T(double(v) * inv_b);
              for (auto& v : up.d_ni_chart.v) v = T(double(v) * inv_b);
            }
            add_cast(up.d_shading, bws.grads[size_t(i)], w.w_bws);
          }
          if (w.w_adv > 0.0) {
            const double n = double(disc_fakes[i].recon.v.size());
            tensor3<T> d_recon(3, cfg.size, cfg.size);
            for (size_t k = 0; k < d_recon.v.size(); ++k)
              d_recon.v[k] = T(w.w_adv / batch_size * 2.0 *
                               (double(disc_fakes[i].recon.v[k]) -
                                double(caches[i].io.v[k])) / n);
            tensor3<T> d_io_via_disc;
            disc_backward(m, disc_fakes[i], d_recon, sample_grads[size_t(i)],
                          &d_io_via_disc);
            for (size_t k = 0; k < up.d_io.v.size(); ++k)
              up.d_io.v[k] += d_io_via_disc.v[k] - d_recon.v[k];
          }
          toy_backward_chain(m, caches[i], up, sample_grads[size_t(i)]);
        }
      });

      // Deterministic merge in sample order, then the Adam step.
      {
        std::vector<std::vector<param_ref<T>>> sample_refs;
        for (auto& sg : sample_grads) sample_refs.push_back(sg.generator_params());
        for (size_t pi = 0; pi < gen_params.size(); ++pi) {
          std::vector<T>& acc = *sample_refs[0][pi].data;
          for (int i = 1; i < batch_size; ++i) {
            const std::vector<T>& src = *sample_refs[size_t(i)][pi].data;
            for (size_t k = 0; k < acc.size(); ++k) acc[k] += src[k];
          }
          std::vector<double> gd(acc.begin(), acc.end());
          std::vector<double> pd(gen_params[pi].data->begin(),
                                 gen_params[pi].data->end());
          gen_opt[pi].step(pd, gd, lr_epoch);
          for (size_t k = 0; k < pd.size(); ++k)
            (*gen_params[pi].data)[k] = T(pd[k]);
        }
      }
      for (auto& sg : sample_grads)
        for (auto& p : sg.params()) std::fill(p.data->begin(), p.data->end(), T(0));

      // Discriminator step (margin loss), alternating with the generator.
      double d_loss_mean = 0.0;
      if (w.w_adv > 0.0) {
        std::vector<double> dls(batch_size, 0.0);
        parallel_chunks(batch_size, threads, [&](int, int begin, int end) {
          for (int i = begin; i < end; ++i) {
            const scene_sample& s = train_set[size_t(idx[i])];
            disc_cache<T> dr = disc_forward(m, to_tensor<T>(s.image));
            auto eb = ebgan_losses(to_field(dr.recon), s.image,
                                   to_field(disc_fakes[i].recon),
                                   to_field(caches[i].io), w.adv_margin);
            dls[size_t(i)] = eb.d_loss;
            tensor3<T> up_real(3, cfg.size, cfg.size);
            add_cast(up_real, eb.d_dloss_recon_real, 1.0 / batch_size);
            disc_backward(m, dr, up_real, disc_grads[size_t(i)],
                          static_cast<tensor3<T>*>(nullptr));
            if (eb.hinge_active) {
              tensor3<T> up_fake(3, cfg.size, cfg.size);
              add_cast(up_fake, eb.d_dloss_recon_fake, 1.0 / batch_size);
              disc_backward(m, disc_fakes[i], up_fake, disc_grads[size_t(i)],
                            static_cast<tensor3<T>*>(nullptr));
            }
          }
        });
        for (double v : dls) d_loss_mean += v / batch_size;
        std::vector<std::vector<param_ref<T>>> disc_refs;
        for (auto& sg : disc_grads) disc_refs.push_back(sg.discriminator_params());
        for (size_t pi = 0; pi < disc_params.size(); ++pi) {
          std::vector<T>& acc = *disc_refs[0][pi].data;
          for (int i = 1; i < batch_size; ++i) {
            const std::vector<T>& src = *disc_refs[size_t(i)][pi].data;
            for (size_t k = 0; k < acc.size(); ++k) acc[k] += src[k];
          }
          std::vector<double> gd(acc.begin(), acc.end());
          std::vector<double> pd(disc_params[pi].data->begin(),
                                 disc_params[pi].data->end());
          disc_opt[pi].step(pd, gd, lr_epoch);
          for (size_t k = 0; k < pd.size(); ++k)
            (*disc_params[pi].data)[k] = T(pd[k]);
        }
        for (auto& sg : disc_grads)
          for (auto& p : sg.params()) std::fill(p.data->begin(), p.data->end(), T(0));
      }

      int degenerate = 0;
      for (int i = 0; i < batch_size; ++i) degenerate += caches[i].degenerate_normals;
      nlohmann::json line = report_to_json(report);
      line["epoch"] = epoch;
      line["batch"] = bi;
      line["degenerate_normals"] = degenerate;
      if (w.w_adv > 0.0) line["d_loss"] = d_loss_mean;
      emit(std::move(line));
      ++metrics.total_batches;
    }

    const double val_mse = validation_mse(m, val_set);
    metrics.final_val_mse = val_mse;
    emit(nlohmann::json{{"epoch", epoch}, {"val_mse", val_mse}});
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
      checkpoint("model_epoch_" + std::to_string(epoch + 1) + ".nfed");
  }

  metrics.final_val_mse = validation_mse(m, val_set);
  checkpoint("model.nfed");
  return metrics;
}

// ---------------------------------------------------------------------------
// Latent swapping
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& toy_factor_names() {
  static const std::vector<std::string> names = {"light", "albedo", "normals",
                                                 "background", "mask", "uv"};
  return names;
}

template <class T>
std::vector<T>* factor_latent(latent_set<T>& z, const toy_config& cfg,
                              const std::string& name) {
  if (cfg.baseline)
    throw validation_error("factor_latent: baseline model has no factor latents");
  if (name == "light") return &z.light;
  if (name == "background") return &z.bg;
  if (name == "mask") return &z.mask;
  if (name == "albedo") return cfg.implicit_mode ? &z.ai : &z.albedo;
  if (name == "normals") return cfg.implicit_mode ? &z.ni : &z.normals;
  if (name == "uv") {
    if (!cfg.implicit_aux)
      throw validation_error("factor_latent: uv factor needs implicit decoders");
    return &z.uv;
  }
  throw validation_error("factor_latent: unknown factor \"" + name + "\"");
}

// Encode both images, substitute the named factor latent of b into a's
// latent set, decode with a's pooling switches.
template <class T>
toy_cache<T> latent_swap_cache(const toy_model<T>& m, const pixel_field& image_a,
                               const pixel_field& image_b,
                               const std::string& factor) {
  enc_cache<T> ea = toy_encode(m, to_tensor<T>(image_a));
  enc_cache<T> eb = toy_encode(m, to_tensor<T>(image_b));
  latent_set<T> za = toy_latents(m, ea);
  latent_set<T> zb = toy_latents(m, eb);
  *factor_latent(za, m.cfg, factor) = *factor_latent(zb, m.cfg, factor);
  return toy_decode(m, za, ea);
}

template <class T>
pixel_field latent_swap(const toy_model<T>& m, const pixel_field& image_a,
                        const pixel_field& image_b, const std::string& factor) {
  return to_field(latent_swap_cache(m, image_a, image_b, factor).io);
}

}  // namespace nfed
