// Command-line front end. One binary, subcommand style; config file plus flag
// overrides, flags win. Every output directory receives resolved_config.json.
// Exit codes: 0 success, 1 runtime/numeric failure, 2 usage/validation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nfed/nfed.hpp"

namespace fs = std::filesystem;
using namespace nfed;

namespace {

pixel_field load_image_any(const std::string& path) {
  if (fs::path(path).extension() == ".pfm") return load_float_map(path);
  return load_image(path);
}

sh_coeffs load_light_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot read light file " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("malformed light JSON in " + path + ": " + e.what());
  }
  return sh_from_json(j);
}

void write_light_file(const sh_coeffs& l, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot write " + path);
  f << sh_to_json(l).dump(2) << "\n";
}

void print_report(const loss_report& rep) {
  for (const auto& t : rep.terms)
    std::printf("  %-16s value=%-12.6g weighted=%-12.6g\n", t.name.c_str(),
                t.value, t.weighted);
  std::printf("  total=%.6g\n", rep.total);
}

double masked_mse(const pixel_field& a, const pixel_field& b, const matte_mask& m) {
  double sum = 0.0;
  int64_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (!m.inside(y, x)) continue;
      for (int c = 0; c < a.channels; ++c) {
        const double d = a.at(y, x, c) - b.at(y, x, c);
        sum += d * d;
        ++n;
      }
    }
  return n ? sum / double(n) : 0.0;
}

struct cli_state {
  std::string config_path;
  int threads = 0;
  run_config cfg;

  void resolve() {
    if (!config_path.empty()) cfg = load_run_config(config_path);
    if (threads > 0) cfg.toynet.threads = threads;
  }
};

std::vector<scene_sample> load_split(const std::string& data_dir,
                                     const std::string& split) {
  auto manifest = load_manifest(data_dir);
  std::vector<scene_sample> out;
  for (const auto& s : manifest["samples"]) {
    if (s["split"].get<std::string>() != split) continue;
    out.push_back(load_scene(data_dir + "/" + s["dir"].get<std::string>()));
  }
  return out;
}

pixel_field clamped_display(const pixel_field& f) {
  pixel_field out = f;
  for (auto& v : out.data) v = std::clamp(v, 0.0, 1.0);
  out.bounded = true;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nfed: differentiable inverse rendering toolkit for face-like "
               "images (SH Lambertian shading, intrinsic decomposition, toy "
               "disentangling autoencoder, relighting and latent edits)"};
  app.require_subcommand(1);

  cli_state st;
  app.add_option("--config", st.config_path, "JSON run configuration");
  app.add_option("--threads", st.threads,
                 "worker cap (overrides NFED_THREADS)");

  // --- synth ---------------------------------------------------------------
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  struct {
    int count = -1, size = -1;
    int64_t seed = -1;
    std::string out;
  } a_synth;
  c_synth->add_option("--count", a_synth.count, "number of samples");
  c_synth->add_option("--size", a_synth.size, "image size in pixels");
  c_synth->add_option("--seed", a_synth.seed, "base seed");
  c_synth->add_option("--out", a_synth.out, "output directory")->required();

  // --- decompose -------------------------------------------------------------
  auto* c_dec = app.add_subcommand("decompose",
                                   "single-image intrinsic decomposition");
  struct {
    std::string image, normals, mask, out;
  } a_dec;
  c_dec->add_option("--image", a_dec.image)->required();
  c_dec->add_option("--normals", a_dec.normals, "prior normal map (PFM)")->required();
  c_dec->add_option("--mask", a_dec.mask)->required();
  c_dec->add_option("--out", a_dec.out)->required();

  // --- estimate-light ---------------------------------------------------------
  auto* c_est = app.add_subcommand("estimate-light",
                                   "least-squares light from image + normals");
  struct {
    std::string image, normals, mask, out;
  } a_est;
  c_est->add_option("--image", a_est.image)->required();
  c_est->add_option("--normals", a_est.normals)->required();
  c_est->add_option("--mask", a_est.mask)->required();
  c_est->add_option("--out", a_est.out, "output light.json")->required();

  // --- relight -----------------------------------------------------------------
  auto* c_rel = app.add_subcommand("relight",
                                   "re-render a decomposition under a new light");
  struct {
    std::string decomp, light, out, image, mask;
  } a_rel;
  c_rel->add_option("--decomp", a_rel.decomp, "decomposition directory")->required();
  c_rel->add_option("--light", a_rel.light, "light.json")->required();
  c_rel->add_option("--mask", a_rel.mask, "matte mask (PNG, default all-inside)");
  c_rel->add_option("--image", a_rel.image, "background source image (optional)");
  c_rel->add_option("--out", a_rel.out)->required();

  // --- transfer -------------------------------------------------------------------
  auto* c_tr = app.add_subcommand("transfer",
                                  "detailed-albedo lighting transfer");
  struct {
    std::string target_image, decomp, source_light, mask, out;
  } a_tr;
  c_tr->add_option("--target-image", a_tr.target_image)->required();
  c_tr->add_option("--decomp", a_tr.decomp, "target decomposition directory")
      ->required();
  c_tr->add_option("--source-light", a_tr.source_light)->required();
  c_tr->add_option("--mask", a_tr.mask, "target mask (PNG)")->required();
  c_tr->add_option("--out", a_tr.out)->required();

  // --- train ------------------------------------------------------------------------
  auto* c_train = app.add_subcommand("train", "train the toy autoencoder");
  struct {
    std::string data, out;
    int epochs = -1;
    int64_t seed = -1;
  } a_train;
  c_train->add_option("--data", a_train.data, "dataset directory")->required();
  c_train->add_option("--out", a_train.out)->required();
  c_train->add_option("--epochs", a_train.epochs);
  c_train->add_option("--seed", a_train.seed);

  // --- reconstruct -------------------------------------------------------------------
  auto* c_rec = app.add_subcommand("reconstruct",
                                   "run the network and dump all factors");
  struct {
    std::string model, image, out;
  } a_rec;
  c_rec->add_option("--model", a_rec.model)->required();
  c_rec->add_option("--image", a_rec.image)->required();
  c_rec->add_option("--out", a_rec.out)->required();

  // --- swap ------------------------------------------------------------------------------
  auto* c_swap = app.add_subcommand("swap", "swap a factor latent between images");
  struct {
    std::string model, image_a, image_b, factor, out;
  } a_swap;
  c_swap->add_option("--model", a_swap.model)->required();
  c_swap->add_option("--image-a", a_swap.image_a)->required();
  c_swap->add_option("--image-b", a_swap.image_b)->required();
  c_swap->add_option("--factor", a_swap.factor)->required();
  c_swap->add_option("--out", a_swap.out)->required();

  // --- traverse -----------------------------------------------------------------------------
  auto* c_trav = app.add_subcommand("traverse",
                                    "edit by latent manifold traversal");
  struct {
    std::string model, image, factor, pos, neg, out;
    double lambda = 0.05, bandwidth = 1.0;
    std::string mode = "mean-shift-linear";
  } a_trav;
  c_trav->add_option("--model", a_trav.model)->required();
  c_trav->add_option("--image", a_trav.image)->required();
  c_trav->add_option("--factor", a_trav.factor)->required();
  c_trav->add_option("--pos", a_trav.pos, "directory of positive latent JSONs")
      ->required();
  c_trav->add_option("--neg", a_trav.neg, "directory of negative latent JSONs")
      ->required();
  c_trav->add_option("--lambda", a_trav.lambda);
  c_trav->add_option("--mode", a_trav.mode);
  c_trav->add_option("--bandwidth", a_trav.bandwidth);
  c_trav->add_option("--out", a_trav.out)->required();

  // --- gradcheck -----------------------------------------------------------------------------
  auto* c_gc = app.add_subcommand("gradcheck",
                                  "finite-difference check of every backward");
  struct {
    int samples = 1000;
    int64_t seed = 20240501;
    bool skip_fp32 = false;
  } a_gc;
  c_gc->add_option("--samples", a_gc.samples, "samples per layer");
  c_gc->add_option("--seed", a_gc.seed);
  c_gc->add_flag("--skip-fp32", a_gc.skip_fp32);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    st.resolve();
    run_config& cfg = st.cfg;

    if (*c_synth) {
      if (a_synth.count >= 0) cfg.synth.count = a_synth.count;
      if (a_synth.size >= 0) cfg.synth.size = a_synth.size;
      if (a_synth.seed >= 0) cfg.synth.seed = uint64_t(a_synth.seed);
      auto manifest = generate_dataset(cfg.synth.count, cfg.synth.size,
                                       cfg.synth.seed, a_synth.out);
      write_resolved_config(cfg, a_synth.out);
      std::printf("%s/manifest.json\n", a_synth.out.c_str());
    } else if (*c_dec) {
      auto image = load_image_any(a_dec.image);
      auto normals = load_normal_map(a_dec.normals);
      auto mask = load_mask(a_dec.mask);
      auto res = solve(image, normals, mask, cfg.solver);
      save_decomp(res, a_dec.out);
      write_resolved_config(cfg, a_dec.out);
      std::printf("decomposition written to %s (converged=%d, iterations=%zu)\n",
                  a_dec.out.c_str(), res.converged ? 1 : 0, res.trace.size() - 1);
      print_report(res.trace.back());
      std::printf("  masked reconstruction MSE: %.6g\n",
                  masked_mse(form_image(res.albedo, res.shading), image, mask));
    } else if (*c_est) {
      auto image = load_image_any(a_est.image);
      auto normals = load_normal_map(a_est.normals);
      auto mask = load_mask(a_est.mask);
      write_light_file(estimate_light(image, normals, mask), a_est.out);
      std::printf("%s\n", a_est.out.c_str());
    } else if (*c_rel) {
      auto dec = load_decomp(a_rel.decomp);
      auto light = load_light_file(a_rel.light);
      matte_mask mask(dec.albedo.width, dec.albedo.height, 1.0);
      if (!a_rel.mask.empty()) mask = load_mask(a_rel.mask);
      std::optional<pixel_field> bg;
      if (!a_rel.image.empty()) bg = load_image_any(a_rel.image);
      decomp_view view;
      view.albedo = &dec.albedo;
      view.normals = &dec.normals;
      view.mask = &mask;
      if (bg) view.background = &*bg;
      auto relit = relight_direct(view, light);
      fs::create_directories(a_rel.out);
      save_image(clamped_display(relit), a_rel.out + "/relit.png", 16);
      save_float_map(shade_forward(dec.normals, light),
                     a_rel.out + "/s_transfer.pfm");
      write_resolved_config(cfg, a_rel.out);
      std::printf("%s/relit.png\n", a_rel.out.c_str());
    } else if (*c_tr) {
      auto target_image = load_image_any(a_tr.target_image);
      auto dec = load_decomp(a_tr.decomp);
      auto light = load_light_file(a_tr.source_light);
      auto mask = load_mask(a_tr.mask);
      decomp_view view;
      view.albedo = &dec.albedo;
      view.shading = &dec.shading;
      view.normals = &dec.normals;
      view.mask = &mask;
      view.background = &target_image;  // out-of-mask pixels keep the original
      auto res = transfer_lighting(target_image, view, light,
                                   cfg.solver.eps_shading);
      fs::create_directories(a_tr.out);
      save_image(clamped_display(res.image), a_tr.out + "/transfer.png", 16);
      save_float_map(res.transferred_shading, a_tr.out + "/s_transfer.pfm");
      write_resolved_config(cfg, a_tr.out);
      std::printf("%s/transfer.png\n", a_tr.out.c_str());
    } else if (*c_train) {
      if (a_train.epochs >= 0) cfg.toynet.epochs = a_train.epochs;
      if (a_train.seed >= 0) cfg.toynet.seed = uint64_t(a_train.seed);
      auto train_set = load_split(a_train.data, "train");
      auto val_set = load_split(a_train.data, "val");
      if (train_set.empty())
        throw validation_error("dataset has no training samples");
      if (train_set.front().image.width != cfg.toynet.size)
        throw validation_error(
            "dataset size " + std::to_string(train_set.front().image.width) +
            " does not match toynet.size " + std::to_string(cfg.toynet.size));
      auto model = toy_model<double>::make(cfg.toynet, cfg.toynet.seed);
      auto metrics = toy_train(model, train_set, val_set, a_train.out);
      write_resolved_config(cfg, a_train.out);
      std::printf("final validation MSE: %.6g (%d batches)\n",
                  metrics.final_val_mse, metrics.total_batches);
    } else if (*c_rec) {
      auto model = load_toy_model<double>(a_rec.model);
      auto image = load_image_any(a_rec.image);
      auto enc = toy_encode(model, to_tensor<double>(image));
      auto z = toy_latents(model, enc);
      auto cache = toy_decode(model, z, enc);
      fs::create_directories(a_rec.out);
      save_image(clamped_display(to_field(cache.io)), a_rec.out + "/recon.png", 16);
      if (!model.cfg.baseline) {
        auto out = outputs_from_cache(model, cache);
        save_float_map(out.albedo, a_rec.out + "/albedo.pfm");
        save_float_map(out.shading, a_rec.out + "/shading.pfm");
        save_float_map(out.normals, a_rec.out + "/normals.pfm");
        save_image(clamped_display(out.mask), a_rec.out + "/mask.png");
        save_image(clamped_display(out.background), a_rec.out + "/background.png",
                   16);
        write_light_file(out.light, a_rec.out + "/light.json");
      }
      std::ofstream lf(a_rec.out + "/latents.json");
      lf << latents_to_json(model, z).dump(2) << "\n";
      write_resolved_config(cfg, a_rec.out);
      std::printf("%s/recon.png\n", a_rec.out.c_str());
    } else if (*c_swap) {
      auto model = load_toy_model<double>(a_swap.model);
      auto img_a = load_image_any(a_swap.image_a);
      auto img_b = load_image_any(a_swap.image_b);
      auto swapped = latent_swap(model, img_a, img_b, a_swap.factor);
      fs::create_directories(a_swap.out);
      save_image(clamped_display(swapped), a_swap.out + "/swap.png", 16);
      write_resolved_config(cfg, a_swap.out);
      std::printf("%s/swap.png\n", a_swap.out.c_str());
    } else if (*c_trav) {
      auto model = load_toy_model<double>(a_trav.model);
      auto image = load_image_any(a_trav.image);
      attribute_sets sets;
      sets.factor = a_trav.factor;
      sets.positive = load_latent_dir(a_trav.pos, a_trav.factor);
      sets.negative = load_latent_dir(a_trav.neg, a_trav.factor);
      traversal_config tcfg;
      tcfg.lambda = a_trav.lambda;
      tcfg.mode = a_trav.mode;
      tcfg.kernel_bandwidth = a_trav.bandwidth;
      std::map<std::string, attribute_sets> by_factor{{a_trav.factor, sets}};
      auto edited = edit_and_decode(model, image, {a_trav.factor}, by_factor, tcfg);
      fs::create_directories(a_trav.out);
      save_image(clamped_display(edited), a_trav.out + "/edited.png", 16);
      write_resolved_config(cfg, a_trav.out);
      std::printf("%s/edited.png\n", a_trav.out.c_str());
    } else if (*c_gc) {
      auto results = run_gradient_suite(uint64_t(a_gc.seed), a_gc.samples, true,
                                        !a_gc.skip_fp32);
      bool ok = true;
      for (const auto& r : results) {
        double threshold = r.layer == "toynet_fp32" ? 1e-4
                           : r.layer == "solver_objective" ? 1e-5
                                                           : 1e-6;
        const bool pass = r.max_rel_err < threshold;
        ok = ok && pass;
        std::printf("%-18s max_rel_err=%.3e samples=%-6d [%s]\n", r.layer.c_str(),
                    r.max_rel_err, r.samples, pass ? "ok" : "FAIL");
      }
      return ok ? 0 : 1;
    }
  } catch (const validation_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
