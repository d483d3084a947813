// Run configuration: one JSON document with weights / solver / toynet / synth
// blocks. Unknown keys are rejected; missing keys take the documented
// defaults; the fully resolved config is echoed into every output directory.
//
// The top-level weights block feeds network training. The solver block
// carries its own weights sub-block because per-image optimization ships
// different defaults (w_light, w_albedo_smooth, charbonnier_delta) than the
// training loop.
#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "nfed/losses.hpp"
#include "nfed/solver.hpp"
#include "nfed/toynet.hpp"

namespace nfed {

struct synth_block {
  int count = 16;
  int size = 64;
  uint64_t seed = 1;
};

struct run_config {
  loss_weights weights;  // training objective weights
  solver_config solver;
  toy_config toynet;
  synth_block synth;
};

inline nlohmann::json solver_to_json(const solver_config& s) {
  return nlohmann::json{{"iters", s.max_iters},
                        {"lr_albedo", s.lr_albedo},
                        {"lr_normals", s.lr_normals},
                        {"lr_light", s.lr_light},
                        {"tol", s.tol},
                        {"eps_shading", s.eps_shading},
                        {"albedo_max", s.albedo_max},
                        {"light_refit_every", s.light_refit_every},
                        {"light_fit",
                         {{"tau", s.light_fit.tau},
                          {"lambda_rel", s.light_fit.lambda_rel},
                          {"intensity_floor", s.light_fit.intensity_floor}}},
                        {"bws_mode", s.bws_mode},
                        {"weights", weights_to_json(s.weights)}};
}

inline solver_config solver_from_json(const nlohmann::json& j) {
  solver_config s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "iters") s.max_iters = it.value().get<int>();
    else if (k == "lr_albedo") s.lr_albedo = it.value().get<double>();
    else if (k == "lr_normals") s.lr_normals = it.value().get<double>();
    else if (k == "lr_light") s.lr_light = it.value().get<double>();
    else if (k == "tol") s.tol = it.value().get<double>();
    else if (k == "eps_shading") s.eps_shading = it.value().get<double>();
    else if (k == "albedo_max") s.albedo_max = it.value().get<double>();
    else if (k == "light_refit_every") s.light_refit_every = it.value().get<int>();
    else if (k == "light_fit") {
      for (auto f = it.value().begin(); f != it.value().end(); ++f) {
        if (f.key() == "tau") s.light_fit.tau = f.value().get<double>();
        else if (f.key() == "lambda_rel")
          s.light_fit.lambda_rel = f.value().get<double>();
        else if (f.key() == "intensity_floor")
          s.light_fit.intensity_floor = f.value().get<double>();
        else
          throw validation_error("solver.light_fit: unknown key \"" + f.key() + "\"");
      }
    } else if (k == "bws_mode") s.bws_mode = it.value().get<std::string>();
    else if (k == "weights") {
      // Solver defaults first, explicit keys override.
      nlohmann::json merged = weights_to_json(s.weights);
      for (auto f = it.value().begin(); f != it.value().end(); ++f)
        merged[f.key()] = f.value();
      s.weights = weights_from_json(merged);
    } else {
      throw validation_error("solver: unknown key \"" + k + "\"");
    }
  }
  s.validate();
  return s;
}

inline nlohmann::json synth_to_json(const synth_block& s) {
  return nlohmann::json{{"count", s.count}, {"size", s.size}, {"seed", s.seed}};
}

inline synth_block synth_from_json(const nlohmann::json& j) {
  synth_block s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "count") s.count = it.value().get<int>();
    else if (k == "size") s.size = it.value().get<int>();
    else if (k == "seed") s.seed = it.value().get<uint64_t>();
    else throw validation_error("synth: unknown key \"" + k + "\"");
  }
  return s;
}

inline nlohmann::json run_config_to_json(const run_config& c) {
  return nlohmann::json{{"weights", weights_to_json(c.weights)},
                        {"solver", solver_to_json(c.solver)},
                        {"toynet", toy_config_to_json(c.toynet)},
                        {"synth", synth_to_json(c.synth)}};
}

inline run_config run_config_from_json(const nlohmann::json& j) {
  run_config c;
  // Weights first so the toynet block inherits them.
  if (j.contains("weights")) c.weights = weights_from_json(j["weights"]);
  c.toynet.weights = c.weights;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "weights") continue;
    else if (k == "solver") c.solver = solver_from_json(it.value());
    else if (k == "toynet") {
      const nlohmann::json& block = it.value();
      c.toynet = toy_config_from_json(block);
      if (!block.contains("weights")) c.toynet.weights = c.weights;
    } else if (k == "synth") c.synth = synth_from_json(it.value());
    else throw validation_error("config: unknown top-level key \"" + k + "\"");
  }
  return c;
}

inline run_config load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("config: cannot read " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("config: malformed JSON in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline void write_resolved_config(const run_config& c, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream f(out_dir + "/resolved_config.json");
  if (!f) throw io_error("config: cannot write resolved_config.json in " + out_dir);
  f << run_config_to_json(c).dump(2) << "\n";
}

}  // namespace nfed
