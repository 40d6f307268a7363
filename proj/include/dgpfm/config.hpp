#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgpfm/data.hpp"
#include "dgpfm/inference.hpp"
#include "dgpfm/model.hpp"
#include "dgpfm/quadrature.hpp"

// Strict JSON run configuration. Unknown keys anywhere are fatal so sweep
// scripts cannot silently misspell a field. Every field has a default; a
// minimal config needs only the data source.
//
// Schema (defaults in parentheses):
//   data:   path ("")            load a DGFM container instead of generating
//           task ("")            antiderivative | burgers1d | poisson2d
//           n (64)               generated instances
//           grid (64)            generator grid resolution
//           seed (0)             generator seed
//           keep_in (1.0)        retained fraction of input locations
//           keep_out (1.0)       retained fraction of output locations
//           noise_sd (0.0)       observation noise added to retained inputs
//           independent_masks (true)
//           nu (0.1)             viscosity for burgers1d
//           normalize (true)     z-score values / unit-box locations
//   grid:   rules (["gauss_legendre"])  per-dimension rule kinds
//           nodes ([32])         per-dimension node counts
//           ft_modes ([])        default retained modes for fourier layers
//   model:  channels (8)
//           layers ([...])       see below; default quad, activation, quad
//           input_kernel ("matern52")    string or array for a weighted sum
//           interp_kernel ("matern52")
//           weight_penalty (0.0)
//           mean_field (false)
//   train:  batch (32), epochs (100), lr_max (1e-3), lr_min (1e-5),
//           cycle_epochs (0), seed (0), samples (1), adam_beta1 (0.9),
//           adam_beta2 (0.999), adam_eps (1e-8), val_fraction (0.1),
//           val_samples (16), threads (1), init_seed (0)
//   eval:   samples (128), include_noise (true), moment_matched (false)
//   output: directory ("out")
//
// layers entries:
//   {"type": "quadrature"} | {"type": "dense"}
//   {"type": "fourier", "modes": [m per dim]}         (grid.ft_modes default)
//   {"type": "activation", "inducing": s, "kernel": "se"}

namespace dgpfm {

struct DataConfig {
  std::string path;
  std::string task;
  int n = 64;
  int grid = 64;
  uint64_t seed = 0;
  double keep_in = 1.0;
  double keep_out = 1.0;
  double noise_sd = 0.0;
  bool independent_masks = true;
  double nu = 0.1;
  bool normalize = true;
};

struct GridConfig {
  std::vector<std::string> rules{"gauss_legendre"};
  std::vector<int> nodes{32};
  std::vector<int> ft_modes;
};

struct LayerConfig {
  std::string type = "quadrature";
  std::vector<int> modes;
  int inducing = 32;
  std::string kernel = "se";
};

struct ModelConfig {
  int channels = 8;
  std::vector<LayerConfig> layers{{"quadrature", {}, 32, "se"},
                                  {"activation", {}, 32, "se"},
                                  {"quadrature", {}, 32, "se"}};
  std::vector<std::string> input_kernel{"matern52"};
  std::vector<std::string> interp_kernel{"matern52"};
  double weight_penalty = 0.0;
  bool mean_field = false;
};

struct EvalConfig {
  int samples = 128;
  bool include_noise = true;
  bool moment_matched = false;
};

struct RunConfig {
  DataConfig data;
  GridConfig grid;
  ModelConfig model;
  TrainConfig train;
  uint64_t init_seed = 0;
  EvalConfig eval;
  std::string output = "out";
  std::string raw;  // the verbatim text, echoed for provenance
};

namespace cfg_detail {

using nlohmann::json;

inline void expect_keys(const json& j, const std::string& where,
                        std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw format_error("section '" + where + "' must be an object", 0);
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (item.key() == a) ok = true;
    if (!ok) throw format_error("unknown key '" + item.key() + "' in " + where, 0);
  }
}

template <typename T>
inline void maybe(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

inline std::vector<std::string> kernel_names(const json& j, const std::string& where) {
  if (j.is_string()) return {j.get<std::string>()};
  if (j.is_array()) {
    std::vector<std::string> out = j.get<std::vector<std::string>>();
    if (out.empty()) throw format_error(where + ": empty kernel list", 0);
    return out;
  }
  throw format_error(where + ": kernel must be a string or an array of strings", 0);
}

inline KernelFamily family_of(const std::string& s, const std::string& where) {
  if (s == "se") return KernelFamily::SquaredExponential;
  if (s == "matern52") return KernelFamily::Matern52;
  if (s == "matern132") return KernelFamily::Matern132;
  throw format_error(where + ": unknown kernel family '" + s + "'", 0);
}

inline KernelSpec kernel_spec_of(const std::vector<std::string>& names, int d,
                                 const std::string& where) {
  if (names.size() == 1) return make_kernel(family_of(names[0], where), d);
  std::vector<KernelFamily> fams;
  for (const std::string& s : names) fams.push_back(family_of(s, where));
  return make_weighted(fams, d);
}

}  // namespace cfg_detail

inline RunConfig parse_run_config_text(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw format_error(std::string("config is not valid JSON: ") + e.what(), 0);
  }
  cfg_detail::expect_keys(j, "config", {"data", "grid", "model", "train", "eval", "output"});

  RunConfig rc;
  rc.raw = text;
  if (j.contains("data")) {
    const json& d = j.at("data");
    cfg_detail::expect_keys(d, "data",
                            {"path", "task", "n", "grid", "seed", "keep_in", "keep_out",
                             "noise_sd", "independent_masks", "nu", "normalize"});
    cfg_detail::maybe(d, "path", rc.data.path);
    cfg_detail::maybe(d, "task", rc.data.task);
    cfg_detail::maybe(d, "n", rc.data.n);
    cfg_detail::maybe(d, "grid", rc.data.grid);
    cfg_detail::maybe(d, "seed", rc.data.seed);
    cfg_detail::maybe(d, "keep_in", rc.data.keep_in);
    cfg_detail::maybe(d, "keep_out", rc.data.keep_out);
    cfg_detail::maybe(d, "noise_sd", rc.data.noise_sd);
    cfg_detail::maybe(d, "independent_masks", rc.data.independent_masks);
    cfg_detail::maybe(d, "nu", rc.data.nu);
    cfg_detail::maybe(d, "normalize", rc.data.normalize);
    if (!rc.data.path.empty() && !rc.data.task.empty())
      throw format_error("data: give either 'path' or 'task', not both", 0);
  }
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    cfg_detail::expect_keys(g, "grid", {"rules", "nodes", "ft_modes"});
    cfg_detail::maybe(g, "rules", rc.grid.rules);
    cfg_detail::maybe(g, "nodes", rc.grid.nodes);
    cfg_detail::maybe(g, "ft_modes", rc.grid.ft_modes);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    cfg_detail::expect_keys(m, "model",
                            {"channels", "layers", "input_kernel", "interp_kernel",
                             "weight_penalty", "mean_field"});
    cfg_detail::maybe(m, "channels", rc.model.channels);
    if (m.contains("input_kernel"))
      rc.model.input_kernel = cfg_detail::kernel_names(m.at("input_kernel"), "model.input_kernel");
    if (m.contains("interp_kernel"))
      rc.model.interp_kernel =
          cfg_detail::kernel_names(m.at("interp_kernel"), "model.interp_kernel");
    cfg_detail::maybe(m, "weight_penalty", rc.model.weight_penalty);
    cfg_detail::maybe(m, "mean_field", rc.model.mean_field);
    if (m.contains("layers")) {
      rc.model.layers.clear();
      for (const auto& jl : m.at("layers")) {
        cfg_detail::expect_keys(jl, "model.layers[]", {"type", "modes", "inducing", "kernel"});
        LayerConfig lc;
        cfg_detail::maybe(jl, "type", lc.type);
        cfg_detail::maybe(jl, "modes", lc.modes);
        cfg_detail::maybe(jl, "inducing", lc.inducing);
        cfg_detail::maybe(jl, "kernel", lc.kernel);
        rc.model.layers.push_back(std::move(lc));
      }
    }
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    cfg_detail::expect_keys(
        t, "train",
        {"batch", "epochs", "lr_max", "lr_min", "cycle_epochs", "seed", "samples", "adam_beta1",
         "adam_beta2", "adam_eps", "val_fraction", "val_samples", "threads", "init_seed"});
    cfg_detail::maybe(t, "batch", rc.train.batch);
    cfg_detail::maybe(t, "epochs", rc.train.epochs);
    cfg_detail::maybe(t, "lr_max", rc.train.lr_max);
    cfg_detail::maybe(t, "lr_min", rc.train.lr_min);
    cfg_detail::maybe(t, "cycle_epochs", rc.train.cycle_epochs);
    cfg_detail::maybe(t, "seed", rc.train.seed);
    cfg_detail::maybe(t, "samples", rc.train.samples);
    cfg_detail::maybe(t, "adam_beta1", rc.train.adam_beta1);
    cfg_detail::maybe(t, "adam_beta2", rc.train.adam_beta2);
    cfg_detail::maybe(t, "adam_eps", rc.train.adam_eps);
    cfg_detail::maybe(t, "val_fraction", rc.train.val_fraction);
    cfg_detail::maybe(t, "val_samples", rc.train.val_samples);
    cfg_detail::maybe(t, "threads", rc.train.threads);
    cfg_detail::maybe(t, "init_seed", rc.init_seed);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    cfg_detail::expect_keys(e, "eval", {"samples", "include_noise", "moment_matched"});
    cfg_detail::maybe(e, "samples", rc.eval.samples);
    cfg_detail::maybe(e, "include_noise", rc.eval.include_noise);
    cfg_detail::maybe(e, "moment_matched", rc.eval.moment_matched);
  }
  if (j.contains("output")) {
    if (!j.at("output").is_string())
      throw format_error("output: must be a directory string", 0);
    rc.output = j.at("output").get<std::string>();
  }
  return rc;
}

inline RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// Builders from a parsed config.
// ---------------------------------------------------------------------------

inline Dataset build_dataset(const DataConfig& dc) {
  Dataset ds;
  if (!dc.path.empty()) {
    ds = load_dataset(dc.path);
  } else if (dc.task == "antiderivative") {
    ds = gen_antiderivative(dc.n, dc.grid, dc.seed);
  } else if (dc.task == "burgers1d") {
    ds = gen_burgers_1d(dc.n, dc.grid, dc.nu, dc.seed);
  } else if (dc.task == "poisson2d") {
    ds = gen_poisson_2d(dc.n, dc.grid, dc.seed);
  } else if (dc.task.empty()) {
    throw format_error("data: need a 'path' or a 'task'", 0);
  } else {
    throw format_error("data: unknown task '" + dc.task + "'", 0);
  }
  if (dc.keep_in < 1.0 || dc.keep_out < 1.0 || dc.noise_sd > 0.0)
    ds = corrupt(ds, dc.keep_in, dc.keep_out, dc.noise_sd, dc.independent_masks,
                 mix_seed({dc.seed, 0x636f7272}));
  return ds;
}

inline std::vector<Rule1D> build_grid_rules(const GridConfig& gc, int d) {
  auto pick = [&](const auto& v, int j) {
    if (v.empty()) throw format_error("grid: empty per-dimension list", 0);
    return v[static_cast<std::size_t>(std::min<int>(j, static_cast<int>(v.size()) - 1))];
  };
  std::vector<Rule1D> rules;
  for (int j = 0; j < d; ++j) {
    const std::string kind = pick(gc.rules, j);
    const int n = pick(gc.nodes, j);
    RuleKind rk;
    if (kind == "gauss_legendre")
      rk = RuleKind::GaussLegendre;
    else if (kind == "trapezoid")
      rk = RuleKind::Trapezoid;
    else
      throw format_error("grid: unknown rule '" + kind + "'", 0);
    rules.push_back(make_rule(rk, n, 0.0, 1.0));
  }
  return rules;
}

inline ModelSpec build_model_spec(const RunConfig& rc, int d, int d0, int d1) {
  ModelSpec spec;
  spec.d = d;
  spec.d0 = d0;
  spec.d1 = d1;
  spec.channels = rc.model.channels;
  spec.weight_penalty = rc.model.weight_penalty;
  spec.mean_field = rc.model.mean_field;
  spec.input_kernel = cfg_detail::kernel_spec_of(rc.model.input_kernel, d, "model.input_kernel");
  spec.interp_kernel =
      cfg_detail::kernel_spec_of(rc.model.interp_kernel, d, "model.interp_kernel");
  for (const LayerConfig& lc : rc.model.layers) {
    if (lc.type == "quadrature") {
      spec.layers.push_back(LayerDesc::linear(TransformKind::Quadrature));
    } else if (lc.type == "dense") {
      spec.layers.push_back(LayerDesc::linear(TransformKind::Dense));
    } else if (lc.type == "fourier") {
      std::vector<int> modes = lc.modes.empty() ? rc.grid.ft_modes : lc.modes;
      if (static_cast<int>(modes.size()) == 1 && d > 1) modes.resize(static_cast<std::size_t>(d), modes[0]);
      if (modes.empty())
        throw format_error("model: fourier layer needs 'modes' (or grid.ft_modes)", 0);
      spec.layers.push_back(LayerDesc::linear(TransformKind::Fourier, std::move(modes)));
    } else if (lc.type == "activation") {
      spec.layers.push_back(
          LayerDesc::nonlinear(lc.inducing, cfg_detail::family_of(lc.kernel, "model.layers[]")));
    } else {
      throw format_error("model: unknown layer type '" + lc.type + "'", 0);
    }
  }
  spec.validate();
  return spec;
}

}  // namespace dgpfm
