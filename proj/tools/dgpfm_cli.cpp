// Command-line front end: generate benchmark datasets, train a model from a
// JSON config, evaluate a checkpoint against a dataset, and export per-instance
// predictions.
//
// Exit codes: 0 success, 2 usage or argument errors, 3 numerical or data
// generation failures, 4 malformed files or I/O errors.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dgpfm/checkpoint.hpp"
#include "dgpfm/config.hpp"
#include "dgpfm/evaluate.hpp"

namespace fs = std::filesystem;
using namespace dgpfm;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct GenerateArgs {
  std::string task;
  int n = 64;
  int grid = 64;
  uint64_t seed = 0;
  double keep_in = 1.0;
  double keep_out = 1.0;
  double noise_sd = 0.0;
  bool shared_masks = false;
  double nu = 0.1;
  std::string out;
};

int cmd_generate(const GenerateArgs& a) {
  DataConfig dc;
  dc.task = a.task;
  dc.n = a.n;
  dc.grid = a.grid;
  dc.seed = a.seed;
  dc.keep_in = a.keep_in;
  dc.keep_out = a.keep_out;
  dc.noise_sd = a.noise_sd;
  dc.independent_masks = !a.shared_masks;
  dc.nu = a.nu;
  Dataset ds = build_dataset(dc);
  if (const fs::path dir = fs::path(a.out).parent_path(); !dir.empty())
    fs::create_directories(dir);
  save_dataset(ds, a.out);
  std::cout << "wrote " << ds.instances.size() << " instances (d=" << ds.d << ", d0=" << ds.d0
            << ", d1=" << ds.d1 << ") to " << a.out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path) {
  RunConfig rc = parse_run_config(config_path);
  Dataset raw = build_dataset(rc.data);

  std::optional<Normalization> nz;
  Dataset ds = raw;
  if (rc.data.normalize) {
    nz = fit_normalization(raw);
    ds = apply_normalization(*nz, raw);
  }

  std::vector<Rule1D> rules = build_grid_rules(rc.grid, ds.d);
  ProjectionGrid grid = tensor_grid(rules);
  ModelSpec spec = build_model_spec(rc, ds.d, ds.d0, ds.d1);
  ParamStore init = init_params(spec, grid, rc.init_seed);

  TrainResult res = train(spec, grid, std::move(init), ds, rc.train,
                          nz ? &*nz : nullptr, &std::cerr);

  fs::create_directories(rc.output);
  write_text((fs::path(rc.output) / "config.json").string(), rc.raw);
  {
    std::ofstream h(fs::path(rc.output) / "history.csv", std::ios::binary);
    if (!h) throw std::runtime_error("cannot open history.csv for writing");
    write_history_csv(h, res.history);
  }
  save_checkpoint((fs::path(rc.output) / "final.ckpt").string(),
                  make_dgpfm_checkpoint(spec, rules, res.params, nz));
  save_checkpoint((fs::path(rc.output) / "best.ckpt").string(),
                  make_dgpfm_checkpoint(spec, rules, res.best, nz));

  if (res.aborted) {
    std::cerr << "training aborted: " << res.abort_reason << "\n";
    std::cerr << "partial artifacts written to " << rc.output << "\n";
    return 3;
  }
  if (!res.history.empty()) {
    const EpochRecord& last = res.history.back();
    std::cout << "final epoch " << last.epoch << ": elbo " << last.mean_elbo << ", val_nrmse "
              << last.val_nrmse << ", val_mnll " << last.val_mnll << "\n";
    std::cout << "best val_nrmse " << res.best_nrmse << " at epoch " << res.best_epoch << "\n";
  }
  std::cout << "artifacts written to " << rc.output << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  int samples = 128;
  uint64_t seed = 0;
  bool no_noise = false;
  bool moment_matched = false;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  Checkpoint c = load_checkpoint(a.checkpoint);
  Dataset raw = load_dataset(a.data);
  const Normalization* nz = c.normalization ? &*c.normalization : nullptr;

  EvalOptions opt;
  opt.samples = a.samples;
  opt.seed = a.seed;
  opt.include_noise = !a.no_noise;
  opt.moment_matched = a.moment_matched;

  EvalReport rep;
  if (c.kind == "dgpfm") {
    rep = evaluate_dgpfm(c.model, checkpoint_grid(c), c.params, raw, nz, opt);
  } else {
    rep = evaluate_flr(c.flr, flr_checkpoint_residual(c), raw, nz, opt);
  }

  const std::string js = report_json(rep);
  std::cout << js << "\n";
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text((fs::path(a.out) / "report.json").string(), js + "\n");
    write_text((fs::path(a.out) / "report.csv").string(), report_csv(rep));
  }
  return 0;
}

struct PredictArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  int samples = 128;
  uint64_t seed = 0;
  bool mean_only = false;
  bool no_noise = false;
};

int cmd_predict(const PredictArgs& a) {
  Checkpoint c = load_checkpoint(a.checkpoint);
  Dataset raw = load_dataset(a.data);
  const Normalization* nz = c.normalization ? &*c.normalization : nullptr;
  fs::create_directories(a.out);

  ProjectionGrid grid;
  if (c.kind == "dgpfm") grid = checkpoint_grid(c);
  Vec flr_var;
  if (c.kind == "flr") flr_var = flr_checkpoint_residual(c);

  for (std::size_t i = 0; i < raw.instances.size(); ++i) {
    FunctionPair inst = raw.instances[i];
    if (nz) inst = apply_normalization(*nz, inst);

    Mat mean, sd;
    if (c.kind == "dgpfm") {
      PredictOptions po;
      po.n_samples = a.samples;
      po.seed = mix_seed({a.seed, 0x70726564, static_cast<uint64_t>(i)});
      po.add_noise = !a.no_noise;
      po.mean_only = a.mean_only || a.samples < 2;
      po.want_sd = true;
      PredictiveSummary pr = predict(c.model, grid, c.params, inst, po);
      mean = pr.mean;
      sd = pr.sd;
    } else {
      mean = flr_predict(c.flr, inst.x_in, inst.f_in, inst.x_out);
      sd = Mat(mean.rows(), mean.cols());
      for (Eigen::Index j = 0; j < sd.cols(); ++j) sd.col(j).array() = std::sqrt(flr_var(j));
    }
    if (nz) {
      mean = nz->raw_out_mean(mean);
      sd = nz->raw_out_sd(sd);
    }

    char name[32];
    std::snprintf(name, sizeof(name), "instance_%04zu.csv", i);
    std::ostringstream os;
    os.precision(17);
    for (int j = 0; j < raw.d; ++j) os << "x" << (j + 1) << ",";
    os << "component,truth,pred_mean,pred_sd\n";
    const Mat& x = raw.instances[i].x_out;
    const Mat& truth = raw.instances[i].y_out;
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      for (Eigen::Index jc = 0; jc < truth.cols(); ++jc) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) os << x(r, j) << ",";
        os << jc << "," << truth(r, jc) << "," << mean(r, jc) << "," << sd(r, jc) << "\n";
      }
    write_text((fs::path(a.out) / name).string(), os.str());
  }
  std::cout << "wrote " << raw.instances.size() << " prediction files to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning mappings between function spaces with calibrated uncertainty"};
  app.require_subcommand(1);

  GenerateArgs ga;
  CLI::App* gen = app.add_subcommand("generate", "Generate a benchmark dataset");
  gen->add_option("--task", ga.task, "antiderivative | burgers1d | poisson2d")->required();
  gen->add_option("--n", ga.n, "number of instances");
  gen->add_option("--grid", ga.grid, "generator grid resolution per dimension");
  gen->add_option("--seed", ga.seed, "generator seed");
  gen->add_option("--keep-in", ga.keep_in, "retained fraction of input locations");
  gen->add_option("--keep-out", ga.keep_out, "retained fraction of output locations");
  gen->add_option("--noise-sd", ga.noise_sd, "observation noise on retained inputs");
  gen->add_flag("--shared-masks", ga.shared_masks, "same sampling mask for every instance");
  gen->add_option("--nu", ga.nu, "viscosity (burgers1d)");
  gen->add_option("--out", ga.out, "output dataset path")->required();

  std::string config_path;
  CLI::App* tr = app.add_subcommand("train", "Train a model from a JSON config");
  tr->add_option("config", config_path, "path to run configuration")->required();

  EvalArgs ea;
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", ea.checkpoint, "checkpoint path")->required();
  ev->add_option("--data", ea.data, "dataset path")->required();
  ev->add_option("--samples", ea.samples, "posterior samples per instance");
  ev->add_option("--seed", ea.seed, "sampling seed");
  ev->add_flag("--no-noise", ea.no_noise, "exclude observation noise from the likelihood score");
  ev->add_flag("--moment-matched", ea.moment_matched,
               "Gaussian-summary likelihood score instead of the sample mixture");
  ev->add_option("--out", ea.out, "directory for report.json / report.csv");

  PredictArgs pa;
  CLI::App* pr = app.add_subcommand("predict", "Write per-instance prediction CSVs");
  pr->add_option("--checkpoint", pa.checkpoint, "checkpoint path")->required();
  pr->add_option("--data", pa.data, "dataset path")->required();
  pr->add_option("--out", pa.out, "output directory")->required();
  pr->add_option("--samples", pa.samples, "posterior samples per instance");
  pr->add_option("--seed", pa.seed, "sampling seed");
  pr->add_flag("--mean-only", pa.mean_only, "deterministic mean pass, no sampling");
  pr->add_flag("--no-noise", pa.no_noise, "do not fold observation noise into pred_sd");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(ga);
    if (tr->parsed()) return cmd_train(config_path);
    if (ev->parsed()) return cmd_eval(ea);
    if (pr->parsed()) return cmd_predict(pa);
  } catch (const format_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const numerical_failure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const generation_failure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const undefined_metric& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
