#pragma once

#include <chrono>
#include <cstdint>
#include <vector>

#include "dgpfm/baselines.hpp"
#include "dgpfm/data.hpp"
#include "dgpfm/inference.hpp"
#include "dgpfm/metrics.hpp"
#include "dgpfm/model.hpp"

// Dataset-level evaluation shared by the command-line tool and the
// acceptance suite. Metrics are computed in raw (de-normalized) units.

namespace dgpfm {

struct EvalOptions {
  int samples = 128;
  uint64_t seed = 0;
  bool include_noise = true;    // fold observation noise into the MNLL mixture
  bool moment_matched = false;  // Gaussian summary instead of the mixture
};

namespace eval_detail {

struct Pooled {
  std::vector<double> per_nrmse;
  double nll_sum = 0;
  long nll_cnt = 0;
  long in68 = 0, in95 = 0, total = 0;

  void add(const Mat& mean, const Mat& sd_with_noise, const std::vector<Mat>& samples,
           const Mat& truth, const Vec& noise_var, const EvalOptions& opt) {
    try {
      per_nrmse.push_back(nrmse(mean, truth));
    } catch (const undefined_metric&) {
    }
    long cnt = 0;
    nll_sum += mnll_sum(samples, truth, noise_var, opt.include_noise, opt.moment_matched, &cnt);
    nll_cnt += cnt;
    const double z68 = probit(0.5 * (1.0 + 0.68));
    const double z95 = probit(0.5 * (1.0 + 0.95));
    for (Eigen::Index i = 0; i < truth.rows(); ++i)
      for (Eigen::Index j = 0; j < truth.cols(); ++j) {
        const double dev = std::abs(truth(i, j) - mean(i, j));
        if (dev <= z68 * sd_with_noise(i, j)) ++in68;
        if (dev <= z95 * sd_with_noise(i, j)) ++in95;
        ++total;
      }
  }

  EvalReport report(double seconds) const {
    EvalReport r;
    r.per_instance_nrmse = per_nrmse;
    r.mean_nrmse = per_nrmse.empty() ? std::numeric_limits<double>::quiet_NaN()
                                     : mean_nrmse(per_nrmse);
    r.mean_nll = nll_cnt ? nll_sum / double(nll_cnt) : std::numeric_limits<double>::quiet_NaN();
    r.coverage68 = total ? double(in68) / double(total) : 0.0;
    r.coverage95 = total ? double(in95) / double(total) : 0.0;
    r.seconds = seconds;
    return r;
  }
};

}  // namespace eval_detail

// Evaluates the deep model on a raw dataset. When a Normalization is given,
// inputs are normalized for the model and predictions mapped back before
// scoring; per-instance prediction seeds match the training-loop validation
// scorer, so equal seeds and sample counts reproduce recorded scores.
inline EvalReport evaluate_dgpfm(const ModelSpec& spec, const ProjectionGrid& grid,
                                 const ParamStore& ps, const Dataset& raw,
                                 const Normalization* nz, const EvalOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  eval_detail::Pooled pool;
  for (std::size_t i = 0; i < raw.instances.size(); ++i) {
    FunctionPair inst = raw.instances[i];
    if (nz) inst = apply_normalization(*nz, inst);
    PredictOptions po;
    po.n_samples = opt.samples;
    po.seed = mix_seed({opt.seed, 0x76616c69, static_cast<uint64_t>(i)});
    po.want_sd = true;
    po.add_noise = true;  // coverage always folds observation noise in
    po.keep_samples = true;
    po.mean_only = opt.samples < 2;
    PredictiveSummary pr = predict(spec, grid, ps, inst, po);
    Mat truth = raw.instances[i].y_out;
    Mat mean = pr.mean;
    Mat sd = pr.sd;
    Vec nv = pr.noise_var;
    if (nz) {
      mean = nz->raw_out_mean(mean);
      sd = nz->raw_out_sd(sd);
      for (Mat& s : pr.samples) s = nz->raw_out_mean(s);
      for (Eigen::Index j = 0; j < nv.size(); ++j) nv(j) *= nz->out_sd(j) * nz->out_sd(j);
    }
    pool.add(mean, sd, pr.samples, truth, nv, opt);
  }
  return pool.report(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

// Evaluates the linear baseline: a deterministic mean with a Gaussian
// predictive whose variance is the stored training residual variance.
inline EvalReport evaluate_flr(const FlrModel& m, const Vec& residual_var, const Dataset& raw,
                               const Normalization* nz, const EvalOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  eval_detail::Pooled pool;
  for (std::size_t i = 0; i < raw.instances.size(); ++i) {
    FunctionPair inst = raw.instances[i];
    if (nz) inst = apply_normalization(*nz, inst);
    Mat mean = flr_predict(m, inst.x_in, inst.f_in, inst.x_out);
    Vec nv = residual_var;
    if (nz) {
      mean = nz->raw_out_mean(mean);
      for (Eigen::Index j = 0; j < nv.size(); ++j) nv(j) *= nz->out_sd(j) * nz->out_sd(j);
    }
    Mat sd(mean.rows(), mean.cols());
    for (Eigen::Index j = 0; j < sd.cols(); ++j) sd.col(j).array() = std::sqrt(nv(j));
    std::vector<Mat> samples{mean};
    EvalOptions flr_opt = opt;
    flr_opt.include_noise = true;  // the residual variance is the whole predictive
    pool.add(mean, sd, samples, raw.instances[i].y_out, nv, flr_opt);
  }
  return pool.report(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

}  // namespace dgpfm
