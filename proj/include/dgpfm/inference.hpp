#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "dgpfm/ad.hpp"
#include "dgpfm/data.hpp"
#include "dgpfm/metrics.hpp"
#include "dgpfm/model.hpp"

// Stochastic variational inference for the layered model: a minibatch
// evidence lower bound with reparameterized latent samples, Adam ascent under
// a cyclical cosine learning rate, and a Monte Carlo predictive.

namespace dgpfm {

// ---------------------------------------------------------------------------
// Variational posterior helpers. Each nonlinear layer owns a whitened
// Gaussian posterior: a mean vector and either a packed lower-triangular
// factor (row-major, entry (i,j) at i*(i+1)/2 + j, softplus on the diagonal)
// or, in mean-field form, a raw per-coordinate scale.
// ---------------------------------------------------------------------------

inline Mat lower_from_packed_plain(const Mat& packed, Eigen::Index s) {
  if (packed.cols() != 1 || packed.rows() != s * (s + 1) / 2)
    throw std::invalid_argument("lower_from_packed: packed size mismatch");
  Mat l = Mat::Zero(s, s);
  for (Eigen::Index i = 0; i < s; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      double v = packed(i * (i + 1) / 2 + j, 0);
      l(i, j) = (i == j) ? softplus(v) : v;
    }
  return l;
}

inline ad::Var lower_from_packed(ad::Tape& t, ad::Var packed, Eigen::Index s) {
  Mat l = lower_from_packed_plain(t.val(packed), s);
  ad::Var out = t.push(std::move(l), t.needs_grad(packed));
  t.set_pull(out, [=](ad::Tape& t) {
    if (!t.needs_grad(packed)) return;
    const Mat& g = t.adj(out);
    const Mat& pv = t.val(packed);
    Mat& gp = t.adj(packed);
    for (Eigen::Index i = 0; i < s; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        const Eigen::Index at = i * (i + 1) / 2 + j;
        gp(at, 0) += (i == j) ? g(i, i) * logistic(pv(at, 0)) : g(i, j);
      }
  });
  return out;
}

// One reparameterized draw of the whitened inducing values of a nonlinear
// layer: mu + L eps (or mu + softplus(raw) .* eps in mean-field form).
inline ad::Var latent_sample(ad::Tape& t, const ModelGraph& g, int layer, ad::Var eps) {
  ad::Var mu = g.leaf(param_names::layer_q_mu(layer));
  ad::Var raw = g.leaf(param_names::layer_q_l(layer));
  if (g.spec().mean_field) return ad::add(mu, ad::cwise_mul(ad::cwise_softplus(raw), eps));
  ad::Var l = lower_from_packed(t, raw, t.val(mu).rows());
  return ad::add(mu, ad::matmul(l, eps));
}

inline Mat latent_sample_plain(const ModelSpec& spec, const ParamStore& ps, int layer,
                               const Mat& eps) {
  const Mat& mu = ps.at(param_names::layer_q_mu(layer));
  const Mat& raw = ps.at(param_names::layer_q_l(layer));
  if (spec.mean_field)
    return mu + raw.unaryExpr([](double x) { return softplus(x); }).cwiseProduct(eps);
  return mu + lower_from_packed_plain(raw, mu.rows()) * eps;
}

// KL(q || N(0, I)) for one layer's posterior:
//   0.5 (|mu|^2 + |L|_F^2 - s) - sum log diag L.
inline ad::Var kl_to_standard_normal(ad::Tape& t, const ModelGraph& g, int layer) {
  ad::Var mu = g.leaf(param_names::layer_q_mu(layer));
  ad::Var raw = g.leaf(param_names::layer_q_l(layer));
  const Eigen::Index s = t.val(mu).rows();
  ad::Var mu2 = ad::sum(ad::cwise_square(mu));
  if (g.spec().mean_field) {
    ad::Var sd = ad::cwise_softplus(raw);
    ad::Var s2 = ad::sum(ad::cwise_square(sd));
    ad::Var logs = ad::sum(ad::cwise_log(sd));
    return ad::shift(ad::sub(ad::scale(0.5, ad::add(mu2, s2)), logs), -0.5 * double(s));
  }
  ad::Var l = lower_from_packed(t, raw, s);
  ad::Var fro = ad::sum(ad::cwise_square(l));
  ad::Var logdiag = ad::sum(ad::cwise_log(ad::diag_part(l)));
  return ad::shift(ad::sub(ad::scale(0.5, ad::add(mu2, fro)), logdiag), -0.5 * double(s));
}

inline double kl_value(const Mat& mu, const Mat& raw, bool mean_field) {
  const Eigen::Index s = mu.rows();
  double mu2 = mu.squaredNorm();
  if (mean_field) {
    Mat sd = raw.unaryExpr([](double x) { return softplus(x); });
    return 0.5 * (mu2 + sd.squaredNorm() - double(s)) - sd.array().log().sum();
  }
  Mat l = lower_from_packed_plain(raw, s);
  return 0.5 * (mu2 + l.squaredNorm() - double(s)) - l.diagonal().array().log().sum();
}

// ---------------------------------------------------------------------------
// Minibatch objective. The data term is rescaled by n_total / |batch| so its
// expectation matches the full sum; the KL terms and the optional weight
// penalty enter once, unscaled. Within one (seed, step), each (instance,
// sample) pair owns an independent noise stream keyed by the instance's
// dataset index, so the objective does not depend on batch order; the
// reduction runs in ascending-index order to keep it bitwise so as well.
// ---------------------------------------------------------------------------

struct ElboResult {
  double value = 0;
  Vec grad;  // flat, in parameter-store order; empty unless requested
};

namespace detail {

inline Vec flatten_leaf_grads(ad::Tape& t, const ModelGraph& g, const ParamStore& ps) {
  Vec out(ps.scalar_count());
  Eigen::Index at = 0;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    Mat gk = t.grad(g.leaves()[k]);
    out.segment(at, gk.size()) = Eigen::Map<const Vec>(gk.data(), gk.size());
    at += gk.size();
  }
  return out;
}

inline std::vector<int> shuffled_indices(const std::vector<int>& base, uint64_t seed) {
  std::vector<int> idx = base;
  uint64_t s = seed;
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(splitmix64(s) % static_cast<uint64_t>(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace detail

inline ElboResult elbo_and_grad(const ModelSpec& spec, const ProjectionGrid& grid,
                                const ParamStore& ps, const Dataset& ds,
                                const std::vector<int>& batch, Eigen::Index n_total,
                                uint64_t seed, uint64_t step, int samples, bool want_grad,
                                int threads = 1) {
  spec.validate();
  if (batch.empty()) throw std::invalid_argument("elbo: empty batch");
  if (samples < 1) throw std::invalid_argument("elbo: need at least one sample");
  if (n_total < static_cast<Eigen::Index>(batch.size()))
    throw std::invalid_argument("elbo: n_total smaller than the batch");
  const double data_scale = double(n_total) / double(batch.size());

  const std::size_t b = batch.size();
  std::vector<double> values(b, 0.0);
  std::vector<Vec> grads(want_grad ? b : 0);
  std::vector<std::exception_ptr> errors(b);

  auto run_instance = [&](std::size_t slot) {
    const int idx = batch[slot];
    const FunctionPair& inst = ds.instances.at(static_cast<std::size_t>(idx));
    ad::Tape t;
    ModelGraph g(t, spec, grid, ps, want_grad);
    std::vector<ad::Var> terms;
    terms.reserve(static_cast<std::size_t>(samples));
    for (int s = 0; s < samples; ++s) {
      NormalSource noise(
          mix_seed({seed, step, static_cast<uint64_t>(idx), static_cast<uint64_t>(s), 0x656c626f}));
      std::vector<ad::Var> etas;
      for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        if (spec.layers[l].is_linear) continue;
        ad::Var eps = t.constant(noise.draw_matrix(spec.layers[l].inducing, 1));
        etas.push_back(latent_sample(t, g, static_cast<int>(l), eps));
      }
      ModelGraph::Fwd fwd = g.forward(inst, etas, noise, ForwardMode::Train);
      terms.push_back(ad::add(g.log_likelihood(fwd.u, inst.y_out), fwd.logp_input));
    }
    ad::Var root = ad::scale(data_scale / double(samples), ad::add_n(terms));
    values[slot] = t.val(root)(0, 0);
    if (want_grad) {
      t.backward(root);
      grads[slot] = detail::flatten_leaf_grads(t, g, ps);
    }
  };

  if (threads <= 1 || b == 1) {
    for (std::size_t slot = 0; slot < b; ++slot) run_instance(slot);
  } else {
    std::atomic<std::size_t> next{0};
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), b);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&]() {
        for (std::size_t slot = next.fetch_add(1); slot < b; slot = next.fetch_add(1)) {
          try {
            run_instance(slot);
          } catch (...) {
            errors[slot] = std::current_exception();
          }
        }
      });
    for (std::thread& th : pool) th.join();
    for (const std::exception_ptr& e : errors)
      if (e) std::rethrow_exception(e);
  }

  // Reduce in ascending dataset-index order: invariant to batch permutation.
  std::vector<std::size_t> order(b);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t c) { return batch[a] < batch[c]; });

  ElboResult res;
  if (want_grad) res.grad = Vec::Zero(ps.scalar_count());
  for (std::size_t slot : order) {
    res.value += values[slot];
    if (want_grad) res.grad += grads[slot];
  }

  if (spec.nonlinear_count() > 0 || spec.weight_penalty > 0) {
    ad::Tape t;
    ModelGraph g(t, spec, grid, ps, want_grad);
    std::vector<ad::Var> parts;
    for (std::size_t l = 0; l < spec.layers.size(); ++l)
      if (!spec.layers[l].is_linear)
        parts.push_back(kl_to_standard_normal(t, g, static_cast<int>(l)));
    if (spec.weight_penalty > 0)
      parts.push_back(ad::scale(0.5 * spec.weight_penalty, g.weight_square_norm()));
    ad::Var root = ad::add_n(parts);
    res.value -= t.val(root)(0, 0);
    if (want_grad) {
      t.backward(root);
      res.grad -= detail::flatten_leaf_grads(t, g, ps);
    }
  }
  return res;
}

inline double elbo_value(const ModelSpec& spec, const ProjectionGrid& grid, const ParamStore& ps,
                         const Dataset& ds, const std::vector<int>& batch, Eigen::Index n_total,
                         uint64_t seed, uint64_t step, int samples, int threads = 1) {
  return elbo_and_grad(spec, grid, ps, ds, batch, n_total, seed, step, samples, false, threads)
      .value;
}

// ---------------------------------------------------------------------------
// Monte Carlo predictive: independent latent and field draws per sample,
// summarized by the ensemble mean and (optionally) a spread with the
// observation noise folded in quadrature.
// ---------------------------------------------------------------------------

struct PredictOptions {
  int n_samples = 128;
  uint64_t seed = 0;
  bool want_sd = true;
  bool add_noise = true;      // fold observation noise into the spread
  bool keep_samples = false;  // retain the raw ensemble members
  bool mean_only = false;     // deterministic propagation of posterior means
};

struct PredictiveSummary {
  Mat mean;                  // (n_out x d1)
  Mat sd;                    // same shape, empty unless requested
  std::vector<Mat> samples;  // raw members, without observation noise
  Vec noise_var;             // (d1) observation-noise variances
};

inline PredictiveSummary predict(const ModelSpec& spec, const ProjectionGrid& grid,
                                 const ParamStore& ps, const FunctionPair& inst,
                                 const PredictOptions& opt = {}) {
  spec.validate();
  PredictiveSummary out;
  out.noise_var = (ps.at("out_noise").unaryExpr([](double x) { return softplus(x); }).array() +
                   1e-8)
                      .matrix()
                      .col(0);

  if (opt.mean_only) {
    ad::Tape t;
    ModelGraph g(t, spec, grid, ps, false);
    NormalSource noise(mix_seed({opt.seed, 0x70726564}));
    std::vector<ad::Var> etas;
    for (std::size_t l = 0; l < spec.layers.size(); ++l)
      if (!spec.layers[l].is_linear)
        etas.push_back(g.leaf(param_names::layer_q_mu(static_cast<int>(l))));
    ModelGraph::Fwd fwd = g.forward(inst, etas, noise, ForwardMode::PredictMean);
    out.mean = t.val(fwd.u);
    if (opt.want_sd) {
      out.sd = Mat::Zero(out.mean.rows(), out.mean.cols());
      if (opt.add_noise)
        for (Eigen::Index j = 0; j < out.sd.cols(); ++j)
          out.sd.col(j).array() = std::sqrt(out.noise_var(j));
    }
    if (opt.keep_samples) out.samples.push_back(out.mean);
    return out;
  }

  if (opt.n_samples < 1) throw std::invalid_argument("predict: need at least one sample");
  if (opt.want_sd && opt.n_samples < 2)
    throw std::invalid_argument("predict: a spread needs at least two samples");

  Mat sum, sumsq;
  for (int s = 0; s < opt.n_samples; ++s) {
    ad::Tape t;
    ModelGraph g(t, spec, grid, ps, false);
    NormalSource noise(mix_seed({opt.seed, static_cast<uint64_t>(s), 0x70726564}));
    std::vector<ad::Var> etas;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
      if (spec.layers[l].is_linear) continue;
      Mat eps = noise.draw_matrix(spec.layers[l].inducing, 1);
      etas.push_back(t.constant(latent_sample_plain(spec, ps, static_cast<int>(l), eps)));
    }
    ModelGraph::Fwd fwd = g.forward(inst, etas, noise, ForwardMode::PredictSample);
    Mat u = t.val(fwd.u);
    if (s == 0) {
      sum = Mat::Zero(u.rows(), u.cols());
      sumsq = Mat::Zero(u.rows(), u.cols());
    }
    sum += u;
    sumsq += u.cwiseProduct(u);
    if (opt.keep_samples) out.samples.push_back(std::move(u));
  }
  out.mean = sum / double(opt.n_samples);
  if (opt.want_sd) {
    Mat var = (sumsq - double(opt.n_samples) * out.mean.cwiseProduct(out.mean)) /
              double(opt.n_samples - 1);
    var = var.cwiseMax(0.0);
    if (opt.add_noise)
      for (Eigen::Index j = 0; j < var.cols(); ++j) var.col(j).array() += out.noise_var(j);
    out.sd = var.cwiseSqrt();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training: Adam ascent on the minibatch objective under a cyclical cosine
// learning rate, with a held-out slice scored each epoch.
// ---------------------------------------------------------------------------

struct TrainConfig {
  int batch = 32;
  int epochs = 100;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  int cycle_epochs = 0;  // 0: one cycle spanning the whole run
  uint64_t seed = 0;
  int samples = 1;  // objective samples per instance
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double val_fraction = 0.1;
  int val_samples = 16;
  int threads = 1;

  void validate() const {
    if (batch < 1) throw std::invalid_argument("train: batch must be positive");
    if (epochs < 0) throw std::invalid_argument("train: epochs must be nonnegative");
    if (samples < 1) throw std::invalid_argument("train: samples must be positive");
    if (!(lr_max >= 0) || !(lr_min >= 0) || lr_min > lr_max)
      throw std::invalid_argument("train: need 0 <= lr_min <= lr_max");
    if (cycle_epochs < 0) throw std::invalid_argument("train: cycle length must be nonnegative");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
      throw std::invalid_argument("train: Adam betas must lie in [0,1)");
    if (!(adam_eps > 0)) throw std::invalid_argument("train: Adam epsilon must be positive");
    if (!(val_fraction >= 0 && val_fraction < 1))
      throw std::invalid_argument("train: validation fraction must lie in [0,1)");
    if (val_samples < 1) throw std::invalid_argument("train: validation samples must be positive");
    if (threads < 1) throw std::invalid_argument("train: threads must be positive");
  }
};

inline double cosine_lr(uint64_t step, uint64_t cycle_steps, double lr_max, double lr_min) {
  const double phase = double(step % cycle_steps) / double(cycle_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(kPi * phase));
}

struct AdamState {
  Vec m, v;
  long t = 0;
  explicit AdamState(Eigen::Index n) : m(Vec::Zero(n)), v(Vec::Zero(n)) {}
  // Ascent step along the gradient.
  void step(Vec& theta, const Vec& g, double lr, double b1, double b2, double eps) {
    ++t;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1, double(t));
    const double c2 = 1.0 - std::pow(b2, double(t));
    theta.array() += lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

struct EpochRecord {
  int epoch = 0;
  double mean_elbo = 0;
  double val_nrmse = 0;
  double val_mnll = 0;
  double lr = 0;
  double seconds = 0;
};

// Deliberately omits wall-clock timings so the file is identical across
// equal-seed runs; timings stay in the in-memory records and the log stream.
inline void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
  os.precision(17);
  os << "epoch,mean_elbo,val_nrmse,val_mnll,lr\n";
  for (const EpochRecord& r : history)
    os << r.epoch << "," << r.mean_elbo << "," << r.val_nrmse << "," << r.val_mnll << "," << r.lr
       << "\n";
}

struct TrainResult {
  ParamStore params;  // after the last completed step
  ParamStore best;    // lowest validation NRMSE
  double best_nrmse = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::vector<EpochRecord> history;
  bool aborted = false;
  std::string abort_reason;
};

// Trains on `ds` (already normalized if a Normalization is supplied;
// `denorm` maps predictions back to raw units for the validation metrics).
inline TrainResult train(const ModelSpec& spec, const ProjectionGrid& grid, ParamStore ps,
                         const Dataset& ds, const TrainConfig& cfg,
                         const Normalization* denorm = nullptr, std::ostream* log = nullptr) {
  spec.validate();
  cfg.validate();
  const int n = static_cast<int>(ds.instances.size());
  if (n < 1) throw std::invalid_argument("train: empty dataset");

  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  std::vector<int> mixed = detail::shuffled_indices(all, mix_seed({cfg.seed, 0x73706c74}));
  int n_val = 0;
  if (cfg.val_fraction > 0 && n > 1) {
    n_val = static_cast<int>(std::llround(cfg.val_fraction * n));
    n_val = std::max(1, std::min(n_val, n - 1));
  }
  std::vector<int> val_idx(mixed.begin(), mixed.begin() + n_val);
  std::vector<int> train_idx(mixed.begin() + n_val, mixed.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  if (val_idx.empty()) val_idx = train_idx;  // score on the training slice

  const int n_train = static_cast<int>(train_idx.size());
  const int batch = std::min(cfg.batch, n_train);
  const uint64_t steps_per_epoch = static_cast<uint64_t>((n_train + batch - 1) / batch);
  const uint64_t cycle_steps = std::max<uint64_t>(
      1, steps_per_epoch * static_cast<uint64_t>(cfg.cycle_epochs > 0 ? cfg.cycle_epochs
                                                                      : std::max(cfg.epochs, 1)));

  TrainResult res;
  res.best = ps;
  AdamState adam(ps.scalar_count());
  Vec theta = ps.flatten();
  uint64_t global_step = 0;

  // Per-instance prediction seeds do not depend on the epoch: every epoch is
  // scored under the same noise pattern (lower-variance epoch ranking), and
  // an external evaluation with the same seed and sample count reproduces the
  // recorded score exactly.
  auto score_validation = [&](double* out_nrmse, double* out_mnll) {
    double nr_sum = 0;
    int nr_cnt = 0;
    double nll_sum = 0;
    long nll_cnt = 0;
    for (int i : val_idx) {
      const FunctionPair& inst = ds.instances[static_cast<std::size_t>(i)];
      PredictOptions po;
      po.n_samples = cfg.val_samples;
      po.seed = mix_seed({cfg.seed, 0x76616c69, static_cast<uint64_t>(i)});
      po.want_sd = false;
      po.keep_samples = true;
      PredictiveSummary pr = predict(spec, grid, ps, inst, po);
      Mat truth = inst.y_out;
      Mat mean = pr.mean;
      Vec nv = pr.noise_var;
      if (denorm) {
        truth = denorm->raw_out_mean(truth);
        mean = denorm->raw_out_mean(mean);
        for (Mat& s : pr.samples) s = denorm->raw_out_mean(s);
        for (Eigen::Index j = 0; j < nv.size(); ++j)
          nv(j) *= denorm->out_sd(j) * denorm->out_sd(j);
      }
      try {
        nr_sum += nrmse(mean, truth);
        ++nr_cnt;
      } catch (const undefined_metric&) {
      }
      long cnt = 0;
      nll_sum += mnll_sum(pr.samples, truth, nv, true, false, &cnt);
      nll_cnt += cnt;
    }
    *out_nrmse = nr_cnt ? nr_sum / nr_cnt : std::numeric_limits<double>::quiet_NaN();
    *out_mnll = nll_cnt ? nll_sum / double(nll_cnt) : std::numeric_limits<double>::quiet_NaN();
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order =
        detail::shuffled_indices(train_idx, mix_seed({cfg.seed, 0x73687566,
                                                      static_cast<uint64_t>(epoch)}));
    double elbo_sum = 0;
    double epoch_lr = cosine_lr(global_step, cycle_steps, cfg.lr_max, cfg.lr_min);
    uint64_t steps = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch)) {
      std::vector<int> slice(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() +
                                 static_cast<std::ptrdiff_t>(
                                     std::min(at + static_cast<std::size_t>(batch), order.size())));
      const double lr = cosine_lr(global_step, cycle_steps, cfg.lr_max, cfg.lr_min);
      if (at == 0) epoch_lr = lr;
      ElboResult r;
      try {
        r = elbo_and_grad(spec, grid, ps, ds, slice, n_train, cfg.seed, global_step, cfg.samples,
                          true, cfg.threads);
      } catch (const numerical_failure& e) {
        res.aborted = true;
        res.abort_reason = std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")";
        res.params = ps;
        return res;
      }
      if (!std::isfinite(r.value) || !r.grad.allFinite()) {
        res.aborted = true;
        res.abort_reason = "non-finite objective (epoch " + std::to_string(epoch) + ")";
        res.params = ps;
        return res;
      }
      adam.step(theta, r.grad, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
      ps.unflatten(theta);
      elbo_sum += r.value;
      ++global_step;
      ++steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_elbo = elbo_sum / double(steps);
    rec.lr = epoch_lr;
    score_validation(&rec.val_nrmse, &rec.val_mnll);
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(rec);
    if (std::isfinite(rec.val_nrmse) && rec.val_nrmse < res.best_nrmse) {
      res.best_nrmse = rec.val_nrmse;
      res.best_epoch = epoch;
      res.best = ps;
    }
    if (log) {
      log->precision(6);
      (*log) << "epoch " << epoch << "  elbo " << rec.mean_elbo << "  val_nrmse " << rec.val_nrmse
             << "  val_mnll " << rec.val_mnll << "  lr " << rec.lr << "  (" << rec.seconds
             << "s)\n";
    }
  }
  res.params = ps;
  if (res.best_epoch < 0) res.best = ps;
  return res;
}

}  // namespace dgpfm
