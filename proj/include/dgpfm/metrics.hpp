#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "dgpfm/common.hpp"

// Prediction-quality metrics: relative L2 error, sample-ensemble negative
// log-likelihood, and central-interval calibration.

namespace dgpfm {

// Relative L2 error of one instance over all locations and components.
inline double nrmse(const Mat& pred, const Mat& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw std::invalid_argument("nrmse: shape mismatch");
  double denom = truth.norm();
  if (denom <= 0) throw undefined_metric("nrmse: zero-norm truth");
  return (pred - truth).norm() / denom;
}

inline double mean_nrmse(const std::vector<double>& per_instance) {
  if (per_instance.empty()) throw undefined_metric("mean_nrmse: no instances");
  double s = 0;
  for (double v : per_instance) s += v;
  return s / double(per_instance.size());
}

// Negative log-likelihood of each observation under the equally weighted
// Gaussian mixture centered at the ensemble members, summed (not averaged)
// so callers can pool across instances; `count` returns the number of
// scalar observations.
inline double mnll_sum(const std::vector<Mat>& samples, const Mat& truth, const Vec& noise_var,
                       bool include_noise, bool moment_matched, long* count = nullptr) {
  if (samples.empty()) throw std::invalid_argument("mnll: need at least one sample");
  const Eigen::Index n = truth.rows(), d1 = truth.cols();
  for (const Mat& s : samples)
    if (s.rows() != n || s.cols() != d1) throw std::invalid_argument("mnll: shape mismatch");
  if (noise_var.size() != d1) throw std::invalid_argument("mnll: noise variance size mismatch");
  const std::size_t s_count = samples.size();
  double total = 0;
  for (Eigen::Index i = 0; i < d1; ++i) {
    // Without observation noise the mixture components degenerate; keep the
    // density defined with a tiny floor.
    double v = include_noise ? noise_var(i) : 1e-12;
    for (Eigen::Index r = 0; r < n; ++r) {
      double y = truth(r, i);
      if (moment_matched) {
        double m = 0, sq = 0;
        for (const Mat& s : samples) m += s(r, i);
        m /= double(s_count);
        for (const Mat& s : samples) sq += (s(r, i) - m) * (s(r, i) - m);
        double var = (s_count > 1 ? sq / double(s_count - 1) : 0.0) + v;
        total += 0.5 * std::log(kTwoPi * var) + (y - m) * (y - m) / (2.0 * var);
      } else {
        double best = -std::numeric_limits<double>::infinity();
        std::vector<double> expo(s_count);
        for (std::size_t s = 0; s < s_count; ++s) {
          double dlt = y - samples[s](r, i);
          expo[s] = -dlt * dlt / (2.0 * v);
          best = std::max(best, expo[s]);
        }
        double acc = 0;
        for (double e : expo) acc += std::exp(e - best);
        double logp = best + std::log(acc) - std::log(double(s_count)) - 0.5 * std::log(kTwoPi * v);
        total += -logp;
      }
    }
  }
  if (count) *count = static_cast<long>(n * d1);
  return total;
}

// Mean negative log-likelihood over all scalar observations of one instance.
inline double mnll(const std::vector<Mat>& samples, const Mat& truth, const Vec& noise_var,
                   bool include_noise = true, bool moment_matched = false) {
  long cnt = 0;
  double s = mnll_sum(samples, truth, noise_var, include_noise, moment_matched, &cnt);
  return s / double(cnt);
}

// Standard-normal quantile by Newton iteration on erf; probit(p) solves
// Phi(z) = p for p in (0,1).
inline double probit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("probit: p must lie in (0,1)");
  double z = 0.0;
  for (int it = 0; it < 60; ++it) {
    double cdf = 0.5 * (1.0 + std::erf(z / std::sqrt(2.0)));
    double pdf = std::exp(-0.5 * z * z) / std::sqrt(kTwoPi);
    double step = (cdf - p) / std::max(pdf, 1e-300);
    // Damp far-tail steps to keep Newton stable.
    if (step > 1.0) step = 1.0;
    if (step < -1.0) step = -1.0;
    z -= step;
    if (std::abs(step) < 1e-13) break;
  }
  return z;
}

// Fraction of observations inside the central `level` interval of
// N(mean, sd^2), entrywise. The caller folds observation noise into sd.
inline double coverage(const Mat& mean, const Mat& sd, const Mat& truth, double level) {
  if (mean.rows() != truth.rows() || mean.cols() != truth.cols() || sd.rows() != truth.rows() ||
      sd.cols() != truth.cols())
    throw std::invalid_argument("coverage: shape mismatch");
  double z = probit(0.5 * (1.0 + level));
  long inside = 0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i)
    for (Eigen::Index j = 0; j < truth.cols(); ++j)
      if (std::abs(truth(i, j) - mean(i, j)) <= z * sd(i, j)) ++inside;
  return double(inside) / double(truth.size());
}

struct EvalReport {
  std::vector<double> per_instance_nrmse;
  double mean_nrmse = 0;
  double mean_nll = 0;
  double coverage68 = 0;
  double coverage95 = 0;
  double seconds = 0;
};

// Hand-rolled serialization keeps the schema explicit and dependency-light.
inline std::string report_json(const EvalReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "{\n  \"per_instance_nrmse\": [";
  for (std::size_t i = 0; i < r.per_instance_nrmse.size(); ++i)
    os << (i ? ", " : "") << r.per_instance_nrmse[i];
  os << "],\n";
  os << "  \"mean_nrmse\": " << r.mean_nrmse << ",\n";
  os << "  \"mean_nll\": " << r.mean_nll << ",\n";
  os << "  \"coverage68\": " << r.coverage68 << ",\n";
  os << "  \"coverage95\": " << r.coverage95 << ",\n";
  os << "  \"seconds\": " << r.seconds << "\n}\n";
  return os.str();
}

inline std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "instance,nrmse\n";
  for (std::size_t i = 0; i < r.per_instance_nrmse.size(); ++i)
    os << i << "," << r.per_instance_nrmse[i] << "\n";
  os << "mean," << r.mean_nrmse << "\n";
  return os.str();
}

}  // namespace dgpfm
