#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dgpfm/common.hpp"
#include "dgpfm/fft.hpp"

// Dataset container, affine normalization, irregular-sampling corruption,
// synthetic operator-learning generators, and the on-disk formats.

namespace dgpfm {

// One observed function pair: the input function sampled at x_in (values
// f_in, one column per input component) and the output function sampled at
// x_out (values y_out). The two location sets are unrelated in general.
struct FunctionPair {
  Mat x_in;   // (N_in x d)
  Mat f_in;   // (N_in x d0)
  Mat x_out;  // (N_out x d)
  Mat y_out;  // (N_out x d1)
};

struct Dataset {
  int d = 1, d0 = 1, d1 = 1;
  std::vector<FunctionPair> instances;
  Mat box;  // (d x 2) coordinate hull: column 0 = low, column 1 = high

  void refresh_box() {
    box = Mat::Zero(d, 2);
    bool first = true;
    for (const FunctionPair& p : instances) {
      for (const Mat* x : {&p.x_in, &p.x_out}) {
        if (x->rows() == 0) continue;
        Vec lo = x->colwise().minCoeff().transpose();
        Vec hi = x->colwise().maxCoeff().transpose();
        if (first) {
          box.col(0) = lo;
          box.col(1) = hi;
          first = false;
        } else {
          box.col(0) = box.col(0).cwiseMin(lo);
          box.col(1) = box.col(1).cwiseMax(hi);
        }
      }
    }
    if (first) box << Mat::Zero(d, 1), Mat::Ones(d, 1);
  }
};

// ---------------------------------------------------------------------------
// Normalization: coordinates affinely mapped to [0,1]^d by the training
// hull; values z-scored per component with training-split statistics.
// ---------------------------------------------------------------------------

struct Normalization {
  Mat box;               // (d x 2)
  Vec in_mean, in_sd;    // (d0)
  Vec out_mean, out_sd;  // (d1)

  Mat norm_points(const Mat& x) const {
    Mat out = x;
    for (int j = 0; j < box.rows(); ++j) {
      double lo = box(j, 0), span = box(j, 1) - box(j, 0);
      if (span <= 0) span = 1.0;
      out.col(j) = (x.col(j).array() - lo) / span;
    }
    return out;
  }
  Mat raw_points(const Mat& x) const {
    Mat out = x;
    for (int j = 0; j < box.rows(); ++j) {
      double lo = box(j, 0), span = box(j, 1) - box(j, 0);
      if (span <= 0) span = 1.0;
      out.col(j) = x.col(j).array() * span + lo;
    }
    return out;
  }
  static Mat norm_values(const Mat& v, const Vec& mean, const Vec& sd) {
    Mat out = v;
    for (int j = 0; j < v.cols(); ++j) out.col(j) = (v.col(j).array() - mean(j)) / sd(j);
    return out;
  }
  static Mat raw_values(const Mat& v, const Vec& mean, const Vec& sd) {
    Mat out = v;
    for (int j = 0; j < v.cols(); ++j) out.col(j) = v.col(j).array() * sd(j) + mean(j);
    return out;
  }
  Mat norm_in(const Mat& f) const { return norm_values(f, in_mean, in_sd); }
  Mat norm_out(const Mat& y) const { return norm_values(y, out_mean, out_sd); }
  Mat raw_out_mean(const Mat& y) const { return raw_values(y, out_mean, out_sd); }
  Mat raw_out_sd(const Mat& s) const {
    Mat out = s;
    for (int j = 0; j < s.cols(); ++j) out.col(j) = s.col(j).array() * out_sd(j);
    return out;
  }
};

inline Normalization fit_normalization(const Dataset& ds, const std::vector<int>& train_idx) {
  Normalization nz;
  nz.box = Mat::Zero(ds.d, 2);
  nz.in_mean = Vec::Zero(ds.d0);
  nz.in_sd = Vec::Ones(ds.d0);
  nz.out_mean = Vec::Zero(ds.d1);
  nz.out_sd = Vec::Ones(ds.d1);
  bool first = true;
  Vec in_sum = Vec::Zero(ds.d0), in_sq = Vec::Zero(ds.d0);
  Vec out_sum = Vec::Zero(ds.d1), out_sq = Vec::Zero(ds.d1);
  long n_in = 0, n_out = 0;
  for (int i : train_idx) {
    const FunctionPair& p = ds.instances.at(static_cast<std::size_t>(i));
    for (const Mat* x : {&p.x_in, &p.x_out}) {
      Vec lo = x->colwise().minCoeff().transpose();
      Vec hi = x->colwise().maxCoeff().transpose();
      if (first) {
        nz.box.col(0) = lo;
        nz.box.col(1) = hi;
        first = false;
      } else {
        nz.box.col(0) = nz.box.col(0).cwiseMin(lo);
        nz.box.col(1) = nz.box.col(1).cwiseMax(hi);
      }
    }
    in_sum += p.f_in.colwise().sum().transpose();
    in_sq += p.f_in.array().square().colwise().sum().matrix().transpose();
    n_in += p.f_in.rows();
    out_sum += p.y_out.colwise().sum().transpose();
    out_sq += p.y_out.array().square().colwise().sum().matrix().transpose();
    n_out += p.y_out.rows();
  }
  if (n_in > 0) {
    nz.in_mean = in_sum / double(n_in);
    nz.in_sd = (in_sq / double(n_in) - nz.in_mean.array().square().matrix()).cwiseMax(0.0).cwiseSqrt();
  }
  if (n_out > 0) {
    nz.out_mean = out_sum / double(n_out);
    nz.out_sd = (out_sq / double(n_out) - nz.out_mean.array().square().matrix()).cwiseMax(0.0).cwiseSqrt();
  }
  for (int j = 0; j < ds.d0; ++j)
    if (nz.in_sd(j) < 1e-12) nz.in_sd(j) = 1.0;
  for (int j = 0; j < ds.d1; ++j)
    if (nz.out_sd(j) < 1e-12) nz.out_sd(j) = 1.0;
  return nz;
}

inline Normalization fit_normalization(const Dataset& ds) {
  std::vector<int> all(ds.instances.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return fit_normalization(ds, all);
}

inline FunctionPair apply_normalization(const Normalization& nz, const FunctionPair& p) {
  return {nz.norm_points(p.x_in), nz.norm_in(p.f_in), nz.norm_points(p.x_out),
          nz.norm_out(p.y_out)};
}

inline Dataset apply_normalization(const Normalization& nz, const Dataset& ds) {
  Dataset out = ds;
  for (FunctionPair& p : out.instances) p = apply_normalization(nz, p);
  out.refresh_box();
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian random field on the periodic unit interval with spectral density
// amp / (4 pi^2 m^2 + shift)^2, represented by its random Fourier
// coefficients so it can be evaluated anywhere.
// ---------------------------------------------------------------------------

struct Grf1D {
  double amp = 625.0;
  double shift = 25.0;
  Vec cos_coef;  // (M+1): index 0 is the constant mode
  Vec sin_coef;  // (M+1): index 0 unused

  double eigenvalue(int m) const {
    double w = kTwoPi * m;
    double den = w * w + shift;
    return amp / (den * den);
  }
  int modes() const { return static_cast<int>(cos_coef.size()) - 1; }
  double value(double x) const {
    double f = cos_coef(0) * std::sqrt(eigenvalue(0));
    for (int m = 1; m <= modes(); ++m) {
      double s = std::sqrt(2.0 * eigenvalue(m));
      f += s * (cos_coef(m) * std::cos(kTwoPi * m * x) + sin_coef(m) * std::sin(kTwoPi * m * x));
    }
    return f;
  }
  // Pointwise variance of the field (same at every x).
  double point_variance() const {
    double v = eigenvalue(0);
    for (int m = 1; m <= modes(); ++m) v += 2.0 * eigenvalue(m);
    return v;
  }
};

inline Grf1D sample_grf_1d(int modes, NormalSource& noise, double amp = 625.0,
                           double shift = 25.0) {
  Grf1D g;
  g.amp = amp;
  g.shift = shift;
  g.cos_coef = noise.draw_vector(modes + 1);
  g.sin_coef = noise.draw_vector(modes + 1);
  g.sin_coef(0) = 0.0;
  return g;
}

// Field values at the n periodic grid points i/n.
inline Vec gen_grf_1d(int n_grid, double amp, double shift, uint64_t seed) {
  if (n_grid < 16) throw std::invalid_argument("gen_grf_1d: n_grid must be at least 16");
  NormalSource noise(mix_seed({seed, 0x67726631}));
  Grf1D g = sample_grf_1d(n_grid / 2, noise, amp, shift);
  Vec out(n_grid);
  for (int i = 0; i < n_grid; ++i) out(i) = g.value(double(i) / n_grid);
  return out;
}

// Cumulative integral of the field from xs(0), evaluated at each node of the
// sorted grid xs, by composite Simpson quadrature on a 4x-refined grid.
inline Vec antiderivative_on_grid(const Grf1D& g, const Vec& xs) {
  const Eigen::Index n = xs.size();
  Vec u(n);
  u(0) = 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    double a = xs(i), b = xs(i + 1);
    double h = (b - a) / 4.0;
    double f0 = g.value(a), f1 = g.value(a + h), f2 = g.value(a + 2 * h);
    double f3 = g.value(a + 3 * h), f4 = g.value(b);
    acc += h / 3.0 * (f0 + 4.0 * f1 + 2.0 * f2 + 4.0 * f3 + f4);
    u(i + 1) = acc;
  }
  return u;
}

// Input f on the closed grid i/(n-1); output its running integral from 0.
inline Dataset gen_antiderivative(int n_instances, int n_grid, uint64_t seed) {
  if (n_grid < 16) throw std::invalid_argument("gen_antiderivative: n_grid must be at least 16");
  Dataset ds;
  ds.d = 1;
  ds.d0 = 1;
  ds.d1 = 1;
  Vec xs(n_grid);
  for (int i = 0; i < n_grid; ++i) xs(i) = double(i) / (n_grid - 1);
  for (int k = 0; k < n_instances; ++k) {
    NormalSource noise(mix_seed({seed, 0x616e7464, static_cast<uint64_t>(k)}));
    Grf1D g = sample_grf_1d(n_grid / 2, noise);
    FunctionPair p;
    p.x_in = xs;
    p.f_in.resize(n_grid, 1);
    for (int i = 0; i < n_grid; ++i) p.f_in(i, 0) = g.value(xs(i));
    p.x_out = xs;
    p.y_out = antiderivative_on_grid(g, xs);
    ds.instances.push_back(std::move(p));
  }
  ds.refresh_box();
  return ds;
}

// ---------------------------------------------------------------------------
// Viscous Burgers on the periodic unit interval, integrated to t = 1 with a
// pseudo-spectral method: exact integrating factor for the viscous part,
// 2/3-rule dealiasing for the advection term, classical RK4 in time.
// ---------------------------------------------------------------------------

namespace detail {

// Spectral advection term -u u_x from the (dealiased) half spectrum.
inline std::vector<fft::cd> burgers_rhs(const std::vector<fft::cd>& uhat, int n, int cutoff) {
  const std::size_t k_bins = uhat.size();
  std::vector<fft::cd> work = uhat;
  for (std::size_t k = 0; k < k_bins; ++k)
    if (static_cast<int>(k) > cutoff) work[k] = 0.0;
  std::vector<double> u = fft::irdft(work.data(), k_bins, n);
  for (std::size_t k = 0; k < k_bins; ++k) work[k] *= fft::cd(0.0, kTwoPi * double(k));
  std::vector<double> ux = fft::irdft(work.data(), k_bins, n);
  std::vector<double> prod(n);
  for (int i = 0; i < n; ++i) prod[i] = -u[i] * ux[i];
  std::vector<fft::cd> rhs = fft::rdft(prod.data(), n);
  for (std::size_t k = 0; k < k_bins; ++k)
    if (static_cast<int>(k) > cutoff) rhs[k] = 0.0;
  return rhs;
}

}  // namespace detail

// Integrates u_t + u u_x = nu u_xx from the grid values u0 (at i/n) to
// t_end; optionally records the energy integral to `energy` once per step.
inline Vec burgers_evolve(const Vec& u0, double nu, double t_end, double dt,
                          std::vector<double>* energy = nullptr) {
  const int n = static_cast<int>(u0.size());
  const int cutoff = n / 3;
  const std::size_t k_bins = fft::half_spectrum_size(n);
  std::vector<double> u(u0.data(), u0.data() + n);
  std::vector<fft::cd> v = fft::rdft(u.data(), n);

  auto parseval_energy = [&](const std::vector<fft::cd>& spec) {
    double s = std::norm(spec[0]);
    for (std::size_t k = 1; k + 1 < k_bins; ++k) s += 2.0 * std::norm(spec[k]);
    if (n % 2 == 0)
      s += std::norm(spec[k_bins - 1]);
    else
      s += 2.0 * std::norm(spec[k_bins - 1]);
    return s / (double(n) * double(n));  // = integral of u^2 over [0,1]
  };

  const int n_steps = std::max(1, static_cast<int>(std::llround(t_end / dt)));
  const double h = t_end / n_steps;
  std::vector<double> decay_half(k_bins), decay_full(k_bins);
  for (std::size_t k = 0; k < k_bins; ++k) {
    double w = kTwoPi * double(k);
    decay_half[k] = std::exp(-nu * w * w * h / 2.0);
    decay_full[k] = decay_half[k] * decay_half[k];
  }
  if (energy) {
    energy->clear();
    energy->push_back(parseval_energy(v));
  }
  std::vector<fft::cd> a, b, c, dstage, tmp(k_bins);
  for (int step = 0; step < n_steps; ++step) {
    // Integrating-factor RK4: with w = exp(-L t) v the stiff viscous part is
    // integrated exactly and RK4 sees only the advection term.
    a = detail::burgers_rhs(v, n, cutoff);
    for (std::size_t k = 0; k < k_bins; ++k)
      tmp[k] = decay_half[k] * (v[k] + 0.5 * h * a[k]);
    b = detail::burgers_rhs(tmp, n, cutoff);
    for (std::size_t k = 0; k < k_bins; ++k)
      tmp[k] = decay_half[k] * v[k] + 0.5 * h * b[k];
    c = detail::burgers_rhs(tmp, n, cutoff);
    for (std::size_t k = 0; k < k_bins; ++k)
      tmp[k] = decay_full[k] * v[k] + decay_half[k] * h * c[k];
    dstage = detail::burgers_rhs(tmp, n, cutoff);
    for (std::size_t k = 0; k < k_bins; ++k) {
      fft::cd incr = decay_full[k] * a[k] + 2.0 * decay_half[k] * (b[k] + c[k]) + dstage[k];
      v[k] = decay_full[k] * v[k] + h / 6.0 * incr;
    }
    double e = parseval_energy(v);
    if (!std::isfinite(e) || e > 1e6)
      throw generation_failure("burgers_evolve: solution blew up at step " +
                               std::to_string(step + 1));
    if (energy) energy->push_back(e);
  }
  std::vector<double> out = fft::irdft(v.data(), k_bins, n);
  return Eigen::Map<const Vec>(out.data(), n);
}

// Input u(.,0) ~ GRF on the periodic grid i/n; output u(.,1).
inline Dataset gen_burgers_1d(int n_instances, int n_grid, double nu, uint64_t seed) {
  if (n_grid < 16) throw std::invalid_argument("gen_burgers_1d: n_grid must be at least 16");
  if (nu <= 0) throw std::invalid_argument("gen_burgers_1d: viscosity must be positive");
  Dataset ds;
  ds.d = 1;
  ds.d0 = 1;
  ds.d1 = 1;
  Vec xs(n_grid);
  for (int i = 0; i < n_grid; ++i) xs(i) = double(i) / n_grid;
  for (int k = 0; k < n_instances; ++k) {
    NormalSource noise(mix_seed({seed, 0x62757267, static_cast<uint64_t>(k)}));
    Grf1D g = sample_grf_1d(n_grid / 2, noise);
    Vec u0(n_grid);
    for (int i = 0; i < n_grid; ++i) u0(i) = g.value(xs(i));
    FunctionPair p;
    p.x_in = xs;
    p.f_in = u0;
    p.x_out = xs;
    p.y_out = burgers_evolve(u0, nu, 1.0, 5e-4);
    ds.instances.push_back(std::move(p));
  }
  ds.refresh_box();
  return ds;
}

// ---------------------------------------------------------------------------
// 2D source-to-solution map for -Lap(u) = f on the unit square with zero
// boundary values, via the sine eigenbasis: phi_km = 2 sin(pi k x) sin(pi m y)
// with eigenvalue pi^2 (k^2 + m^2).
// ---------------------------------------------------------------------------

struct SineField2D {
  Mat coef;  // (K x K), coefficient of 2 sin(pi(k+1)x) sin(pi(m+1)y)

  double value(double x, double y) const {
    double f = 0.0;
    for (int k = 0; k < coef.rows(); ++k)
      for (int m = 0; m < coef.cols(); ++m)
        f += coef(k, m) * 2.0 * std::sin(kPi * (k + 1) * x) * std::sin(kPi * (m + 1) * y);
    return f;
  }
};

inline SineField2D sample_source_2d(int modes, NormalSource& noise, double amp = 625.0,
                                    double shift = 25.0) {
  SineField2D f;
  f.coef.resize(modes, modes);
  for (int k = 0; k < modes; ++k)
    for (int m = 0; m < modes; ++m) {
      double lam = kPi * kPi * ((k + 1.0) * (k + 1.0) + (m + 1.0) * (m + 1.0)) + shift;
      f.coef(k, m) = std::sqrt(amp / (lam * lam)) * noise.draw();
    }
  return f;
}

inline SineField2D poisson_solve(const SineField2D& f) {
  SineField2D u;
  u.coef = f.coef;
  for (int k = 0; k < f.coef.rows(); ++k)
    for (int m = 0; m < f.coef.cols(); ++m)
      u.coef(k, m) /= kPi * kPi * ((k + 1.0) * (k + 1.0) + (m + 1.0) * (m + 1.0));
  return u;
}

// Evaluates the field on the tensor grid xs x ys, flattened row-major with
// the y index fastest, as one column.
inline Vec eval_sine_field(const SineField2D& f, const Vec& xs, const Vec& ys) {
  const Eigen::Index nx = xs.size(), ny = ys.size();
  const int kmodes = static_cast<int>(f.coef.rows());
  Mat sx(kmodes, nx), sy(kmodes, ny);
  for (int k = 0; k < kmodes; ++k) {
    for (Eigen::Index i = 0; i < nx; ++i) sx(k, i) = std::sin(kPi * (k + 1) * xs(i));
    for (Eigen::Index i = 0; i < ny; ++i) sy(k, i) = std::sin(kPi * (k + 1) * ys(i));
  }
  Mat vals = 2.0 * sx.transpose() * f.coef * sy;  // (nx x ny)
  Vec out(nx * ny);
  for (Eigen::Index i = 0; i < nx; ++i)
    for (Eigen::Index j = 0; j < ny; ++j) out(i * ny + j) = vals(i, j);
  return out;
}

// Source f and solution u sampled on the closed (n+1)^2 grid (i/n, j/n),
// boundary included (u vanishes there).
inline Dataset gen_poisson_2d(int n_instances, int n_grid, uint64_t seed) {
  if (n_grid < 8) throw std::invalid_argument("gen_poisson_2d: n_grid must be at least 8");
  Dataset ds;
  ds.d = 2;
  ds.d0 = 1;
  ds.d1 = 1;
  const int n = n_grid;
  Vec axis(n + 1);
  for (int i = 0; i <= n; ++i) axis(i) = double(i) / n;
  Mat pts((n + 1) * (n + 1), 2);
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) {
      pts(i * (n + 1) + j, 0) = axis(i);
      pts(i * (n + 1) + j, 1) = axis(j);
    }
  for (int k = 0; k < n_instances; ++k) {
    NormalSource noise(mix_seed({seed, 0x706f6973, static_cast<uint64_t>(k)}));
    SineField2D f = sample_source_2d(n_grid / 2, noise);
    SineField2D u = poisson_solve(f);
    FunctionPair p;
    p.x_in = pts;
    p.f_in = eval_sine_field(f, axis, axis);
    p.x_out = pts;
    p.y_out = eval_sine_field(u, axis, axis);
    ds.instances.push_back(std::move(p));
  }
  ds.refresh_box();
  return ds;
}

// ---------------------------------------------------------------------------
// Irregular-sampling corruption: random location subsets and additive
// observation noise on the retained input values.
// ---------------------------------------------------------------------------

namespace detail {

// Deterministic Fisher-Yates driven by splitmix64, independent of any
// standard-library distribution implementation.
inline std::vector<Eigen::Index> keep_subset(Eigen::Index n, double keep, uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  uint64_t s = seed;
  for (Eigen::Index i = n - 1; i > 0; --i) {
    uint64_t r = splitmix64(s);
    Eigen::Index j = static_cast<Eigen::Index>(r % static_cast<uint64_t>(i + 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  Eigen::Index n_keep = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(keep * double(n))));
  n_keep = std::min(n_keep, n);
  idx.resize(static_cast<std::size_t>(n_keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline Mat take_rows(const Mat& m, const std::vector<Eigen::Index>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace detail

inline Dataset corrupt(const Dataset& ds, double keep_in, double keep_out, double noise_sd,
                       bool independent_masks, uint64_t seed) {
  if (keep_in <= 0 || keep_in > 1 || keep_out <= 0 || keep_out > 1)
    throw std::invalid_argument("corrupt: keep fractions must lie in (0, 1]");
  if (noise_sd < 0) throw std::invalid_argument("corrupt: noise_sd must be nonnegative");
  Dataset out = ds;
  for (std::size_t k = 0; k < out.instances.size(); ++k) {
    FunctionPair& p = out.instances[k];
    uint64_t ki = static_cast<uint64_t>(k);
    std::vector<Eigen::Index> in_idx =
        detail::keep_subset(p.x_in.rows(), keep_in, mix_seed({seed, ki, 0x6d61736b}));
    std::vector<Eigen::Index> out_idx;
    if (independent_masks) {
      out_idx = detail::keep_subset(p.x_out.rows(), keep_out, mix_seed({seed, ki, 0x6d736b32}));
    } else {
      if (p.x_out.rows() != p.x_in.rows())
        throw std::invalid_argument("corrupt: shared masks need matching location counts");
      out_idx = detail::keep_subset(p.x_out.rows(), keep_out, mix_seed({seed, ki, 0x6d61736b}));
    }
    p.x_in = detail::take_rows(p.x_in, in_idx);
    p.f_in = detail::take_rows(p.f_in, in_idx);
    p.x_out = detail::take_rows(p.x_out, out_idx);
    p.y_out = detail::take_rows(p.y_out, out_idx);
    if (noise_sd > 0) {
      NormalSource noise(mix_seed({seed, ki, 0x6e6f6973}));
      p.f_in += noise_sd * noise.draw_matrix(p.f_in.rows(), p.f_in.cols());
    }
  }
  out.refresh_box();
  return out;
}

// ---------------------------------------------------------------------------
// Binary dataset container. Layout: magic "DGFM", version u16, u32 d, d0,
// d1, instance count, then per instance u32 N_in, X_in, F, u32 N_out,
// X_out, Y with all matrices row-major little-endian f64.
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "dataset container assumes a little-endian host");

namespace detail {

struct ByteWriter {
  std::ofstream out;
  explicit ByteWriter(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
  }
  void raw(const void* p, std::size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u16(uint16_t v) { raw(&v, 2); }
  void u32(uint32_t v) { raw(&v, 4); }
  void f64(double v) { raw(&v, 8); }
  void mat(const Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) f64(m(i, j));
  }
};

struct ByteReader {
  std::ifstream in;
  std::size_t offset = 0;
  std::string path;
  explicit ByteReader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw std::runtime_error("cannot open for reading: " + p);
  }
  void raw(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw format_error("unexpected end of file in " + path, offset);
    offset += n;
  }
  uint16_t u16() { uint16_t v; raw(&v, 2); return v; }
  uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  Mat mat(Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = f64();
    return m;
  }
};

}  // namespace detail

constexpr uint16_t kDatasetVersion = 1;

inline void save_dataset(const Dataset& ds, const std::string& path) {
  detail::ByteWriter w(path);
  w.raw("DGFM", 4);
  w.u16(kDatasetVersion);
  w.u32(static_cast<uint32_t>(ds.d));
  w.u32(static_cast<uint32_t>(ds.d0));
  w.u32(static_cast<uint32_t>(ds.d1));
  w.u32(static_cast<uint32_t>(ds.instances.size()));
  for (const FunctionPair& p : ds.instances) {
    w.u32(static_cast<uint32_t>(p.x_in.rows()));
    w.mat(p.x_in);
    w.mat(p.f_in);
    w.u32(static_cast<uint32_t>(p.x_out.rows()));
    w.mat(p.x_out);
    w.mat(p.y_out);
  }
  if (!w.out) throw std::runtime_error("write failed: " + path);
}

inline Dataset load_dataset(const std::string& path) {
  detail::ByteReader r(path);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "DGFM", 4) != 0)
    throw format_error("bad magic in " + path, 0);
  uint16_t version = r.u16();
  if (version != kDatasetVersion)
    throw format_error("unsupported container version " + std::to_string(version) + " in " + path, 4);
  Dataset ds;
  ds.d = static_cast<int>(r.u32());
  ds.d0 = static_cast<int>(r.u32());
  ds.d1 = static_cast<int>(r.u32());
  if (ds.d < 1 || ds.d > 3 || ds.d0 < 1 || ds.d1 < 1)
    throw format_error("implausible dimensions in " + path, 6);
  uint32_t count = r.u32();
  for (uint32_t k = 0; k < count; ++k) {
    std::size_t at = r.offset;
    uint32_t n_in = r.u32();
    if (n_in == 0) throw format_error("instance with zero input points in " + path, at);
    FunctionPair p;
    p.x_in = r.mat(n_in, ds.d);
    p.f_in = r.mat(n_in, ds.d0);
    at = r.offset;
    uint32_t n_out = r.u32();
    if (n_out == 0) throw format_error("instance with zero output points in " + path, at);
    p.x_out = r.mat(n_out, ds.d);
    p.y_out = r.mat(n_out, ds.d1);
    ds.instances.push_back(std::move(p));
  }
  ds.refresh_box();
  return ds;
}

// ---------------------------------------------------------------------------
// CSV import: one instance per file pair <stem>.in.csv / <stem>.out.csv with
// header columns x1..xd then f1..fd0 (respectively y1..yd1).
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ' && c != '\t' && c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& path, std::size_t line_no) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw format_error("bad number '" + s + "' in " + path, line_no);
  return v;
}

// Reads one CSV half (locations + values); `value_prefix` is 'f' or 'y'.
inline std::pair<Mat, Mat> read_csv_half(const std::string& path, char value_prefix) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line)) throw format_error("missing header in " + path, 1);
  std::vector<std::string> header = split_csv_line(line);
  int d = 0, dv = 0;
  for (const std::string& h : header) {
    if (!h.empty() && h[0] == 'x' && dv == 0)
      ++d;
    else if (!h.empty() && h[0] == value_prefix)
      ++dv;
    else
      throw format_error("unexpected column '" + h + "' in " + path, 1);
  }
  if (d == 0 || dv == 0)
    throw format_error("need x* and value columns in " + path, 1);
  std::vector<double> xs, vs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != d + dv)
      throw format_error("wrong cell count in " + path, line_no);
    for (int j = 0; j < d; ++j) xs.push_back(parse_double(cells[static_cast<std::size_t>(j)], path, line_no));
    for (int j = 0; j < dv; ++j)
      vs.push_back(parse_double(cells[static_cast<std::size_t>(d + j)], path, line_no));
  }
  Eigen::Index n = static_cast<Eigen::Index>(xs.size()) / d;
  if (n == 0) throw format_error("no data rows in " + path, line_no);
  Mat X(n, d), V(n, dv);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) X(i, j) = xs[static_cast<std::size_t>(i * d + j)];
    for (int j = 0; j < dv; ++j) V(i, j) = vs[static_cast<std::size_t>(i * dv + j)];
  }
  return {X, V};
}

}  // namespace detail

inline FunctionPair import_csv_pair(const std::string& in_path, const std::string& out_path) {
  auto [x_in, f_in] = detail::read_csv_half(in_path, 'f');
  auto [x_out, y_out] = detail::read_csv_half(out_path, 'y');
  if (x_in.cols() != x_out.cols())
    throw format_error("coordinate dimension mismatch between " + in_path + " and " + out_path, 1);
  return {x_in, f_in, x_out, y_out};
}

// Imports every <stem>.in.csv / <stem>.out.csv pair in a directory, in
// lexicographic stem order.
inline Dataset import_csv_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    const std::string suffix = ".in.csv";
    if (name.size() > suffix.size() && name.substr(name.size() - suffix.size()) == suffix)
      stems.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw std::runtime_error("no *.in.csv files in " + dir);
  Dataset ds;
  bool first = true;
  for (const std::string& stem : stems) {
    std::string in_path = (fs::path(dir) / (stem + ".in.csv")).string();
    std::string out_path = (fs::path(dir) / (stem + ".out.csv")).string();
    if (!fs::exists(out_path)) throw std::runtime_error("missing companion file: " + out_path);
    FunctionPair p = import_csv_pair(in_path, out_path);
    if (first) {
      ds.d = static_cast<int>(p.x_in.cols());
      ds.d0 = static_cast<int>(p.f_in.cols());
      ds.d1 = static_cast<int>(p.y_out.cols());
      first = false;
    } else if (p.x_in.cols() != ds.d || p.f_in.cols() != ds.d0 || p.y_out.cols() != ds.d1) {
      throw format_error("inconsistent dimensions in " + in_path, 1);
    }
    ds.instances.push_back(std::move(p));
  }
  ds.refresh_box();
  return ds;
}

}  // namespace dgpfm
