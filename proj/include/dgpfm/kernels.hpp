#pragma once

#include <vector>

#include "dgpfm/ad.hpp"
#include "dgpfm/common.hpp"

// Stationary covariance functions (squared-exponential and half-integer
// Matern, optionally a positively-weighted sum), Gram matrix assembly with
// analytic hyperparameter/point derivatives, and jitter-escalating Cholesky
// helpers. All positive quantities are stored as unconstrained reals and
// mapped through softplus.

namespace dgpfm {

enum class KernelFamily : std::uint8_t { SquaredExponential, Matern52, Matern132 };

// A kernel is one family or a weighted sum of families; each member owns its
// variance and one lengthscale per input dimension. Raw parameter layout:
//   plain:    [raw_variance, raw_ell_1 .. raw_ell_d]
//   weighted: per member [raw_weight, raw_variance, raw_ell_1 .. raw_ell_d]
struct KernelSpec {
  std::vector<KernelFamily> members{KernelFamily::SquaredExponential};
  bool weighted = false;
  int dim = 1;

  int member_stride() const { return (weighted ? 2 : 1) + dim; }
  int param_count() const { return static_cast<int>(members.size()) * member_stride(); }
};

inline KernelSpec make_kernel(KernelFamily f, int dim) {
  KernelSpec s;
  s.members = {f};
  s.weighted = false;
  s.dim = dim;
  return s;
}

inline KernelSpec make_weighted(std::vector<KernelFamily> fams, int dim) {
  KernelSpec s;
  s.members = std::move(fams);
  s.weighted = true;
  s.dim = dim;
  return s;
}

// Raw parameters giving variance/lengthscale/weight defaults of
// (1.0, 0.2, 1/m) in normalized coordinates.
inline Vec default_kernel_params(const KernelSpec& spec, double variance = 1.0,
                                 double lengthscale = 0.2) {
  Vec p(spec.param_count());
  const int stride = spec.member_stride();
  const double m = static_cast<double>(spec.members.size());
  for (std::size_t i = 0; i < spec.members.size(); ++i) {
    int at = static_cast<int>(i) * stride;
    if (spec.weighted) p[at++] = softplus_inv(1.0 / m);
    p[at++] = softplus_inv(variance);
    for (int d = 0; d < spec.dim; ++d) p[at + d] = softplus_inv(lengthscale);
  }
  return p;
}

namespace detail {

// Half-integer Matern with nu = p + 1/2, c = sqrt(2p+1):
//   k(r) = exp(-c r) * P(r),  P(r) = sum_j a_j r^j,
//   a_j = (p!/(2p)!) * (2p-j)! / ((p-j)! j!) * (2c)^j,  a_0 = 1.
// The radial slope factor s(r) = k'(r)/r is again polynomial-times-
// exponential: s(r) = exp(-c r) * R(r), R_j = (j+2) a_{j+2} - c a_{j+1},
// whose constant term is finite because a_1 = c cancels the a_0 term.
struct MaternTable {
  int p;
  double c;
  std::vector<double> a;  // degree p
  std::vector<double> r;  // degree p-1
};

inline MaternTable make_matern_table(int p) {
  MaternTable t;
  t.p = p;
  t.c = std::sqrt(2.0 * p + 1.0);
  auto fact = [](int n) {
    double f = 1.0;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
  };
  t.a.assign(p + 1, 0.0);
  const double lead = fact(p) / fact(2 * p);
  for (int j = 0; j <= p; ++j)
    t.a[j] = lead * fact(2 * p - j) / (fact(p - j) * fact(j)) * std::pow(2.0 * t.c, j);
  t.r.assign(p, 0.0);
  for (int j = 0; j < p; ++j) {
    const double a2 = (j + 2 <= p) ? t.a[j + 2] : 0.0;
    t.r[j] = (j + 2.0) * a2 - t.c * t.a[j + 1];
  }
  return t;
}

inline const MaternTable& matern_table(KernelFamily f) {
  static const MaternTable t52 = make_matern_table(2);
  static const MaternTable t132 = make_matern_table(6);
  return f == KernelFamily::Matern52 ? t52 : t132;
}

inline double polyval(const std::vector<double>& coef, double x) {
  double v = 0.0;
  for (std::size_t j = coef.size(); j-- > 0;) v = v * x + coef[j];
  return v;
}

// Unit-variance kernel value g(r) and slope factor s(r) = g'(r)/r at scaled
// radius r (finite at r = 0 for every family).
inline void leaf_eval(KernelFamily f, double r, double& g, double& s) {
  if (f == KernelFamily::SquaredExponential) {
    g = std::exp(-0.5 * r * r);
    s = -g;
    return;
  }
  const MaternTable& t = matern_table(f);
  const double e = std::exp(-t.c * r);
  g = e * polyval(t.a, r);
  s = e * polyval(t.r, r);
}

// Copies one point (row of a column-major matrix) into a contiguous buffer.
inline void copy_row(const Mat& m, Eigen::Index i, double* buf) {
  for (Eigen::Index d = 0; d < m.cols(); ++d) buf[d] = m(i, d);
}

}  // namespace detail

// Kernel value for one point pair, optionally accumulating scaled derivative
// contributions: dparams += coeff * dk/draw_params, dx += coeff * dk/dx,
// dz += coeff * dk/dz. Null pointers skip the corresponding accumulation.
inline double kernel_pair(const KernelSpec& spec, const double* raw, const double* x,
                          const double* z, double coeff = 0.0, double* dparams = nullptr,
                          double* dx = nullptr, double* dz = nullptr) {
  const int stride = spec.member_stride();
  double k_total = 0.0;
  for (std::size_t m = 0; m < spec.members.size(); ++m) {
    const double* p = raw + m * stride;
    int at = 0;
    const double w = spec.weighted ? softplus(p[at++]) : 1.0;
    const int var_at = at;
    const double var = softplus(p[at++]);
    const int ell_at = at;
    double r2 = 0.0;
    for (int d = 0; d < spec.dim; ++d) {
      const double ell = softplus(p[ell_at + d]);
      const double u = (x[d] - z[d]) / ell;
      r2 += u * u;
    }
    const double r = std::sqrt(r2);
    double g = 0.0, s = 0.0;
    detail::leaf_eval(spec.members[m], r, g, s);
    k_total += w * var * g;
    if (dparams == nullptr && dx == nullptr && dz == nullptr) continue;
    double* dp = dparams ? dparams + m * stride : nullptr;
    if (dp) {
      if (spec.weighted) dp[0] += coeff * logistic(p[0]) * var * g;
      dp[var_at] += coeff * w * logistic(p[var_at]) * g;
    }
    for (int d = 0; d < spec.dim; ++d) {
      const double ell = softplus(p[ell_at + d]);
      const double delta = x[d] - z[d];
      const double dk_ddelta = w * var * s * delta / (ell * ell);
      if (dp) dp[ell_at + d] += coeff * (-w * var * s * delta * delta / (ell * ell * ell)) *
                                logistic(p[ell_at + d]);
      if (dx) dx[d] += coeff * dk_ddelta;
      if (dz) dz[d] -= coeff * dk_ddelta;
    }
  }
  return k_total;
}

inline double eval_kernel(const KernelSpec& spec, const Vec& raw, const Vec& x, const Vec& z) {
  if (x.size() != spec.dim || z.size() != spec.dim)
    throw unsupported_grid("eval_kernel: point dimension mismatch");
  return kernel_pair(spec, raw.data(), x.data(), z.data());
}

// Sum of member variances scaled by their weights: the value of k(x, x).
inline double total_variance(const KernelSpec& spec, const Vec& raw) {
  const int stride = spec.member_stride();
  double v = 0.0;
  for (std::size_t m = 0; m < spec.members.size(); ++m) {
    const double* p = raw.data() + m * stride;
    v += (spec.weighted ? softplus(p[0]) : 1.0) * softplus(p[spec.weighted ? 1 : 0]);
  }
  return v;
}

// Dense Gram matrix; exactly symmetric when X and Z are the same list.
inline Mat cov_matrix(const KernelSpec& spec, const Vec& raw, const Mat& X, const Mat& Z) {
  if (X.rows() == 0 || Z.rows() == 0) throw unsupported_grid("cov_matrix: empty point list");
  if (X.cols() != spec.dim || Z.cols() != spec.dim)
    throw unsupported_grid("cov_matrix: point dimension mismatch");
  Mat K(X.rows(), Z.rows());
  double xb[3], zb[3];
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    detail::copy_row(X, i, xb);
    for (Eigen::Index j = 0; j < Z.rows(); ++j) {
      detail::copy_row(Z, j, zb);
      K(i, j) = kernel_pair(spec, raw.data(), xb, zb);
    }
  }
  return K;
}

inline Mat cov_matrix_sym(const KernelSpec& spec, const Vec& raw, const Mat& X) {
  if (X.rows() == 0) throw unsupported_grid("cov_matrix: empty point list");
  Mat K(X.rows(), X.rows());
  double xb[3], zb[3];
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    detail::copy_row(X, i, xb);
    for (Eigen::Index j = i; j < X.rows(); ++j) {
      detail::copy_row(X, j, zb);
      const double v = kernel_pair(spec, raw.data(), xb, zb);
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

// ---- jitter-escalating Cholesky (plain, non-differentiated path) ----

struct CholFactor {
  Mat L;
  double jitter = 0.0;
};

inline CholFactor safe_chol(const Mat& K) {
  const double mean_diag = std::abs(K.diagonal().mean());
  static constexpr double kLevels[] = {0.0, 1e-8, 1e-6, 1e-4};
  double attempted = 0.0;
  for (double level : kLevels) {
    attempted = level * mean_diag;
    Mat kj = K;
    kj.diagonal().array() += attempted;
    Eigen::LLT<Mat> llt(kj);
    if (llt.info() == Eigen::Success) return CholFactor{Mat(llt.matrixL()), attempted};
  }
  throw numerical_failure("cholesky failed after jitter escalation", attempted);
}

// Solves (K + jitter I) X = B with the escalation policy.
inline Mat chol_solve(const Mat& K, const Mat& B) {
  if (K.rows() != K.cols() || K.rows() != B.rows())
    throw unsupported_grid("chol_solve: shape mismatch");
  const CholFactor f = safe_chol(K);
  Mat y = f.L.triangularView<Eigen::Lower>().solve(B);
  return f.L.transpose().triangularView<Eigen::Upper>().solve(y);
}

// ---- Gram matrices on the gradient tape ----

namespace kop {

// Symmetric Gram over fixed points X; gradients flow to raw parameters only.
inline ad::Var gram_sym(ad::Tape& t, const KernelSpec& spec, const Mat& X, ad::Var params) {
  Mat K = cov_matrix_sym(spec, Vec(t.val(params).col(0)), X);
  ad::Var out = t.push(std::move(K), t.needs_grad(params));
  t.set_pull(out, [=, Xc = X](ad::Tape& t) {
    if (!t.needs_grad(params)) return;
    const Mat& g = t.adj(out);
    const Vec raw = t.val(params).col(0);
    Vec dp = Vec::Zero(raw.size());
    double xb[3], zb[3];
    for (Eigen::Index i = 0; i < Xc.rows(); ++i) {
      detail::copy_row(Xc, i, xb);
      for (Eigen::Index j = i; j < Xc.rows(); ++j) {
        detail::copy_row(Xc, j, zb);
        const double coeff = (i == j) ? g(i, i) : g(i, j) + g(j, i);
        kernel_pair(spec, raw.data(), xb, zb, coeff, dp.data());
      }
    }
    t.adj(params).col(0) += dp;
  });
  return out;
}

// Cross Gram over fixed points; gradients flow to raw parameters only.
inline ad::Var gram_cross(ad::Tape& t, const KernelSpec& spec, const Mat& X, const Mat& Z,
                          ad::Var params) {
  Mat K = cov_matrix(spec, Vec(t.val(params).col(0)), X, Z);
  ad::Var out = t.push(std::move(K), t.needs_grad(params));
  t.set_pull(out, [=, Xc = X, Zc = Z](ad::Tape& t) {
    if (!t.needs_grad(params)) return;
    const Mat& g = t.adj(out);
    const Vec raw = t.val(params).col(0);
    Vec dp = Vec::Zero(raw.size());
    double xb[3], zb[3];
    for (Eigen::Index i = 0; i < Xc.rows(); ++i) {
      detail::copy_row(Xc, i, xb);
      for (Eigen::Index j = 0; j < Zc.rows(); ++j) {
        detail::copy_row(Zc, j, zb);
        kernel_pair(spec, raw.data(), xb, zb, g(i, j), dp.data());
      }
    }
    t.adj(params).col(0) += dp;
  });
  return out;
}

// Cross Gram where both point sets live on the tape (n x d and m x d nodes);
// gradients flow to the points and the raw parameters.
inline ad::Var gram_cross_xz(ad::Tape& t, const KernelSpec& spec, ad::Var x, ad::Var z,
                             ad::Var params) {
  const Mat& xv = t.val(x);
  const Mat& zv = t.val(z);
  const Vec raw0 = t.val(params).col(0);
  Mat K(xv.rows(), zv.rows());
  double xb0[3], zb0[3];
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    detail::copy_row(xv, i, xb0);
    for (Eigen::Index j = 0; j < zv.rows(); ++j) {
      detail::copy_row(zv, j, zb0);
      K(i, j) = kernel_pair(spec, raw0.data(), xb0, zb0);
    }
  }
  ad::Var out =
      t.push(std::move(K), ad::detail::any_requires({x, z, params}));
  t.set_pull(out, [=](ad::Tape& t) {
    const Mat& g = t.adj(out);
    const Mat& xv = t.val(x);
    const Mat& zv = t.val(z);
    const Vec raw = t.val(params).col(0);
    const int d = spec.dim;
    Vec dp = Vec::Zero(raw.size());
    Mat dx = Mat::Zero(xv.rows(), d);
    Mat dz = Mat::Zero(zv.rows(), d);
    std::vector<double> dxi(d), dzj(d);
    double xb[3], zb[3];
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      detail::copy_row(xv, i, xb);
      for (Eigen::Index j = 0; j < zv.rows(); ++j) {
        detail::copy_row(zv, j, zb);
        std::fill(dxi.begin(), dxi.end(), 0.0);
        std::fill(dzj.begin(), dzj.end(), 0.0);
        kernel_pair(spec, raw.data(), xb, zb, g(i, j), dp.data(), dxi.data(), dzj.data());
        for (int dd = 0; dd < d; ++dd) {
          dx(i, dd) += dxi[dd];
          dz(j, dd) += dzj[dd];
        }
      }
    }
    if (t.needs_grad(params)) t.adj(params).col(0) += dp;
    if (t.needs_grad(x)) t.adj(x) += dx;
    if (t.needs_grad(z)) t.adj(z) += dz;
  });
  return out;
}

// k(x, x) as a differentiable scalar (1x1) of the raw parameters.
inline ad::Var total_variance(const KernelSpec& spec, ad::Var params) {
  const int stride = spec.member_stride();
  std::vector<ad::Var> terms;
  for (std::size_t m = 0; m < spec.members.size(); ++m) {
    const int at = static_cast<int>(m) * stride;
    ad::Var var = ad::cwise_softplus(ad::block(params, at + (spec.weighted ? 1 : 0), 0, 1, 1));
    if (spec.weighted) {
      ad::Var w = ad::cwise_softplus(ad::block(params, at, 0, 1, 1));
      var = ad::cwise_mul(w, var);
    }
    terms.push_back(var);
  }
  return ad::add_n(terms);
}

}  // namespace kop

}  // namespace dgpfm
