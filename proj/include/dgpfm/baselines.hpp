#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dgpfm/data.hpp"
#include "dgpfm/inference.hpp"
#include "dgpfm/model.hpp"

// Function-on-function linear regression against a Fourier dictionary, plus
// the single-linear-layer variant of the deep model. Both serve as reference
// points for the full model.

namespace dgpfm {

// ---------------------------------------------------------------------------
// Fourier dictionary on a box: per dimension the functions
// {1, cos(2*pi*t), sin(2*pi*t), cos(4*pi*t), ...} in that order on the unit
// coordinate t, multiplied across dimensions (first dimension fastest).
// Orthogonal (not orthonormal) under the uniform measure on the box.
// ---------------------------------------------------------------------------

struct FourierBasis {
  std::vector<int> counts;  // functions per dimension
  Mat box;                  // (d x 2) domain

  int dim() const { return static_cast<int>(counts.size()); }
  int size() const {
    int k = 1;
    for (int c : counts) k *= c;
    return k;
  }
  void validate() const {
    if (counts.empty() || counts.size() > 2)
      throw std::invalid_argument("fourier basis: 1D or 2D domains only");
    for (int c : counts)
      if (c < 1) throw std::invalid_argument("fourier basis: need at least one function");
    if (box.rows() != dim() || box.cols() != 2)
      throw std::invalid_argument("fourier basis: box shape mismatch");
    for (Eigen::Index j = 0; j < box.rows(); ++j)
      if (!(box(j, 1) > box(j, 0))) throw std::invalid_argument("fourier basis: empty box side");
  }

  // Integer frequency of 1D function idx: 0, 1, 1, 2, 2, ...
  static int freq_1d(int idx) { return (idx + 1) / 2; }
  static double eval_1d(int idx, double t) {
    if (idx == 0) return 1.0;
    const double ang = kTwoPi * double(freq_1d(idx)) * t;
    return (idx % 2 == 1) ? std::cos(ang) : std::sin(ang);
  }

  // Sum over dimensions of the fourth power of the per-dimension frequency,
  // used by the curvature-flavored ridge weighting.
  double freq4(int index) const {
    double s = 0;
    int rem = index;
    for (int c : counts) {
      int i = rem % c;
      rem /= c;
      double f = double(freq_1d(i));
      s += f * f * f * f;
    }
    return s;
  }
};

inline FourierBasis make_fourier_basis(std::vector<int> counts, Mat box) {
  FourierBasis fb{std::move(counts), std::move(box)};
  fb.validate();
  return fb;
}

inline FourierBasis make_fourier_basis_unit(std::vector<int> counts) {
  Mat box(static_cast<Eigen::Index>(counts.size()), 2);
  box.col(0).setZero();
  box.col(1).setOnes();
  return make_fourier_basis(std::move(counts), std::move(box));
}

// (n x K) matrix of basis values at the points x (n x d).
inline Mat basis_matrix(const FourierBasis& fb, const Mat& x) {
  fb.validate();
  if (x.cols() != fb.dim()) throw std::invalid_argument("basis_matrix: dimension mismatch");
  const Eigen::Index n = x.rows();
  const int k = fb.size();
  Mat out(n, k);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (int index = 0; index < k; ++index) {
      double v = 1.0;
      int rem = index;
      for (int j = 0; j < fb.dim(); ++j) {
        const int c = fb.counts[static_cast<std::size_t>(j)];
        const int i = rem % c;
        rem /= c;
        const double t = (x(r, j) - fb.box(j, 0)) / (fb.box(j, 1) - fb.box(j, 0));
        v *= FourierBasis::eval_1d(i, t);
      }
      out(r, index) = v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear function-on-function regression. The regression surface
// w(x, x') = sum_{k,l} omega_{kl} phi_k(x) psi_l(x') acts on input
// coefficients; an intercept function (coefficients in the output basis) is
// estimated jointly. Multi-component functions stack their coefficient
// blocks: inputs as (L * d0), outputs as (K * d1).
// ---------------------------------------------------------------------------

struct FlrModel {
  FourierBasis in_basis;   // psi
  FourierBasis out_basis;  // phi
  int d0 = 1, d1 = 1;
  Mat omega;      // (K*d1 x L*d0)
  Mat intercept;  // (K*d1 x 1)
  double ridge = 0;
  double proj_ridge = 1e-10;  // stabilizer for the per-instance projections
  bool freq_weighted = false;
};

namespace detail {

// Regularized least-squares coefficients of one function: columns of f are
// components, result stacks per-component blocks of length L.
inline Vec project_coeffs(const FourierBasis& fb, const Mat& x, const Mat& f, double reg) {
  const Mat psi = basis_matrix(fb, x);
  const int l = fb.size();
  Mat g = psi.transpose() * psi;
  g.diagonal().array() += reg;
  Eigen::LDLT<Mat> ldlt(g);
  if (ldlt.info() != Eigen::Success)
    throw numerical_failure("coefficient projection failed; raise the ridge");
  Vec out(static_cast<Eigen::Index>(l) * f.cols());
  for (Eigen::Index j = 0; j < f.cols(); ++j)
    out.segment(static_cast<Eigen::Index>(l) * j, l) = ldlt.solve(psi.transpose() * f.col(j));
  return out;
}

}  // namespace detail

// Closed-form ridge fit: project every instance onto coefficients, then solve
// the normal equations for the coefficient-to-coefficient map and intercept.
// With `freq_weighted`, the ridge on omega_{kl} is scaled by
// 1 + freq(phi_k)^4 + freq(psi_l)^4, approximating a curvature penalty; the
// intercept is never penalized.
inline FlrModel flr_fit(const Dataset& train, const FourierBasis& in_basis,
                        const FourierBasis& out_basis, double ridge, bool freq_weighted = false) {
  in_basis.validate();
  out_basis.validate();
  if (ridge < 0) throw std::invalid_argument("flr_fit: ridge must be nonnegative");
  if (in_basis.dim() != train.d || out_basis.dim() != train.d)
    throw std::invalid_argument("flr_fit: basis dimension mismatch");
  if (train.instances.empty()) throw std::invalid_argument("flr_fit: empty dataset");
  const int l = in_basis.size(), k = out_basis.size();
  if (static_cast<long>(l) * k > 10000)
    throw std::invalid_argument("flr_fit: basis product too large (K*L <= 1e4)");

  FlrModel m;
  m.in_basis = in_basis;
  m.out_basis = out_basis;
  m.d0 = train.d0;
  m.d1 = train.d1;
  m.ridge = ridge;
  m.freq_weighted = freq_weighted;
  const double proj_reg = std::max(ridge, m.proj_ridge);

  const Eigen::Index n = static_cast<Eigen::Index>(train.instances.size());
  const Eigen::Index la = static_cast<Eigen::Index>(l) * train.d0;
  const Eigen::Index kb = static_cast<Eigen::Index>(k) * train.d1;
  Mat a(n, la + 1), b(n, kb);
  for (Eigen::Index i = 0; i < n; ++i) {
    const FunctionPair& p = train.instances[static_cast<std::size_t>(i)];
    a.row(i).head(la) = detail::project_coeffs(in_basis, p.x_in, p.f_in, proj_reg).transpose();
    a(i, la) = 1.0;
    b.row(i) = detail::project_coeffs(out_basis, p.x_out, p.y_out, proj_reg).transpose();
  }

  const Mat gram = a.transpose() * a;
  m.omega = Mat(kb, la);
  m.intercept = Mat(kb, 1);

  auto solve_columns = [&](const Mat& g) {
    Eigen::LLT<Mat> llt(g);
    if (llt.info() != Eigen::Success)
      throw numerical_failure(
          "flr_fit: normal equations are rank deficient; use a ridge strength > 0");
    return llt;
  };

  if (!freq_weighted) {
    Mat g = gram;
    g.diagonal().head(la).array() += ridge;
    Eigen::LLT<Mat> llt = solve_columns(g);
    Mat theta = llt.solve(a.transpose() * b);  // (la+1 x kb)
    m.omega = theta.topRows(la).transpose();
    m.intercept = theta.row(la).transpose();
  } else {
    // Row-dependent penalties: one solve per output coefficient.
    for (Eigen::Index row = 0; row < kb; ++row) {
      const int k_idx = static_cast<int>(row % k);
      Mat g = gram;
      for (Eigen::Index col = 0; col < la; ++col) {
        const int l_idx = static_cast<int>(col % l);
        g(col, col) += ridge * (1.0 + out_basis.freq4(k_idx) + in_basis.freq4(l_idx));
      }
      Eigen::LLT<Mat> llt = solve_columns(g);
      Vec theta = llt.solve(a.transpose() * b.col(row));
      m.omega.row(row) = theta.head(la).transpose();
      m.intercept(row, 0) = theta(la);
    }
  }
  return m;
}

// The fitted objective, for optimality checks: sum of squared coefficient
// residuals plus the (optionally frequency-weighted) ridge on omega.
inline double flr_objective(const FlrModel& m, const Dataset& train, const Mat& omega,
                            const Mat& intercept) {
  const double proj_reg = std::max(m.ridge, m.proj_ridge);
  double obj = 0;
  for (const FunctionPair& p : train.instances) {
    Vec cf = detail::project_coeffs(m.in_basis, p.x_in, p.f_in, proj_reg);
    Vec cy = detail::project_coeffs(m.out_basis, p.x_out, p.y_out, proj_reg);
    obj += (cy - (omega * cf + intercept.col(0))).squaredNorm();
  }
  const int k = m.out_basis.size(), l = m.in_basis.size();
  for (Eigen::Index r = 0; r < omega.rows(); ++r)
    for (Eigen::Index c = 0; c < omega.cols(); ++c) {
      double w = 1.0;
      if (m.freq_weighted)
        w = 1.0 + m.out_basis.freq4(static_cast<int>(r % k)) +
            m.in_basis.freq4(static_cast<int>(c % l));
      obj += m.ridge * w * omega(r, c) * omega(r, c);
    }
  return obj;
}

// Coefficient-space product followed by synthesis at the requested locations.
// Linear in the input function values.
inline Mat flr_predict(const FlrModel& m, const Mat& x_in, const Mat& f_in, const Mat& x_out) {
  if (f_in.cols() != m.d0) throw std::invalid_argument("flr_predict: input component mismatch");
  const double proj_reg = std::max(m.ridge, m.proj_ridge);
  Vec cf = detail::project_coeffs(m.in_basis, x_in, f_in, proj_reg);
  Vec cy = m.omega * cf + m.intercept.col(0);
  const Mat phi = basis_matrix(m.out_basis, x_out);
  const int k = m.out_basis.size();
  Mat out(x_out.rows(), m.d1);
  for (int j = 0; j < m.d1; ++j)
    out.col(j) = phi * cy.segment(static_cast<Eigen::Index>(k) * j, k);
  return out;
}

// Mean squared training residual per output component; the Gaussian
// predictive variance used when scoring the deterministic baseline.
inline Vec flr_residual_variance(const FlrModel& m, const Dataset& train) {
  Vec sq = Vec::Zero(m.d1);
  long n = 0;
  for (const FunctionPair& p : train.instances) {
    Mat pred = flr_predict(m, p.x_in, p.f_in, p.x_out);
    for (int j = 0; j < m.d1; ++j) sq(j) += (pred.col(j) - p.y_out.col(j)).squaredNorm();
    n += p.y_out.rows();
  }
  if (n == 0) throw std::invalid_argument("flr_residual_variance: no observations");
  return (sq / double(n)).cwiseMax(1e-12);
}

// ---------------------------------------------------------------------------
// The single-layer variant of the deep model: exactly one nodal linear
// transform on a Gauss-Legendre grid, no GP activations (hence no latent
// posteriors and no KL terms), trained by the shared inference loop.
// ---------------------------------------------------------------------------

inline ModelSpec flr_gp_spec(int d, int d0, int d1, int channels = 1) {
  ModelSpec s = make_model_spec(d, d0, d1, channels);
  s.layers = {LayerDesc::linear(TransformKind::Quadrature)};
  s.validate();
  return s;
}

struct FlrGpModel {
  ModelSpec spec;
  TrainResult result;
};

inline FlrGpModel flr_gp(const Dataset& ds, const ProjectionGrid& grid, const TrainConfig& cfg,
                         int channels = 1, uint64_t init_seed = 0,
                         const Normalization* denorm = nullptr, std::ostream* log = nullptr) {
  FlrGpModel m;
  m.spec = flr_gp_spec(ds.d, ds.d0, ds.d1, channels);
  ParamStore ps = init_params(m.spec, grid, init_seed);
  m.result = train(m.spec, grid, std::move(ps), ds, cfg, denorm, log);
  return m;
}

}  // namespace dgpfm
