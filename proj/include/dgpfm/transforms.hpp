#pragma once

#include <utility>
#include <vector>

#include "dgpfm/ad.hpp"
#include "dgpfm/kernels.hpp"
#include "dgpfm/quadrature.hpp"

// The discrete integral transforms realizing each linear layer. Latent fields
// are (Q x C) matrices over the projection grid (row-major flattened tensor
// order, last dimension fastest). A dimension-wise transform contracts a 1D
// operator against one tensor axis at a time and sums the d contributions.
//
//   qr_apply:   per axis j, W_j * diag(alpha_j) along that axis
//   ft_apply:   per axis j, real DFT -> multiply retained modes -> inverse
//   full_apply: one dense |X_Q| x |X_Q| operator times diag(tensor weights)

namespace dgpfm::transforms {

namespace detail {

inline std::vector<int> grid_sizes(const ProjectionGrid& grid) {
  std::vector<int> s(grid.rules.size());
  for (std::size_t j = 0; j < grid.rules.size(); ++j)
    s[j] = static_cast<int>(grid.rules[j].nodes.size());
  return s;
}

// Applies `op` along tensor axis `axis` of the flattened column h (Q x 1).
// `op` receives a matrix whose rows run along that axis (one fiber per
// column) and must return a same-shaped result.
template <class F>
ad::Var apply_axis(ad::Var h, const std::vector<int>& sizes, int axis, F&& op) {
  const int d = static_cast<int>(sizes.size());
  const Eigen::Index q = h.tape->val(h).rows();
  if (d == 1) return op(h);
  if (d == 2) {
    const int n1 = sizes[0], n2 = sizes[1];
    ad::Var m = ad::reshape(h, n2, n1);  // column-major view: (i2, i1)
    if (axis == 1) return ad::reshape(op(m), q, 1);
    return ad::reshape(ad::transpose(op(ad::transpose(m))), q, 1);
  }
  const int n1 = sizes[0], n2 = sizes[1], n3 = sizes[2];
  if (axis == 2) return ad::reshape(op(ad::reshape(h, n3, n1 * n2)), q, 1);
  if (axis == 0) {
    ad::Var m = ad::transpose(ad::reshape(h, n2 * n3, n1));  // (i1, i2*n3+i3)
    return ad::reshape(ad::transpose(op(m)), q, 1);
  }
  // Middle axis: handle one i1-slab at a time.
  std::vector<ad::Var> slabs;
  slabs.reserve(n1);
  for (int i1 = 0; i1 < n1; ++i1) {
    ad::Var b = ad::block(h, static_cast<Eigen::Index>(i1) * n2 * n3, 0, n2 * n3, 1);
    ad::Var m = ad::transpose(ad::reshape(b, n3, n2));  // (i2, i3)
    slabs.push_back(ad::reshape(ad::transpose(op(m)), n2 * n3, 1));
  }
  return ad::concat_rows(slabs);
}

template <class F>
ad::Var apply_dimension_wise(ad::Var h, const std::vector<int>& sizes, F&& per_axis_op) {
  std::vector<ad::Var> contributions;
  for (int j = 0; j < static_cast<int>(sizes.size()); ++j)
    contributions.push_back(
        apply_axis(h, sizes, j, [&](ad::Var m) { return per_axis_op(j, m); }));
  return ad::add_n(contributions);
}

}  // namespace detail

// Nodal-weight transform: sum_j (W_j diag(alpha_j)) applied along axis j,
// with alpha_j the per-dimension quadrature weights.
inline ad::Var qr_apply(const std::vector<ad::Var>& w, ad::Var H, const ProjectionGrid& grid) {
  ad::Tape& t = *H.tape;
  const std::vector<int> sizes = detail::grid_sizes(grid);
  if (w.size() != sizes.size()) throw unsupported_grid("qr_apply: weight/dimension mismatch");
  for (std::size_t j = 0; j < w.size(); ++j) {
    const Mat& wj = t.val(w[j]);
    if (wj.rows() != sizes[j] || wj.cols() != sizes[j])
      throw unsupported_grid("qr_apply: weight shape mismatch");
  }
  std::vector<ad::Var> walpha;
  for (std::size_t j = 0; j < w.size(); ++j) {
    ad::Var alpha = t.constant(grid.rules[j].weights);
    walpha.push_back(ad::scale_cols(w[j], alpha));
  }
  const Eigen::Index q = t.val(H).rows(), c = t.val(H).cols();
  std::vector<ad::Var> cols;
  cols.reserve(c);
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    ad::Var h = (c == 1) ? H : ad::block(H, 0, ch, q, 1);
    cols.push_back(detail::apply_dimension_wise(
        h, sizes, [&](int j, ad::Var m) { return ad::matmul(walpha[j], m); }));
  }
  return (c == 1) ? cols[0] : ad::concat_cols(cols);
}

// Spectral transform: per axis, truncated real DFT, entrywise complex
// multiply with that axis's retained spectrum, inverse DFT; contributions
// summed over axes. Spectra are interleaved (2 M_j x 1) re/im columns.
inline ad::Var ft_apply(const std::vector<ad::Var>& spectra, ad::Var H,
                        const ProjectionGrid& grid) {
  ad::Tape& t = *H.tape;
  if (!grid.equispaced) throw unsupported_grid("ft_apply: grid must be equispaced per dimension");
  const std::vector<int> sizes = detail::grid_sizes(grid);
  if (spectra.size() != sizes.size())
    throw unsupported_grid("ft_apply: spectrum/dimension mismatch");
  std::vector<Eigen::Index> modes(spectra.size());
  for (std::size_t j = 0; j < spectra.size(); ++j) {
    modes[j] = t.val(spectra[j]).rows() / 2;
    if (modes[j] < 1) throw unsupported_grid("ft_apply: need at least one retained mode");
    if (modes[j] > sizes[j] / 2 + 1)
      throw unsupported_grid("ft_apply: more modes than the grid supports");
  }
  const Eigen::Index q = t.val(H).rows(), c = t.val(H).cols();
  auto axis_op = [&](int j, ad::Var m) {
    const Eigen::Index ncols = t.val(m).cols();
    ad::Var spec = (ncols == 1)
                       ? spectra[j]
                       : ad::matmul(spectra[j], t.constant(Mat::Ones(1, ncols)));
    ad::Var hat = ad::rdft_cols(m, modes[j]);
    return ad::irdft_cols(ad::cplx_mul(hat, spec), sizes[j]);
  };
  std::vector<ad::Var> cols;
  cols.reserve(c);
  for (Eigen::Index ch = 0; ch < c; ++ch) {
    ad::Var h = (c == 1) ? H : ad::block(H, 0, ch, q, 1);
    cols.push_back(detail::apply_dimension_wise(h, sizes, axis_op));
  }
  return (c == 1) ? cols[0] : ad::concat_cols(cols);
}

// Dense transform over the whole grid: W * diag(tensor weights) * h per
// channel. Kept for the dimension-wise-vs-full comparison; deliberately
// capped in size.
inline ad::Var full_apply(ad::Var W, ad::Var H, const ProjectionGrid& grid) {
  ad::Tape& t = *H.tape;
  const Eigen::Index q = t.val(H).rows();
  if (q > 4096) throw unsupported_grid("full_apply: grid larger than 4096 nodes");
  if (t.val(W).rows() != q || t.val(W).cols() != q)
    throw unsupported_grid("full_apply: weight must be square of the grid size");
  ad::Var alpha = t.constant(grid.weights);
  return ad::matmul(W, ad::scale_rows(alpha, H));
}

// ---- plain (value-only) wrappers reusing the tape implementations ----

inline Mat qr_apply(const std::vector<Mat>& w, const Mat& H, const ProjectionGrid& grid) {
  ad::Tape t;
  std::vector<ad::Var> wv;
  for (const Mat& m : w) wv.push_back(t.constant(m));
  return t.val(qr_apply(wv, t.constant(H), grid));
}

inline Mat ft_apply(const std::vector<Mat>& spectra, const Mat& H, const ProjectionGrid& grid) {
  ad::Tape t;
  std::vector<ad::Var> sv;
  for (const Mat& m : spectra) sv.push_back(t.constant(m));
  return t.val(ft_apply(sv, t.constant(H), grid));
}

inline Mat full_apply(const Mat& W, const Mat& H, const ProjectionGrid& grid) {
  ad::Tape t;
  return t.val(full_apply(t.constant(W), t.constant(H), grid));
}

// Two independent routes to the same linear-layer output, exposed for tests:
// the explicit interpolate-then-integrate route (cross-covariance times
// inverse Gram) versus the direct nodal route that exploits their
// cancellation when the field lives on the quadrature nodes.
inline std::pair<Vec, Vec> cancellation_check(const KernelSpec& spec, const Vec& raw,
                                              const ProjectionGrid& grid, const Mat& W,
                                              const Vec& h) {
  const Mat k_qq = cov_matrix_sym(spec, raw, grid.nodes);
  Mat wd = W * grid.weights.asDiagonal();
  Vec lhs = wd * (k_qq * chol_solve(k_qq, h));
  Vec rhs = wd * h;
  return {lhs, rhs};
}

}  // namespace dgpfm::transforms
