#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "dgpfm/common.hpp"
#include "dgpfm/fft.hpp"

// Reverse-mode automatic differentiation over dense matrices. A Tape records
// one forward pass as a flat list of nodes; backward() walks the list in
// reverse, calling each node's pullback to accumulate adjoints into its
// parents. Ops whose inputs are all constants are skipped during the sweep.
//
// Matrix-calculus conventions: for a scalar loss f and node value X, the
// adjoint Xbar has the same shape as X with (Xbar)_ij = df/dX_ij.

namespace dgpfm::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  bool valid() const { return tape != nullptr && idx >= 0; }
};

class Tape {
 public:
  Var leaf(Mat value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), Mat(), false, requires_grad, nullptr});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }
  Var constant(Mat value) { return leaf(std::move(value), false); }

  // Reserve an op node whose pullback is attached afterwards (so the closure
  // can capture the node's own handle).
  Var push(Mat value, bool requires_grad) {
    return leaf(std::move(value), requires_grad);
  }
  void set_pull(Var v, std::function<void(Tape&)> pull) {
    nodes_[v.idx].pull = std::move(pull);
  }

  const Mat& val(Var v) const { return nodes_[v.idx].value; }
  bool needs_grad(Var v) const { return nodes_[v.idx].needs_grad; }

  // Adjoint accumulation target; allocates zeros on first touch.
  Mat& adj(Var v) {
    Node& n = nodes_[v.idx];
    if (!n.has_adj) {
      n.adj = Mat::Zero(n.value.rows(), n.value.cols());
      n.has_adj = true;
    }
    return n.adj;
  }
  bool has_adj(Var v) const { return nodes_[v.idx].has_adj; }

  // Gradient after backward(); zeros if the node was never reached.
  Mat grad(Var v) const {
    const Node& n = nodes_[v.idx];
    return n.has_adj ? n.adj : Mat::Zero(n.value.rows(), n.value.cols());
  }

  void backward(Var root) {
    const Node& r = nodes_[root.idx];
    if (r.value.rows() != 1 || r.value.cols() != 1)
      throw numerical_failure("backward: root must be a scalar");
    adj(root)(0, 0) += 1.0;
    for (int i = root.idx; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.pull && n.has_adj && n.needs_grad) n.pull(*this);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Mat value;
    Mat adj;
    bool has_adj = false;
    bool needs_grad = true;
    std::function<void(Tape&)> pull;
  };
  std::vector<Node> nodes_;
};

namespace detail {
inline Tape& tape_of(Var a) { return *a.tape; }
inline bool any_requires(std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (v.tape->needs_grad(v)) return true;
  return false;
}
}  // namespace detail

// ---- arithmetic ----

inline Var add(Var a, Var b) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a) + t.val(b), detail::any_requires({a, b}));
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    if (t.needs_grad(a)) t.adj(a) += g;
    if (t.needs_grad(b)) t.adj(b) += g;
  });
  return out;
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a) - t.val(b), detail::any_requires({a, b}));
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    if (t.needs_grad(a)) t.adj(a) += g;
    if (t.needs_grad(b)) t.adj(b) -= g;
  });
  return out;
}

inline Var neg(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(-t.val(a), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a)) t.adj(a) -= t.adj(out);
  });
  return out;
}

inline Var scale(double c, Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(c * t.val(a), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a)) t.adj(a) += c * t.adj(out);
  });
  return out;
}

inline Var shift(Var a, double c) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a).array() + c, t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a)) t.adj(a) += t.adj(out);
  });
  return out;
}

inline Var matmul(Var a, Var b) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a) * t.val(b), detail::any_requires({a, b}));
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    if (t.needs_grad(a)) t.adj(a) += g * t.val(b).transpose();
    if (t.needs_grad(b)) t.adj(b) += t.val(a).transpose() * g;
  });
  return out;
}

inline Var cwise_mul(Var a, Var b) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a).cwiseProduct(t.val(b)), detail::any_requires({a, b}));
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    if (t.needs_grad(a)) t.adj(a) += g.cwiseProduct(t.val(b));
    if (t.needs_grad(b)) t.adj(b) += g.cwiseProduct(t.val(a));
  });
  return out;
}

inline Var cwise_div(Var a, Var b) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a).cwiseQuotient(t.val(b)), detail::any_requires({a, b}));
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    if (t.needs_grad(a)) t.adj(a) += g.cwiseQuotient(t.val(b));
    if (t.needs_grad(b))
      t.adj(b) -= g.cwiseProduct(t.val(out)).cwiseQuotient(t.val(b));
  });
  return out;
}

// value = s * A for a 1x1 node s.
inline Var scalar_mul(Var s, Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(s)(0, 0) * t.val(a), detail::any_requires({s, a}));
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    if (t.needs_grad(s)) t.adj(s)(0, 0) += g.cwiseProduct(t.val(a)).sum();
    if (t.needs_grad(a)) t.adj(a) += t.val(s)(0, 0) * g;
  });
  return out;
}

inline Var transpose(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a).transpose(), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a)) t.adj(a) += t.adj(out).transpose();
  });
  return out;
}

// ---- coefficient-wise nonlinearities ----

inline Var cwise_exp(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a).array().exp(), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a)) t.adj(a) += t.adj(out).cwiseProduct(t.val(out));
  });
  return out;
}

inline Var cwise_log(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a).array().log(), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a)) t.adj(a) += t.adj(out).cwiseQuotient(t.val(a));
  });
  return out;
}

inline Var cwise_sqrt(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a).array().sqrt(), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a))
      t.adj(a) += (0.5 * t.adj(out).array() / t.val(out).array()).matrix();
  });
  return out;
}

inline Var cwise_square(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a).array().square(), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a)) t.adj(a) += 2.0 * t.adj(out).cwiseProduct(t.val(a));
  });
  return out;
}

inline Var cwise_softplus(Var a) {
  Tape& t = detail::tape_of(a);
  Mat v = t.val(a).unaryExpr([](double x) { return softplus(x); });
  Var out = t.push(std::move(v), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a)) {
      Mat s = t.val(a).unaryExpr([](double x) { return logistic(x); });
      t.adj(a) += t.adj(out).cwiseProduct(s);
    }
  });
  return out;
}

// Elementwise max(x, floor); gradient passes only where x exceeds the floor.
inline Var cwise_clamp_min(Var a, double floor) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a).cwiseMax(floor), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a)) {
      Mat mask = (t.val(a).array() > floor).cast<double>();
      t.adj(a) += t.adj(out).cwiseProduct(mask);
    }
  });
  return out;
}

// ---- reductions and shape ops ----

inline Var sum(Var a) {
  Tape& t = detail::tape_of(a);
  Mat v(1, 1);
  v(0, 0) = t.val(a).sum();
  Var out = t.push(std::move(v), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a)) t.adj(a).array() += t.adj(out)(0, 0);
  });
  return out;
}

inline Var rowsum(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a).rowwise().sum(), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a))
      t.adj(a) += t.adj(out) * Mat::Ones(1, t.val(a).cols());
  });
  return out;
}

inline Var colsum(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a).colwise().sum(), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a))
      t.adj(a) += Mat::Ones(t.val(a).rows(), 1) * t.adj(out);
  });
  return out;
}

inline Var diag_part(Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a).diagonal(), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a)) t.adj(a).diagonal() += t.adj(out).col(0);
  });
  return out;
}

// K + v * I (1x1 v) or K + diag(v) (n x 1 v).
inline Var add_diag(Var a, Var v) {
  Tape& t = detail::tape_of(a);
  Mat out_v = t.val(a);
  const bool scalar = (t.val(v).rows() == 1 && t.val(v).cols() == 1);
  if (scalar)
    out_v.diagonal().array() += t.val(v)(0, 0);
  else
    out_v.diagonal() += t.val(v).col(0);
  Var out = t.push(std::move(out_v), detail::any_requires({a, v}));
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    if (t.needs_grad(a)) t.adj(a) += g;
    if (t.needs_grad(v)) {
      if (scalar)
        t.adj(v)(0, 0) += g.diagonal().sum();
      else
        t.adj(v).col(0) += g.diagonal();
    }
  });
  return out;
}

// diag(v) * A for a column vector v.
inline Var scale_rows(Var v, Var a) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(v).col(0).asDiagonal() * t.val(a), detail::any_requires({v, a}));
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    if (t.needs_grad(v))
      t.adj(v).col(0) += g.cwiseProduct(t.val(a)).rowwise().sum();
    if (t.needs_grad(a)) t.adj(a) += t.val(v).col(0).asDiagonal() * g;
  });
  return out;
}

// A * diag(v) for a column vector v.
inline Var scale_cols(Var a, Var v) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a) * t.val(v).col(0).asDiagonal(), detail::any_requires({a, v}));
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    if (t.needs_grad(a)) t.adj(a) += g * t.val(v).col(0).asDiagonal();
    if (t.needs_grad(v))
      t.adj(v).col(0) += g.cwiseProduct(t.val(a)).colwise().sum().transpose();
  });
  return out;
}

inline Var block(Var a, Eigen::Index i, Eigen::Index j, Eigen::Index p, Eigen::Index q) {
  Tape& t = detail::tape_of(a);
  Var out = t.push(t.val(a).block(i, j, p, q), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a)) t.adj(a).block(i, j, p, q) += t.adj(out);
  });
  return out;
}

inline Var concat_cols(const std::vector<Var>& parts) {
  Tape& t = detail::tape_of(parts.front());
  Eigen::Index rows = t.val(parts.front()).rows(), cols = 0;
  bool req = false;
  for (Var p : parts) {
    cols += t.val(p).cols();
    req = req || t.needs_grad(p);
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    v.middleCols(at, t.val(p).cols()) = t.val(p);
    at += t.val(p).cols();
  }
  Var out = t.push(std::move(v), req);
  std::vector<Var> ps = parts;
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    Eigen::Index at = 0;
    for (Var p : ps) {
      const Eigen::Index w = t.val(p).cols();
      if (t.needs_grad(p)) t.adj(p) += g.middleCols(at, w);
      at += w;
    }
  });
  return out;
}

inline Var concat_rows(const std::vector<Var>& parts) {
  Tape& t = detail::tape_of(parts.front());
  Eigen::Index cols = t.val(parts.front()).cols(), rows = 0;
  bool req = false;
  for (Var p : parts) {
    rows += t.val(p).rows();
    req = req || t.needs_grad(p);
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    v.middleRows(at, t.val(p).rows()) = t.val(p);
    at += t.val(p).rows();
  }
  Var out = t.push(std::move(v), req);
  std::vector<Var> ps = parts;
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    Eigen::Index at = 0;
    for (Var p : ps) {
      const Eigen::Index h = t.val(p).rows();
      if (t.needs_grad(p)) t.adj(p) += g.middleRows(at, h);
      at += h;
    }
  });
  return out;
}

// Column-major reinterpretation to a new shape with the same element count.
inline Var reshape(Var a, Eigen::Index r, Eigen::Index c) {
  Tape& t = detail::tape_of(a);
  const Eigen::Index ar = t.val(a).rows(), ac = t.val(a).cols();
  Mat v = Eigen::Map<const Mat>(t.val(a).data(), r, c);
  Var out = t.push(std::move(v), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (t.needs_grad(a)) {
      const Mat& g = t.adj(out);
      t.adj(a) += Eigen::Map<const Mat>(g.data(), ar, ac);
    }
  });
  return out;
}

// ---- factorizations and solves ----

// Cholesky of an SPD matrix, escalating a relative diagonal jitter when the
// plain factorization fails. The node's value is the factor of the matrix
// actually factorized (including any jitter), keeping forward and backward
// consistent.
inline Var chol(Var a) {
  Tape& t = detail::tape_of(a);
  const Mat& k = t.val(a);
  const double mean_diag = k.diagonal().mean();
  static constexpr double kJitterLevels[] = {0.0, 1e-8, 1e-6, 1e-4};
  Mat l;
  bool ok = false;
  double attempted = 0.0;
  for (double level : kJitterLevels) {
    attempted = level * std::abs(mean_diag);
    Mat kj = k;
    kj.diagonal().array() += attempted;
    Eigen::LLT<Mat> llt(kj);
    if (llt.info() == Eigen::Success) {
      l = llt.matrixL();
      ok = true;
      break;
    }
  }
  if (!ok)
    throw numerical_failure("cholesky failed after jitter escalation", attempted);
  Var out = t.push(std::move(l), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (!t.needs_grad(a)) return;
    // Murray (2016): with P = phi(L^T Lbar), phi = lower triangle with halved
    // diagonal, Kbar = sym(L^{-T} P L^{-1}).
    const Mat& lv = t.val(out);
    Mat p = Mat(lv.transpose() * t.adj(out)).triangularView<Eigen::Lower>();
    p.diagonal() *= 0.5;
    Mat m = lv.transpose().triangularView<Eigen::Upper>().solve(p);  // L^{-T} P
    Mat z = lv.transpose().triangularView<Eigen::Upper>().solve(m.transpose()).transpose();
    t.adj(a) += 0.5 * (z + z.transpose());
  });
  return out;
}

// X = L^{-1} B for lower-triangular L.
inline Var solve_lower(Var l, Var b) {
  Tape& t = detail::tape_of(l);
  Mat x = t.val(l).triangularView<Eigen::Lower>().solve(t.val(b));
  Var out = t.push(std::move(x), detail::any_requires({l, b}));
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    Mat bb = t.val(l).transpose().triangularView<Eigen::Upper>().solve(g);
    if (t.needs_grad(b)) t.adj(b) += bb;
    if (t.needs_grad(l)) {
      Mat lb = Mat(-(bb * t.val(out).transpose())).triangularView<Eigen::Lower>();
      t.adj(l) += lb;
    }
  });
  return out;
}

// X = L^{-T} B for lower-triangular L.
inline Var solve_lower_t(Var l, Var b) {
  Tape& t = detail::tape_of(l);
  Mat x = t.val(l).transpose().triangularView<Eigen::Upper>().solve(t.val(b));
  Var out = t.push(std::move(x), detail::any_requires({l, b}));
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    Mat bb = t.val(l).triangularView<Eigen::Lower>().solve(g);
    if (t.needs_grad(b)) t.adj(b) += bb;
    if (t.needs_grad(l)) {
      Mat lb = Mat(-(t.val(out) * bb.transpose())).triangularView<Eigen::Lower>();
      t.adj(l) += lb;
    }
  });
  return out;
}

// ---- real DFTs over columns ----
// Complex half-spectra are stored interleaved: rows (2k, 2k+1) hold the real
// and imaginary parts of bin k.

inline Var rdft_cols(Var a, Eigen::Index bins) {
  Tape& t = detail::tape_of(a);
  const Mat& x = t.val(a);
  const auto n = static_cast<std::size_t>(x.rows());
  Mat v(2 * bins, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    std::vector<double> col(x.col(c).data(), x.col(c).data() + n);
    auto spec = fft::rdft(col.data(), n);
    for (Eigen::Index k = 0; k < bins; ++k) {
      const bool have = static_cast<std::size_t>(k) < spec.size();
      v(2 * k, c) = have ? spec[k].real() : 0.0;
      v(2 * k + 1, c) = have ? spec[k].imag() : 0.0;
    }
  }
  Var out = t.push(std::move(v), t.needs_grad(a));
  t.set_pull(out, [=, nn = n](Tape& t) {
    if (!t.needs_grad(a)) return;
    const Mat& g = t.adj(out);
    Mat& ga = t.adj(a);
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      std::vector<fft::cd> gbar(bins);
      for (Eigen::Index k = 0; k < bins; ++k) gbar[k] = fft::cd(g(2 * k, c), g(2 * k + 1, c));
      auto xb = fft::rdft_adjoint(gbar.data(), gbar.size(), nn);
      for (std::size_t j = 0; j < nn; ++j) ga(static_cast<Eigen::Index>(j), c) += xb[j];
    }
  });
  return out;
}

inline Var irdft_cols(Var a, Eigen::Index n) {
  Tape& t = detail::tape_of(a);
  const Mat& s = t.val(a);
  const Eigen::Index bins = s.rows() / 2;
  Mat v(n, s.cols());
  for (Eigen::Index c = 0; c < s.cols(); ++c) {
    std::vector<fft::cd> spec(bins);
    for (Eigen::Index k = 0; k < bins; ++k) spec[k] = fft::cd(s(2 * k, c), s(2 * k + 1, c));
    auto x = fft::irdft(spec.data(), spec.size(), static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) v(j, c) = x[static_cast<std::size_t>(j)];
  }
  Var out = t.push(std::move(v), t.needs_grad(a));
  t.set_pull(out, [=](Tape& t) {
    if (!t.needs_grad(a)) return;
    const Mat& g = t.adj(out);
    Mat& ga = t.adj(a);
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      std::vector<double> xb(g.col(c).data(), g.col(c).data() + n);
      auto sb = fft::irdft_adjoint(xb.data(), static_cast<std::size_t>(n),
                                   static_cast<std::size_t>(bins));
      for (Eigen::Index k = 0; k < bins; ++k) {
        ga(2 * k, c) += sb[static_cast<std::size_t>(k)].real();
        ga(2 * k + 1, c) += sb[static_cast<std::size_t>(k)].imag();
      }
    }
  });
  return out;
}

// Entrywise complex product of interleaved spectra of equal shape.
inline Var cplx_mul(Var a, Var b) {
  Tape& t = detail::tape_of(a);
  const Mat& av = t.val(a);
  const Mat& bv = t.val(b);
  Mat v(av.rows(), av.cols());
  for (Eigen::Index k = 0; k + 1 < av.rows(); k += 2)
    for (Eigen::Index c = 0; c < av.cols(); ++c) {
      const double ar = av(k, c), ai = av(k + 1, c), br = bv(k, c), bi = bv(k + 1, c);
      v(k, c) = ar * br - ai * bi;
      v(k + 1, c) = ar * bi + ai * br;
    }
  Var out = t.push(std::move(v), detail::any_requires({a, b}));
  t.set_pull(out, [=](Tape& t) {
    const Mat& g = t.adj(out);
    const Mat& av = t.val(a);
    const Mat& bv = t.val(b);
    for (Eigen::Index k = 0; k + 1 < g.rows(); k += 2)
      for (Eigen::Index c = 0; c < g.cols(); ++c) {
        const double gr = g(k, c), gi = g(k + 1, c);
        if (t.needs_grad(a)) {
          t.adj(a)(k, c) += gr * bv(k, c) + gi * bv(k + 1, c);
          t.adj(a)(k + 1, c) += -gr * bv(k + 1, c) + gi * bv(k, c);
        }
        if (t.needs_grad(b)) {
          t.adj(b)(k, c) += gr * av(k, c) + gi * av(k + 1, c);
          t.adj(b)(k + 1, c) += -gr * av(k + 1, c) + gi * av(k, c);
        }
      }
  });
  return out;
}

inline Var add_n(const std::vector<Var>& parts) {
  Var acc = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return acc;
}

}  // namespace dgpfm::ad
