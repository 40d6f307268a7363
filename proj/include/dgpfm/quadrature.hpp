#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dgpfm/common.hpp"

// Quadrature rules and the tensor-product projection grids the model
// integrates over. Rules are built per dimension on [a,b] and combined into a
// row-major flattened grid of up to three dimensions.

namespace dgpfm {

enum class RuleKind : std::uint8_t { GaussLegendre, Trapezoid };

struct Rule1D {
  RuleKind kind = RuleKind::GaussLegendre;
  Vec nodes;    // strictly increasing, inside [a,b]
  Vec weights;  // positive, summing to b-a for both rules
  double a = 0.0, b = 1.0;
};

// Gauss-Legendre nodes/weights on [a,b]: roots of the degree-n Legendre
// polynomial by Newton iteration on the three-term recurrence.
inline Rule1D gauss_legendre(int n, double a, double b) {
  if (n < 1) throw unsupported_grid("gauss_legendre: need at least one node");
  if (a >= b) throw unsupported_grid("gauss_legendre: empty interval");
  Rule1D rule;
  rule.kind = RuleKind::GaussLegendre;
  rule.a = a;
  rule.b = b;
  rule.nodes = Vec(n);
  rule.weights = Vec(n);
  for (int i = 0; i < n; ++i) {
    // Chebyshev-like initial guess, then Newton on P_n.
    double x = std::cos(kPi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 1.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = p2;
      }
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double step = p1 / dp;
      x -= step;
      if (std::abs(p1) < 1e-14 && std::abs(step) < 1e-14) break;
    }
    // cos-based guesses run from largest root down; store ascending.
    rule.nodes[n - 1 - i] = 0.5 * (a + b) + 0.5 * (b - a) * x;
    rule.weights[n - 1 - i] = (b - a) / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

// Composite trapezoid on n equispaced nodes spanning [a,b] inclusive.
inline Rule1D trapezoidal(int n, double a, double b) {
  if (n < 2) throw unsupported_grid("trapezoidal: need at least two nodes");
  if (a >= b) throw unsupported_grid("trapezoidal: empty interval");
  Rule1D rule;
  rule.kind = RuleKind::Trapezoid;
  rule.a = a;
  rule.b = b;
  rule.nodes = Vec::LinSpaced(n, a, b);
  const double h = (b - a) / static_cast<double>(n - 1);
  rule.weights = Vec::Constant(n, h);
  rule.weights[0] = 0.5 * h;
  rule.weights[n - 1] = 0.5 * h;
  return rule;
}

inline Rule1D make_rule(RuleKind kind, int n, double a, double b) {
  return kind == RuleKind::GaussLegendre ? gauss_legendre(n, a, b) : trapezoidal(n, a, b);
}

// Tensor-product quadrature grid over a box in up to three dimensions.
// Points are flattened row-major: the last dimension varies fastest.
struct ProjectionGrid {
  std::vector<Rule1D> rules;  // one per dimension
  Mat nodes;                  // Q x d
  Vec weights;                // Q, product of per-dim weights
  bool equispaced = false;    // true when every rule is equispaced

  int dim() const { return static_cast<int>(rules.size()); }
  Eigen::Index count() const { return nodes.rows(); }
  int size_along(int j) const { return static_cast<int>(rules[j].nodes.size()); }
};

inline ProjectionGrid tensor_grid(const std::vector<Rule1D>& rules) {
  const int d = static_cast<int>(rules.size());
  if (d < 1 || d > 3) throw unsupported_grid("tensor_grid: dimension must be 1, 2, or 3");
  Eigen::Index q = 1;
  bool equi = true;
  for (const Rule1D& r : rules) {
    q *= r.nodes.size();
    equi = equi && (r.kind == RuleKind::Trapezoid);
  }
  ProjectionGrid grid;
  grid.rules = rules;
  grid.nodes = Mat(q, d);
  grid.weights = Vec::Ones(q);
  grid.equispaced = equi;
  for (Eigen::Index r = 0; r < q; ++r) {
    Eigen::Index rem = r;
    for (int j = d - 1; j >= 0; --j) {
      const Eigen::Index nj = rules[j].nodes.size();
      const Eigen::Index idx = rem % nj;
      rem /= nj;
      grid.nodes(r, j) = rules[j].nodes[idx];
      grid.weights[r] *= rules[j].weights[idx];
    }
  }
  return grid;
}

inline ProjectionGrid tensor_grid(RuleKind kind, const std::vector<int>& sizes,
                                  const std::vector<double>& lo, const std::vector<double>& hi) {
  if (lo.size() != sizes.size() || hi.size() != sizes.size())
    throw unsupported_grid("tensor_grid: bounds/sizes mismatch");
  std::vector<Rule1D> rules;
  rules.reserve(sizes.size());
  for (std::size_t j = 0; j < sizes.size(); ++j)
    rules.push_back(make_rule(kind, sizes[j], lo[j], hi[j]));
  return tensor_grid(rules);
}

}  // namespace dgpfm
