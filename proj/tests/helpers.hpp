#pragma once

#include <functional>

#include "dgpfm/common.hpp"

namespace testutil {

using dgpfm::Mat;
using dgpfm::Vec;

// Central finite-difference gradient of a scalar function of a flat vector.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                       double h = 1e-5) {
  Vec g(x.size());
  Vec xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(x(i)));
    xp(i) = x(i) + step;
    const double fp = f(xp);
    xp(i) = x(i) - step;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * step);
  }
  return g;
}

// Relative error with an absolute floor so near-zero entries compare sanely.
inline double rel_err(double got, double want, double floor_ = 1e-8) {
  return std::abs(got - want) / std::max(floor_, std::abs(want));
}

inline double max_rel_err(const Vec& got, const Vec& want, double floor_ = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < got.size(); ++i)
    worst = std::max(worst, std::abs(got(i) - want(i)) /
                                std::max(floor_, std::abs(want(i))));
  return worst;
}

// Uniform points in [0,1]^d from the project RNG (deterministic).
inline Mat uniform_points(dgpfm::NormalSource& rng, Eigen::Index n, Eigen::Index d) {
  Mat x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) {
      const double u = 0.5 + 0.5 * std::erf(rng.draw() / std::sqrt(2.0));
      x(i, j) = u;
    }
  return x;
}

}  // namespace testutil
