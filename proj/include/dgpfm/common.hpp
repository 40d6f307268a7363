#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace dgpfm {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Error taxonomy shared by all modules. Callers that need to map failures
// onto process exit codes (the CLI) catch these by type.
struct numerical_failure : std::runtime_error {
  double attempted_jitter = 0.0;
  explicit numerical_failure(const std::string& msg, double jitter = 0.0)
      : std::runtime_error(msg), attempted_jitter(jitter) {}
};

struct unsupported_grid : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct format_error : std::runtime_error {
  std::uint64_t byte_offset = 0;
  format_error(const std::string& msg, std::uint64_t offset)
      : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
};

struct generation_failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct undefined_metric : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// softplus(x) = log(1 + e^x), the map from unconstrained to positive reals.
inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double softplus_inv(double y) {
  if (y > 30.0) return y;
  if (y <= 0.0) throw std::invalid_argument("softplus_inv: argument must be positive");
  return std::log(std::expm1(y));
}

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// splitmix64, used to derive independent stream seeds from structural
// counters (epoch, step, instance, sample). Keeps every stochastic site
// reproducible regardless of evaluation order.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t state = 0x243f6a8885a308d3ULL;
  std::uint64_t out = 0;
  for (std::uint64_t p : parts) {
    state ^= p + 0x9e3779b97f4a7c15ULL + (state << 6) + (state >> 2);
    out = splitmix64(state);
  }
  return out;
}

// Seeded standard-normal stream.
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : gen_(seed) {}

  double draw() { return dist_(gen_); }

  Mat draw_matrix(Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist_(gen_);
    return m;
  }

  Vec draw_vector(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = dist_(gen_);
    return v;
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

constexpr double kPi = 3.1415926535897932384626433832795;
constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace dgpfm
