#include <catch2/catch_amalgamated.hpp>

#include <complex>
#include <random>

#include "dgpfm/ad.hpp"
#include "helpers.hpp"

using namespace dgpfm;
using Catch::Approx;

namespace {

using Builder = std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>;

Eigen::Index total_size(const std::vector<Mat>& ms) {
  Eigen::Index n = 0;
  for (const Mat& m : ms) n += m.size();
  return n;
}

Vec pack(const std::vector<Mat>& ms) {
  Vec x(total_size(ms));
  Eigen::Index at = 0;
  for (const Mat& m : ms) {
    Eigen::Map<Mat>(x.data() + at, m.rows(), m.cols()) = m;
    at += m.size();
  }
  return x;
}

// Max relative error between the tape gradient and central differences of the
// scalar objective defined by `build` over the packed leaf entries.
double grad_vs_fd(const std::vector<Mat>& inits, const Builder& build) {
  auto eval = [&](const Vec& x) {
    ad::Tape t;
    std::vector<ad::Var> leaves;
    Eigen::Index at = 0;
    for (const Mat& m : inits) {
      leaves.push_back(t.leaf(Eigen::Map<const Mat>(x.data() + at, m.rows(), m.cols())));
      at += m.size();
    }
    return t.val(build(t, leaves))(0, 0);
  };
  Vec x0 = pack(inits);
  Vec fd = testutil::fd_gradient(eval, x0);

  ad::Tape t;
  std::vector<ad::Var> leaves;
  for (const Mat& m : inits) leaves.push_back(t.leaf(m));
  t.backward(build(t, leaves));
  std::vector<Mat> grads;
  for (ad::Var v : leaves) grads.push_back(t.grad(v));
  return testutil::max_rel_err(pack(grads), fd);
}

Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0,
               double hi = 1.0) {
  std::uniform_real_distribution<double> ud(lo, hi);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = ud(rng);
  return m;
}

}  // namespace

TEST_CASE("arithmetic op gradients match finite differences", "[ad]") {
  std::mt19937_64 rng(5);
  Mat a = random_mat(rng, 3, 4), b = random_mat(rng, 3, 4);
  Mat c = random_mat(rng, 4, 2), s = random_mat(rng, 1, 1);

  CHECK(grad_vs_fd({a, b}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::add(v[0], v[1])));
        }) < 1e-5);
  CHECK(grad_vs_fd({a, b}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::sub(v[0], v[1])));
        }) < 1e-5);
  CHECK(grad_vs_fd({a}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::shift(ad::scale(-2.5, ad::neg(v[0])), 0.7)));
        }) < 1e-5);
  CHECK(grad_vs_fd({a, c}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::matmul(v[0], v[1])));
        }) < 1e-5);
  CHECK(grad_vs_fd({a, b}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::cwise_mul(v[0], v[1])));
        }) < 1e-5);
  Mat bpos = b.array() + 3.0;  // keep the divisor away from zero
  CHECK(grad_vs_fd({a, bpos}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::cwise_div(v[0], v[1])));
        }) < 1e-5);
  CHECK(grad_vs_fd({s, a}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::scalar_mul(v[0], v[1])));
        }) < 1e-5);
  CHECK(grad_vs_fd({a}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::transpose(v[0])));
        }) < 1e-5);
}

TEST_CASE("coefficient-wise nonlinearity gradients match finite differences", "[ad]") {
  std::mt19937_64 rng(6);
  Mat a = random_mat(rng, 3, 3);
  Mat pos = random_mat(rng, 3, 3, 0.5, 2.0);

  CHECK(grad_vs_fd({a}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::cwise_exp(v[0])));
        }) < 1e-5);
  CHECK(grad_vs_fd({pos}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::cwise_log(v[0])));
        }) < 1e-5);
  CHECK(grad_vs_fd({pos}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::cwise_sqrt(v[0])));
        }) < 1e-5);
  CHECK(grad_vs_fd({a}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::cwise_softplus(v[0])));
        }) < 1e-5);
  // Clamp: all entries kept away from the kink at 0.3.
  CHECK(grad_vs_fd({a}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::cwise_clamp_min(v[0], 0.3)));
        }) < 1e-4);

  SECTION("clamp blocks the gradient below the floor") {
    ad::Tape t;
    Mat x(2, 1);
    x << -1.0, 1.0;
    ad::Var v = t.leaf(x);
    t.backward(ad::sum(ad::cwise_clamp_min(v, 0.0)));
    CHECK(t.grad(v)(0, 0) == 0.0);
    CHECK(t.grad(v)(1, 0) == 1.0);
  }
}

TEST_CASE("reduction and shape op gradients match finite differences", "[ad]") {
  std::mt19937_64 rng(7);
  Mat a = random_mat(rng, 4, 3), sq = random_mat(rng, 4, 4);
  Mat vcol = random_mat(rng, 4, 1), vrow = random_mat(rng, 3, 1), s = random_mat(rng, 1, 1);

  CHECK(grad_vs_fd({a}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::rowsum(v[0])));
        }) < 1e-5);
  CHECK(grad_vs_fd({a}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::colsum(v[0])));
        }) < 1e-5);
  CHECK(grad_vs_fd({sq}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::diag_part(v[0])));
        }) < 1e-5);
  CHECK(grad_vs_fd({sq, s}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::add_diag(v[0], v[1])));
        }) < 1e-5);
  CHECK(grad_vs_fd({sq, vcol}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::add_diag(v[0], v[1])));
        }) < 1e-5);
  CHECK(grad_vs_fd({vcol, a}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::scale_rows(v[0], v[1])));
        }) < 1e-5);
  CHECK(grad_vs_fd({a, vrow}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::scale_cols(v[0], v[1])));
        }) < 1e-5);
  CHECK(grad_vs_fd({a}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::block(v[0], 1, 1, 2, 2)));
        }) < 1e-5);
  CHECK(grad_vs_fd({a, a}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::concat_cols({v[0], v[1]})));
        }) < 1e-5);
  CHECK(grad_vs_fd({a, a}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::concat_rows({v[0], v[1]})));
        }) < 1e-5);
  CHECK(grad_vs_fd({a}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::cwise_exp(ad::reshape(v[0], 6, 2))));
        }) < 1e-5);
}

TEST_CASE("reshape reinterprets storage column-major", "[ad]") {
  ad::Tape t;
  Mat a(2, 2);
  a << 1, 3, 2, 4;  // column-major storage order: 1,2,3,4
  ad::Var r = ad::reshape(t.leaf(a, false), 4, 1);
  Vec want(4);
  want << 1, 2, 3, 4;
  CHECK((t.val(r) - want).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cholesky node values and gradients", "[ad]") {
  std::mt19937_64 rng(8);
  Mat m = random_mat(rng, 5, 5);
  m.diagonal().array() += 5.0;  // comfortably full-rank

  SECTION("factor reproduces the matrix") {
    ad::Tape t;
    Mat k = m * m.transpose();
    ad::Var l = ad::chol(t.constant(k));
    CHECK((t.val(l) * t.val(l).transpose() - k).cwiseAbs().maxCoeff() < 1e-10);
    // strictly lower data only
    for (int i = 0; i < 5; ++i)
      for (int j = i + 1; j < 5; ++j) CHECK(t.val(l)(i, j) == 0.0);
  }

  SECTION("log-determinant gradient has the closed form 2 M^{-T}") {
    ad::Tape t;
    ad::Var vm = t.leaf(m);
    ad::Var l = ad::chol(ad::matmul(vm, ad::transpose(vm)));
    ad::Var logdet = ad::scale(2.0, ad::sum(ad::cwise_log(ad::diag_part(l))));
    t.backward(logdet);
    Mat want = 2.0 * m.inverse().transpose();
    CHECK((t.grad(vm) - want).cwiseAbs().maxCoeff() < 1e-8);
  }

  SECTION("composite gradient vs finite differences") {
    CHECK(grad_vs_fd({m}, [](ad::Tape&, std::vector<ad::Var>& v) {
            ad::Var k = ad::matmul(v[0], ad::transpose(v[0]));
            return ad::sum(ad::cwise_square(ad::chol(k)));
          }) < 1e-5);
  }

  SECTION("a non-factorizable matrix raises after jitter escalation") {
    ad::Tape t;
    Mat bad = -Mat::Identity(3, 3);
    CHECK_THROWS_AS(ad::chol(t.constant(bad)), numerical_failure);
  }
}

TEST_CASE("triangular solve values and gradients", "[ad]") {
  std::mt19937_64 rng(9);
  Mat l = Mat(random_mat(rng, 4, 4).triangularView<Eigen::Lower>());
  l.diagonal().array() += 3.0;
  Mat b = random_mat(rng, 4, 2);

  ad::Tape t;
  ad::Var x = ad::solve_lower(t.constant(l), t.constant(b));
  CHECK((l * t.val(x) - b).cwiseAbs().maxCoeff() < 1e-12);
  ad::Var y = ad::solve_lower_t(t.constant(l), t.constant(b));
  CHECK((l.transpose() * t.val(y) - b).cwiseAbs().maxCoeff() < 1e-12);

  CHECK(grad_vs_fd({l, b}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::solve_lower(v[0], v[1])));
        }) < 1e-5);
  CHECK(grad_vs_fd({l, b}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::solve_lower_t(v[0], v[1])));
        }) < 1e-5);
}

TEST_CASE("real DFT values match a direct trigonometric sum", "[ad]") {
  std::mt19937_64 rng(10);
  for (int n : {16, 12, 7}) {  // power of two, composite, prime
    Mat x = random_mat(rng, n, 1);
    const int bins = n / 2 + 1;
    ad::Tape t;
    ad::Var hat = ad::rdft_cols(t.constant(x), bins);
    for (int m = 0; m < bins; ++m) {
      std::complex<double> want(0.0, 0.0);
      for (int k = 0; k < n; ++k)
        want += x(k, 0) * std::exp(std::complex<double>(0.0, -kTwoPi * m * k / n));
      CHECK(t.val(hat)(2 * m, 0) == Approx(want.real()).margin(1e-10));
      CHECK(t.val(hat)(2 * m + 1, 0) == Approx(want.imag()).margin(1e-10));
    }
  }
}

TEST_CASE("inverse DFT undoes the forward transform", "[ad]") {
  std::mt19937_64 rng(11);
  for (int n : {16, 15}) {
    Mat x = random_mat(rng, n, 3);
    ad::Tape t;
    ad::Var back = ad::irdft_cols(ad::rdft_cols(t.constant(x), n / 2 + 1), n);
    CHECK((t.val(back) - x).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("DFT gradients match finite differences", "[ad]") {
  std::mt19937_64 rng(12);
  for (int n : {8, 10}) {
    Mat x = random_mat(rng, n, 2);
    for (int bins : {n / 2 + 1, 2}) {
      CHECK(grad_vs_fd({x}, [bins](ad::Tape&, std::vector<ad::Var>& v) {
              return ad::sum(ad::cwise_square(ad::rdft_cols(v[0], bins)));
            }) < 1e-5);
      Mat spec = random_mat(rng, 2 * bins, 2);
      CHECK(grad_vs_fd({spec}, [n](ad::Tape&, std::vector<ad::Var>& v) {
              return ad::sum(ad::cwise_square(ad::irdft_cols(v[0], n)));
            }) < 1e-5);
    }
  }
}

TEST_CASE("interleaved complex product matches std::complex", "[ad]") {
  std::mt19937_64 rng(13);
  Mat a = random_mat(rng, 6, 2), b = random_mat(rng, 6, 2);
  ad::Tape t;
  ad::Var out = ad::cplx_mul(t.constant(a), t.constant(b));
  for (int k = 0; k < 3; ++k)
    for (int c = 0; c < 2; ++c) {
      const std::complex<double> za(a(2 * k, c), a(2 * k + 1, c));
      const std::complex<double> zb(b(2 * k, c), b(2 * k + 1, c));
      const std::complex<double> zc = za * zb;
      CHECK(t.val(out)(2 * k, c) == Approx(zc.real()).margin(1e-14));
      CHECK(t.val(out)(2 * k + 1, c) == Approx(zc.imag()).margin(1e-14));
    }
  CHECK(grad_vs_fd({a, b}, [](ad::Tape&, std::vector<ad::Var>& v) {
          return ad::sum(ad::cwise_square(ad::cplx_mul(v[0], v[1])));
        }) < 1e-5);
}

TEST_CASE("tape mechanics", "[ad]") {
  SECTION("a node feeding two consumers accumulates both adjoints") {
    ad::Tape t;
    Mat x0(2, 1);
    x0 << 0.5, -1.5;
    ad::Var x = t.leaf(x0);
    ad::Var y = ad::sum(ad::cwise_square(ad::add(x, x)));  // 4 * sum x^2
    t.backward(y);
    CHECK((t.grad(x) - 8.0 * x0).cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("constants receive no gradient") {
    ad::Tape t;
    ad::Var c = t.constant(Mat::Ones(2, 2));
    ad::Var x = t.leaf(Mat::Ones(2, 2));
    t.backward(ad::sum(ad::cwise_mul(c, x)));
    CHECK_FALSE(t.needs_grad(c));
    CHECK(t.grad(c).cwiseAbs().maxCoeff() == 0.0);
    CHECK((t.grad(x) - Mat::Ones(2, 2)).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("backward requires a scalar root") {
    ad::Tape t;
    ad::Var x = t.leaf(Mat::Ones(2, 2));
    CHECK_THROWS_AS(t.backward(x), numerical_failure);
  }

  SECTION("an unreached leaf reports a zero gradient") {
    ad::Tape t;
    ad::Var x = t.leaf(Mat::Ones(3, 1));
    ad::Var y = t.leaf(Mat::Ones(2, 1));
    t.backward(ad::sum(x));
    CHECK(t.grad(y).rows() == 2);
    CHECK(t.grad(y).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("clear empties the node list") {
    ad::Tape t;
    t.leaf(Mat::Ones(1, 1));
    CHECK(t.size() == 1);
    t.clear();
    CHECK(t.size() == 0);
  }
}
