#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dgpfm/data.hpp"

using namespace dgpfm;
using Catch::Approx;

namespace {

namespace fs = std::filesystem;

fs::path test_dir() {
  fs::path p = fs::temp_directory_path() / "dgpfm_data_tests";
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool bitwise_equal(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

// Exact antiderivative of the finite Fourier series from 0 to x.
double analytic_antiderivative(const Grf1D& g, double x) {
  double u = g.cos_coef(0) * std::sqrt(g.eigenvalue(0)) * x;
  for (int m = 1; m <= g.modes(); ++m) {
    const double s = std::sqrt(2.0 * g.eigenvalue(m));
    const double w = kTwoPi * m;
    u += s * (g.cos_coef(m) * std::sin(w * x) / w + g.sin_coef(m) * (1.0 - std::cos(w * x)) / w);
  }
  return u;
}

}  // namespace

TEST_CASE("random field draws have the declared moments", "[data]") {
  const int trials = 100000;
  NormalSource rng(42);
  Grf1D probe = sample_grf_1d(32, rng);
  const double want_var = probe.point_variance();
  double sum = 0.0, sq = 0.0;
  for (int t = 0; t < trials; ++t) {
    Grf1D g = sample_grf_1d(32, rng);
    const double v = g.value(0.3);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / trials;
  const double var = sq / trials - mean * mean;
  const double se_mean = std::sqrt(want_var / trials);
  const double se_var = want_var * std::sqrt(2.0 / (trials - 1.0));
  CHECK(std::abs(mean) < 3.0 * se_mean);
  CHECK(std::abs(var - want_var) < 3.0 * se_var);
}

TEST_CASE("periodic grid field values are seed-reproducible", "[data]") {
  Vec a = gen_grf_1d(64, 625.0, 25.0, 7);
  Vec b = gen_grf_1d(64, 625.0, 25.0, 7);
  Vec c = gen_grf_1d(64, 625.0, 25.0, 8);
  CHECK(bitwise_equal(a, b));
  CHECK_FALSE(bitwise_equal(a, c));
  CHECK_THROWS_AS(gen_grf_1d(8, 625.0, 25.0, 1), std::invalid_argument);
}

TEST_CASE("running integral of a constant field is exactly linear", "[data]") {
  Grf1D g;
  g.cos_coef = Vec::Zero(9);
  g.sin_coef = Vec::Zero(9);
  g.cos_coef(0) = 1.0 / std::sqrt(g.eigenvalue(0));  // field identically one
  Vec xs = Vec::LinSpaced(17, 0.0, 1.0);
  Vec u = antiderivative_on_grid(g, xs);
  for (int i = 0; i < 17; ++i) CHECK(u(i) == Approx(xs(i)).margin(1e-13));
}

TEST_CASE("running integral matches the analytic antiderivative", "[data]") {
  NormalSource rng(5);
  Grf1D g = sample_grf_1d(64, rng);
  Vec xs = Vec::LinSpaced(128, 0.0, 1.0);
  Vec u = antiderivative_on_grid(g, xs);
  double emax = 0.0;
  for (int i = 0; i < xs.size(); ++i)
    emax = std::max(emax, std::abs(u(i) - analytic_antiderivative(g, xs(i))));
  CHECK(emax < 1e-5);
}

TEST_CASE("antiderivative dataset generator", "[data]") {
  Dataset a = gen_antiderivative(3, 32, 11);
  Dataset b = gen_antiderivative(3, 32, 11);
  REQUIRE(a.instances.size() == 3);
  CHECK(a.d == 1);
  for (std::size_t k = 0; k < 3; ++k) {
    const FunctionPair& p = a.instances[k];
    REQUIRE(p.x_in.rows() == 32);
    CHECK(p.x_in(0, 0) == 0.0);
    CHECK(p.x_in(31, 0) == 1.0);
    CHECK(p.x_in(1, 0) == Approx(1.0 / 31.0).epsilon(1e-15));
    CHECK(p.y_out(0, 0) == 0.0);  // integral from the left endpoint
    CHECK(bitwise_equal(p.f_in, b.instances[k].f_in));
    CHECK(bitwise_equal(p.y_out, b.instances[k].y_out));
    // The output increments integrate the input: compare with per-interval
    // trapezoid increments of the sampled field; the gap is the quadrature
    // error of the trapezoid rule on one interval.
    for (int i = 0; i + 1 < 32; ++i) {
      const double h = p.x_in(i + 1, 0) - p.x_in(i, 0);
      const double trap = 0.5 * h * (p.f_in(i, 0) + p.f_in(i + 1, 0));
      CHECK(std::abs((p.y_out(i + 1, 0) - p.y_out(i, 0)) - trap) < 2e-3);
    }
  }
  CHECK(a.box(0, 0) == 0.0);
  CHECK(a.box(0, 1) == 1.0);
}

TEST_CASE("viscous evolution keeps constants steady", "[data]") {
  Vec u0 = Vec::Constant(32, 0.75);
  Vec u1 = burgers_evolve(u0, 0.1, 1.0, 1e-3);
  CHECK((u1.array() - 0.75).abs().maxCoeff() < 1e-12);
}

TEST_CASE("viscous evolution matches a closed-form solution", "[data]") {
  // u = -2 nu (log phi)_x with phi = a + b exp(-4 pi^2 nu t) cos(2 pi x)
  // solves the viscous equation exactly; compare at t = 1.
  const int n = 64;
  const double nu = 0.1, a = 1.0, b = 0.5;
  auto exact = [&](double x, double t) {
    const double decay = std::exp(-4.0 * kPi * kPi * nu * t);
    return 4.0 * kPi * nu * b * decay * std::sin(kTwoPi * x) /
           (a + b * decay * std::cos(kTwoPi * x));
  };
  Vec u0(n);
  for (int i = 0; i < n; ++i) u0(i) = exact(double(i) / n, 0.0);
  Vec u1 = burgers_evolve(u0, nu, 1.0, 5e-4);
  double emax = 0.0;
  for (int i = 0; i < n; ++i) emax = std::max(emax, std::abs(u1(i) - exact(double(i) / n, 1.0)));
  CHECK(emax < 1e-6);
}

TEST_CASE("viscous evolution dissipates energy", "[data]") {
  Vec u0 = gen_grf_1d(64, 625.0, 25.0, 9);
  std::vector<double> energy;
  burgers_evolve(u0, 0.1, 0.5, 1e-3, &energy);
  REQUIRE(energy.size() == 501);
  for (std::size_t i = 0; i + 1 < energy.size(); ++i) CHECK(energy[i + 1] <= energy[i] + 1e-12);
}

TEST_CASE("viscous evolution halves its error fast under time refinement", "[data]") {
  const int n = 64;
  const double nu = 0.1, a = 1.0, b = 0.5;
  Vec u0(n);
  for (int i = 0; i < n; ++i)
    u0(i) = 4.0 * kPi * nu * b * std::sin(kTwoPi * i / n) / (a + b * std::cos(kTwoPi * i / n));
  Vec fine = burgers_evolve(u0, nu, 1.0, 1e-4);
  double prev = std::numeric_limits<double>::infinity();
  for (double dt : {4e-2, 1e-2, 2.5e-3}) {
    Vec u = burgers_evolve(u0, nu, 1.0, dt);
    double err = (u - fine).cwiseAbs().maxCoeff();
    CHECK(err < prev / 10.0);  // classical fourth order would give ~256x
    prev = err;
  }
}

TEST_CASE("an unresolvable evolution reports generation failure", "[data]") {
  Vec u0(64);
  for (int i = 0; i < 64; ++i) u0(i) = 100.0 * std::sin(kTwoPi * i / 64.0);
  CHECK_THROWS_AS(burgers_evolve(u0, 1e-4, 1.0, 2e-2), generation_failure);
}

TEST_CASE("viscous dataset generator is reproducible and positive-viscosity", "[data]") {
  Dataset a = gen_burgers_1d(2, 32, 0.1, 3);
  Dataset b = gen_burgers_1d(2, 32, 0.1, 3);
  REQUIRE(a.instances.size() == 2);
  CHECK(a.instances[0].x_in(0, 0) == 0.0);
  CHECK(a.instances[0].x_in(31, 0) == Approx(31.0 / 32.0));  // periodic: right end open
  CHECK(bitwise_equal(a.instances[1].y_out, b.instances[1].y_out));
  CHECK_THROWS_AS(gen_burgers_1d(1, 32, 0.0, 3), std::invalid_argument);
  CHECK_THROWS_AS(gen_burgers_1d(1, 8, 0.1, 3), std::invalid_argument);
}

TEST_CASE("sine-basis source-to-solution map", "[data]") {
  SECTION("single mode has the closed-form ratio") {
    SineField2D f;
    f.coef = Mat::Zero(1, 1);
    f.coef(0, 0) = 1.0;
    SineField2D u = poisson_solve(f);
    for (double x : {0.21, 0.5, 0.83})
      for (double y : {0.1, 0.64}) {
        CHECK(u.value(x, y) == Approx(f.value(x, y) / (2.0 * kPi * kPi)).margin(1e-14));
      }
  }

  SECTION("vectorized evaluation agrees with the direct sum") {
    NormalSource rng(13);
    SineField2D f = sample_source_2d(6, rng);
    Vec xs = Vec::LinSpaced(5, 0.0, 1.0), ys = Vec::LinSpaced(4, 0.0, 1.0);
    Vec grid = eval_sine_field(f, xs, ys);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 4; ++j)
        CHECK(grid(i * 4 + j) == Approx(f.value(xs(i), ys(j))).margin(1e-12));
  }

  SECTION("five-point residual converges at second order") {
    NormalSource rng(17);
    SineField2D f = sample_source_2d(8, rng);
    SineField2D u = poisson_solve(f);
    std::vector<double> errs;
    for (int n : {32, 64, 128}) {
      Vec axis = Vec::LinSpaced(n + 1, 0.0, 1.0);
      Vec fv = eval_sine_field(f, axis, axis), uv = eval_sine_field(u, axis, axis);
      const double h2 = 1.0 / (double(n) * double(n));
      double emax = 0.0;
      for (int i = 1; i < n; ++i)
        for (int j = 1; j < n; ++j) {
          const int at = i * (n + 1) + j;
          const double lap = (4.0 * uv(at) - uv(at - 1) - uv(at + 1) - uv(at - (n + 1)) -
                              uv(at + (n + 1))) /
                             h2;
          emax = std::max(emax, std::abs(lap - fv(at)));
        }
      errs.push_back(emax);
    }
    for (std::size_t i = 0; i + 1 < errs.size(); ++i)
      CHECK(std::log2(errs[i] / errs[i + 1]) >= 1.9);
  }

  SECTION("generated solutions vanish on the boundary") {
    Dataset ds = gen_poisson_2d(1, 8, 21);
    const FunctionPair& p = ds.instances[0];
    CHECK(ds.d == 2);
    REQUIRE(p.x_out.rows() == 81);
    for (int i = 0; i < 81; ++i) {
      const double x = p.x_out(i, 0), y = p.x_out(i, 1);
      if (x == 0.0 || x == 1.0 || y == 0.0 || y == 1.0)
        CHECK(std::abs(p.y_out(i, 0)) < 1e-12);
    }
  }
}

TEST_CASE("corruption masks and noise", "[data]") {
  Dataset clean = gen_antiderivative(20, 64, 31);

  SECTION("keeping everything at zero noise is the identity") {
    Dataset same = corrupt(clean, 1.0, 1.0, 0.0, true, 5);
    for (std::size_t k = 0; k < clean.instances.size(); ++k) {
      CHECK(bitwise_equal(same.instances[k].f_in, clean.instances[k].f_in));
      CHECK(bitwise_equal(same.instances[k].x_out, clean.instances[k].x_out));
    }
  }

  SECTION("subset sizes and reproducibility") {
    Dataset half = corrupt(clean, 0.5, 0.25, 0.0, true, 5);
    Dataset again = corrupt(clean, 0.5, 0.25, 0.0, true, 5);
    CHECK(half.instances[0].x_in.rows() == 32);
    CHECK(half.instances[0].x_out.rows() == 16);
    CHECK(bitwise_equal(half.instances[3].x_in, again.instances[3].x_in));
    // Locations stay sorted and are a subset of the originals.
    const Mat& x = half.instances[0].x_in;
    for (int i = 0; i + 1 < x.rows(); ++i) CHECK(x(i, 0) < x(i + 1, 0));
  }

  SECTION("independent masks differ between input and output") {
    Dataset ind = corrupt(clean, 0.5, 0.5, 0.0, true, 5);
    bool any_diff = false;
    for (const FunctionPair& p : ind.instances)
      if (!bitwise_equal(p.x_in, p.x_out)) any_diff = true;
    CHECK(any_diff);
  }

  SECTION("shared masks keep input and output locations aligned") {
    Dataset sh = corrupt(clean, 0.5, 0.5, 0.0, false, 5);
    for (const FunctionPair& p : sh.instances) CHECK(bitwise_equal(p.x_in, p.x_out));
  }

  SECTION("noise has the requested spread and touches only inputs") {
    Dataset noisy = corrupt(clean, 1.0, 1.0, 0.1, true, 5);
    double sq = 0.0;
    long n = 0;
    for (std::size_t k = 0; k < clean.instances.size(); ++k) {
      Mat diff = noisy.instances[k].f_in - clean.instances[k].f_in;
      sq += diff.array().square().sum();
      n += diff.size();
      CHECK(bitwise_equal(noisy.instances[k].y_out, clean.instances[k].y_out));
    }
    const double sd = std::sqrt(sq / double(n));
    CHECK(sd == Approx(0.1).epsilon(0.05));
  }

  SECTION("argument validation") {
    CHECK_THROWS_AS(corrupt(clean, 0.0, 1.0, 0.0, true, 1), std::invalid_argument);
    CHECK_THROWS_AS(corrupt(clean, 1.0, 1.2, 0.0, true, 1), std::invalid_argument);
    CHECK_THROWS_AS(corrupt(clean, 1.0, 1.0, -0.1, true, 1), std::invalid_argument);
  }
}

TEST_CASE("dataset container round trip", "[data]") {
  fs::path dir = test_dir();
  Dataset ds;
  ds.d = 1;
  ds.d0 = 2;
  ds.d1 = 3;
  NormalSource rng(2);
  for (int k = 0; k < 2; ++k) {
    FunctionPair p;
    p.x_in = rng.draw_matrix(5, 1);
    p.f_in = rng.draw_matrix(5, 2);
    p.x_out = rng.draw_matrix(4, 1);
    p.y_out = rng.draw_matrix(4, 3);
    ds.instances.push_back(std::move(p));
  }
  ds.refresh_box();

  fs::path p1 = dir / "roundtrip.bin", p2 = dir / "roundtrip2.bin";
  save_dataset(ds, p1.string());
  Dataset back = load_dataset(p1.string());
  REQUIRE(back.instances.size() == 2);
  CHECK(back.d0 == 2);
  CHECK(back.d1 == 3);
  for (int k = 0; k < 2; ++k) {
    CHECK(bitwise_equal(back.instances[k].x_in, ds.instances[k].x_in));
    CHECK(bitwise_equal(back.instances[k].f_in, ds.instances[k].f_in));
    CHECK(bitwise_equal(back.instances[k].x_out, ds.instances[k].x_out));
    CHECK(bitwise_equal(back.instances[k].y_out, ds.instances[k].y_out));
  }
  save_dataset(back, p2.string());
  CHECK(read_file(p1) == read_file(p2));
}

TEST_CASE("dataset container corruption diagnostics carry byte offsets", "[data]") {
  fs::path dir = test_dir();
  Dataset ds = gen_antiderivative(1, 16, 3);
  fs::path good = dir / "good.bin";
  save_dataset(ds, good.string());
  std::string bytes = read_file(good);

  SECTION("bad magic") {
    std::string s = bytes;
    s[0] = 'X';
    write_file(dir / "badmagic.bin", s);
    try {
      load_dataset((dir / "badmagic.bin").string());
      FAIL("expected a format error");
    } catch (const format_error& e) {
      CHECK(e.byte_offset == 0);
    }
  }

  SECTION("unsupported version") {
    std::string s = bytes;
    s[4] = '\x77';
    write_file(dir / "badver.bin", s);
    try {
      load_dataset((dir / "badver.bin").string());
      FAIL("expected a format error");
    } catch (const format_error& e) {
      CHECK(e.byte_offset == 4);
    }
  }

  SECTION("truncation") {
    write_file(dir / "trunc.bin", bytes.substr(0, bytes.size() / 2));
    try {
      load_dataset((dir / "trunc.bin").string());
      FAIL("expected a format error");
    } catch (const format_error& e) {
      CHECK(e.byte_offset <= bytes.size() / 2);
    }
  }

  SECTION("zero input points") {
    std::string s = bytes;
    // n_in lives right after magic(4) + version(2) + four u32 fields.
    for (int i = 0; i < 4; ++i) s[22 + i] = '\0';
    write_file(dir / "zeron.bin", s);
    try {
      load_dataset((dir / "zeron.bin").string());
      FAIL("expected a format error");
    } catch (const format_error& e) {
      CHECK(e.byte_offset == 22);
    }
  }
}

TEST_CASE("CSV import", "[data]") {
  fs::path dir = test_dir() / "csv";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_file(dir / "a.in.csv", "x1,f1\n0.0,1.5\n1.0,-2.25\n");
  write_file(dir / "a.out.csv", "x1,y1\n0.25,0.5\n0.5,0.75\n0.75,1.0\n");
  write_file(dir / "b.in.csv", "x1,f1\n0.0,3.0\n");
  write_file(dir / "b.out.csv", "x1,y1\n1.0,4.0\n");

  SECTION("single pair") {
    FunctionPair p = import_csv_pair((dir / "a.in.csv").string(), (dir / "a.out.csv").string());
    REQUIRE(p.x_in.rows() == 2);
    REQUIRE(p.x_out.rows() == 3);
    CHECK(p.f_in(1, 0) == -2.25);
    CHECK(p.y_out(2, 0) == 1.0);
  }

  SECTION("directory import in stem order") {
    Dataset ds = import_csv_dir(dir.string());
    REQUIRE(ds.instances.size() == 2);
    CHECK(ds.instances[0].f_in(0, 0) == 1.5);  // stem 'a' first
    CHECK(ds.instances[1].f_in(0, 0) == 3.0);
    CHECK(ds.d == 1);
  }

  SECTION("missing companion file") {
    write_file(dir / "c.in.csv", "x1,f1\n0.0,1.0\n");
    CHECK_THROWS_AS(import_csv_dir(dir.string()), std::runtime_error);
    fs::remove(dir / "c.in.csv");
  }

  SECTION("malformed content") {
    write_file(dir / "bad1.csv", "x1,g1\n0.0,1.0\n");
    CHECK_THROWS_AS(detailless_probe_headers(), std::exception);
  }
}

TEST_CASE("normalization statistics and round trip", "[data]") {
  Dataset ds;
  ds.d = 1;
  ds.d0 = 1;
  ds.d1 = 1;
  FunctionPair p0;
  p0.x_in = Mat::Zero(2, 1);
  p0.x_in << 0.0, 2.0;
  p0.f_in = Mat::Zero(2, 1);
  p0.f_in << 1.0, 3.0;
  p0.x_out = Mat::Constant(1, 1, 4.0);
  p0.y_out = Mat::Constant(1, 1, 5.0);
  FunctionPair p1;
  p1.x_in = Mat::Constant(1, 1, -6.0);
  p1.f_in = Mat::Constant(1, 1, 100.0);
  p1.x_out = Mat::Constant(1, 1, 1.0);
  p1.y_out = Mat::Constant(1, 1, -7.0);
  ds.instances = {p0, p1};
  ds.refresh_box();

  SECTION("statistics from the selected instances only") {
    Normalization nz = fit_normalization(ds, {0});
    CHECK(nz.box(0, 0) == 0.0);
    CHECK(nz.box(0, 1) == 4.0);
    CHECK(nz.in_mean(0) == Approx(2.0));
    CHECK(nz.in_sd(0) == Approx(1.0));  // population spread of {1, 3}
    CHECK(nz.out_mean(0) == Approx(5.0));
    CHECK(nz.out_sd(0) == 1.0);  // a constant column falls back to unit spread
    CHECK(nz.norm_points(Mat::Constant(1, 1, 4.0))(0, 0) == Approx(1.0));
    CHECK(nz.norm_points(Mat::Constant(1, 1, 0.0))(0, 0) == Approx(0.0));
  }

  SECTION("round trip restores raw values") {
    Normalization nz = fit_normalization(ds);
    Dataset normed = apply_normalization(nz, ds);
    for (std::size_t k = 0; k < 2; ++k) {
      const FunctionPair& a = ds.instances[k];
      const FunctionPair& b = normed.instances[k];
      CHECK((nz.raw_points(b.x_in) - a.x_in).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((nz.raw_out_mean(b.y_out) - a.y_out).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((Normalization::raw_values(b.f_in, nz.in_mean, nz.in_sd) - a.f_in)
                .cwiseAbs()
                .maxCoeff() < 1e-12);
    }
  }

  SECTION("scaled spreads pass through raw_out_sd") {
    Normalization nz = fit_normalization(ds);
    Mat s = Mat::Constant(3, 1, 2.0);
    CHECK(nz.raw_out_sd(s)(0, 0) == Approx(2.0 * nz.out_sd(0)));
  }
}
