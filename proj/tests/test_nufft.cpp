#include <doctest.h>

#include <cmath>
#include <numbers>

#include "lrc/errors.hpp"
#include "lrc/nufft.hpp"
#include "oracles.hpp"

using namespace lrc;
namespace orc = lrc::oracle;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> ones(Eigen::Index n) { return std::vector<double>(n, 1.0); }

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("plan mollifier width follows the default rule") {
  const auto plan = make_plan(TorusDomain(1, 5.0), 501);
  CHECK(plan.tau() == doctest::Approx(3.0283e-5).epsilon(1e-4));
  CHECK(plan.n_modes() == 501);
  CHECK(plan.grid_per_dim() == 1002);
  CHECK(plan.spread_half_width() >= 1);

  const auto unit = make_plan(TorusDomain(1, 2.0 * kPi * 16), 16);
  CHECK(unit.tau() == doctest::Approx(12.0));

  CHECK_THROWS_AS(make_plan(TorusDomain(1, 5.0), 4), GridTooSmall);
}

TEST_CASE("type1 of a delta at the origin is flat") {
  for (int d = 1; d <= 3; ++d) {
    const double L = 3.0;
    const auto plan = make_plan(TorusDomain(d, L), 17);
    const Matrix x = Matrix::Zero(1, d);
    const auto F = type1(plan, x, ones(1));
    const double expect = 1.0 / std::pow(L, d);
    double worst = 0.0;
    for (const auto& v : F) worst = std::max(worst, std::abs(v - expect) / expect);
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("type1 is linear in the weights") {
  Rng rng(7);
  const auto plan = make_plan(TorusDomain(2, 4.0), 19);
  const Matrix x = orc::random_positions(rng, 30, 2, 4.0);
  std::vector<double> f(30), g(30), fg(30);
  for (int i = 0; i < 30; ++i) {
    f[i] = rng.uniform(-1, 1);
    g[i] = rng.uniform(-1, 1);
    fg[i] = f[i] + g[i];
  }
  const auto Ff = type1(plan, x, f);
  const auto Fg = type1(plan, x, g);
  const auto Ffg = type1(plan, x, fg);
  double err = 0.0, scale = 0.0;
  for (std::size_t m = 0; m < Ff.size(); ++m) {
    err = std::max(err, std::abs(Ffg[m] - Ff[m] - Fg[m]));
    scale = std::max(scale, std::abs(Ffg[m]));
  }
  CHECK(err <= 1e-13 * scale);
}

TEST_CASE("type1 matches the direct nonuniform DFT") {
  Rng rng(11);
  struct Case { int d; int modes; int N; double L; };
  for (const auto c : {Case{1, 501, 64, 5.0}, Case{1, 64, 64, 2.0}, Case{2, 31, 64, 15.0},
                       Case{3, 15, 40, 3.0}}) {
    const auto plan = make_plan(TorusDomain(c.d, c.L), c.modes);
    const Matrix x = orc::random_positions(rng, c.N, c.d, c.L);
    std::vector<double> f(c.N);
    for (auto& v : f) v = rng.uniform(-1, 1);
    const auto got = type1(plan, x, f);
    const auto want = orc::direct_type1(x, f, c.L, c.modes);
    CAPTURE(c.d);
    CHECK(orc::rel_l2(got, want) <= 1e-6);
  }
}

TEST_CASE("type2 reproduces plane waves on the cloud") {
  Rng rng(3);
  for (int d = 1; d <= 2; ++d) {
    const int modes = d == 1 ? 32 : 16;
    const double L = 2.5;
    const auto plan = make_plan(TorusDomain(d, L), modes);
    const Matrix x = orc::random_positions(rng, 25, d, L);
    const auto ks = orc::band(d, modes);
    double worst = 0.0;
    for (std::size_t m = 0; m < plan.n_modes(); ++m) {
      Spectrum V(plan.n_modes());
      V[m] = 1.0;
      const auto got = type2(plan, x, V);
      std::vector<Complex> want(25);
      for (int i = 0; i < 25; ++i) {
        double phase = 0.0;
        for (int a = 0; a < d; ++a) phase += 2.0 * kPi * ks[m][a] / L * x(i, a);
        want[i] = Complex(std::cos(phase), std::sin(phase));
      }
      worst = std::max(worst, orc::rel_l2(got, want));
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("multiplier evaluation") {
  const auto plan = make_plan(TorusDomain(1, 2.0 * kPi), 31);  // kappa = k
  const int zero = 15;                                          // band index of k = 0
  auto grids = multiplier_eval(MultiplierParams{{1.0}, {2.0}}, plan);
  CHECK(grids[0][zero] == doctest::Approx(kPi).epsilon(1e-6));

  grids = multiplier_eval(MultiplierParams{{0.0}, {1.0}}, plan);
  for (double v : grids[0]) CHECK(v == 0.0);

  grids = multiplier_eval(MultiplierParams{{1.0}, {1.0}}, plan);
  CHECK(grids[0][zero + 1] == doctest::Approx(2.0 * kPi).epsilon(1e-6));
  CHECK(grids[0][zero - 1] == grids[0][zero + 1]);

  // Even sizes drop the unpaired Nyquist mode so the kernel stays real and even.
  const auto even = make_plan(TorusDomain(1, 2.0 * kPi), 32);
  grids = multiplier_eval(MultiplierParams{{1.0}, {1.0}}, even);
  CHECK(grids[0][0] == 0.0);
}

TEST_CASE("LRC forward matches the trigonometric pair-sum oracle") {
  Rng rng(5);
  for (const auto& [beta, lambda] : {std::pair{1.0, 1.0}, std::pair{0.5, 2.0}}) {
    const auto plan = make_plan(TorusDomain(1, 5.0), 64);
    const Matrix x = orc::random_positions(rng, 8, 1, 5.0);
    const auto f = ones(8);
    const Matrix u = lrc_forward(plan, x, f, MultiplierParams{{beta}, {lambda}});
    const auto want = orc::direct_convolution(x, f, orc::TrigKernel{1, 64, 5.0, beta, lambda});
    std::vector<double> got(u.data(), u.data() + u.size());
    CHECK(orc::rel_l2(got, want) <= 1e-4);
  }
}

TEST_CASE("LRC forward with zero multiplier vanishes") {
  Rng rng(1);
  const auto plan = make_plan(TorusDomain(2, 3.0), 16);
  const Matrix x = orc::random_positions(rng, 10, 2, 3.0);
  const Matrix u = lrc_forward(plan, x, ones(10), MultiplierParams{{0.0, 0.0}, {1.0, 2.0}});
  CHECK(max_abs(u) == 0.0);
}

TEST_CASE("LRC forward is translation invariant and permutation equivariant") {
  Rng rng(9);
  const double L = 4.0;
  const auto plan = make_plan(TorusDomain(2, L), 21);
  const MultiplierParams params{{1.0, 0.3}, {1.0, 2.5}};
  const Matrix x = orc::random_positions(rng, 12, 2, L);
  const Matrix u = lrc_forward(plan, x, ones(12), params);

  Matrix shifted = x;
  shifted.col(0).array() += 1.234;
  shifted.col(1).array() += 3.7;
  wrap_positions(shifted, plan.domain());
  CHECK(orc::rel_l2(lrc_forward(plan, shifted, ones(12), params), u) <= 1e-6);

  Matrix perm(12, 2);
  Matrix u_perm(12, 2);
  for (int i = 0; i < 12; ++i) {
    perm.row(i) = x.row((i * 5) % 12);
    u_perm.row(i) = u.row((i * 5) % 12);
  }
  CHECK(orc::rel_l2(lrc_forward(plan, perm, ones(12), params), u_perm) <= 1e-12);
}

TEST_CASE("LRC Jacobian-vector products") {
  Rng rng(21);
  for (int d = 1; d <= 3; ++d) {
    const double L = 3.0;
    const int N = 16;
    const auto plan = make_plan(TorusDomain(d, L), d == 3 ? 15 : 33);
    const MultiplierParams params{{1.0, 0.5}, {1.0, 2.0}};
    const Matrix x = orc::random_positions(rng, N, d, L);
    const auto f = ones(N);
    const LrcLayer layer(plan, x, f, params);
    CAPTURE(d);

    CHECK(max_abs(layer.jvp(Matrix::Zero(N, d))) == 0.0);
    const Matrix constant = Matrix::Constant(N, d, 0.7);
    CHECK(max_abs(layer.jvp(constant)) <= 1e-8 * max_abs(layer.output()));

    const Matrix v = orc::random_matrix(rng, N, d);
    const double h = 1e-6;
    const Matrix fd = (lrc_forward(plan, x + h * v, f, params) - lrc_forward(plan, x - h * v, f, params)) / (2 * h);
    CHECK(orc::rel_l2(layer.jvp(v), fd) <= 1e-5);

    // <ubar, J v> == <J^T ubar, v>
    const Matrix ubar = orc::random_matrix(rng, N, 2);
    const double lhs = (ubar.array() * layer.jvp(v).array()).sum();
    const double rhs = (layer.vjp_positions(ubar).array() * v.array()).sum();
    CHECK(std::abs(lhs - rhs) <= 1e-8 * std::abs(lhs));
  }
}

TEST_CASE("LRC backward") {
  Rng rng(33);
  const double L = 5.0;
  const int N = 12;
  const auto plan = make_plan(TorusDomain(1, L), 65);
  const Matrix x = orc::random_positions(rng, N, 1, L);
  const auto f = ones(N);
  const Matrix ubar = orc::random_matrix(rng, N, 2);
  const MultiplierParams params{{0.8, 1.3}, {0.9, 2.2}};

  SUBCASE("zero upstream gradient") {
    const auto g = lrc_backward(plan, x, f, params, Matrix::Zero(N, 2));
    CHECK(max_abs(g.positions) == 0.0);
    CHECK(g.beta[0] == 0.0);
    CHECK(g.lambda[1] == 0.0);
  }

  auto contraction = [&](const MultiplierParams& p) {
    return (ubar.array() * lrc_forward(plan, x, f, p).array()).sum();
  };

  SUBCASE("beta gradient equals the contraction at unit beta") {
    const auto g = lrc_backward(plan, x, f, MultiplierParams{{0.0, 0.0}, {0.9, 2.2}}, ubar);
    const double s1 = (ubar.col(0).array() * lrc_forward(plan, x, f, MultiplierParams{{1.0}, {0.9}}).col(0).array()).sum();
    CHECK(g.beta[0] == doctest::Approx(s1).epsilon(1e-10));
  }

  SUBCASE("lambda and beta gradients match finite differences") {
    const auto g = lrc_backward(plan, x, f, params, ubar);
    for (int c = 0; c < 2; ++c) {
      const double h = 1e-6;
      auto shifted = [&](double dl, double db) {
        MultiplierParams p = params;
        p.lambda[c] += dl;
        p.beta[c] += db;
        return contraction(p);
      };
      const double fd_l = (shifted(h, 0) - shifted(-h, 0)) / (2 * h);
      const double fd_b = (shifted(0, h) - shifted(0, -h)) / (2 * h);
      CHECK(std::abs(g.lambda[c] - fd_l) <= 1e-5 * std::abs(fd_l));
      CHECK(std::abs(g.beta[c] - fd_b) <= 1e-5 * std::abs(fd_b));
    }
  }

  SUBCASE("position gradient matches finite differences") {
    const auto g = lrc_backward(plan, x, f, params, ubar);
    Matrix fd(N, 1);
    for (int j = 0; j < N; ++j) {
      const double h = 1e-6;
      Matrix xp = x, xm = x;
      xp(j, 0) += h;
      xm(j, 0) -= h;
      fd(j, 0) = ((ubar.array() * lrc_forward(plan, xp, f, params).array()).sum() -
                  (ubar.array() * lrc_forward(plan, xm, f, params).array()).sum()) / (2 * h);
    }
    CHECK(orc::rel_l2(g.positions, fd) <= 1e-5);
  }

  SUBCASE("multiplier gradient of the JVP contraction matches finite differences") {
    const LrcLayer layer(plan, x, f, params);
    const Matrix v = orc::random_matrix(rng, N, 1);
    const auto g = layer.jvp_vjp_multiplier(v, ubar);
    for (int c = 0; c < 2; ++c) {
      const double h = 1e-6;
      auto t = [&](double dl) {
        MultiplierParams p = params;
        p.lambda[c] += dl;
        return (ubar.array() * LrcLayer(plan, x, f, p).jvp(v).array()).sum();
      };
      const double fd = (t(h) - t(-h)) / (2 * h);
      CHECK(std::abs(g.lambda[c] - fd) <= 1e-5 * std::abs(fd));
      auto tb = [&](double db) {
        MultiplierParams p = params;
        p.beta[c] += db;
        return (ubar.array() * LrcLayer(plan, x, f, p).jvp(v).array()).sum();
      };
      const double fdb = (tb(h) - tb(-h)) / (2 * h);
      CHECK(std::abs(g.beta[c] - fdb) <= 1e-5 * std::abs(fdb));
    }
  }
}
