#include <cmath>
#include <vector>

#include <doctest.h>
#include <Eigen/Dense>

#include "dgpvae/kernels.hpp"
#include "test_util.hpp"

using namespace dgpvae;
using test_util::check_close;

TEST_CASE("kernel evaluation") {
  SUBCASE("cauchy at zero lag equals the variance") {
    auto k = KernelSpec::cauchy(2.7, 3.0);
    check_close(k.eval(5.0, 5.0), 2.7);
  }

  SUBCASE("cauchy sigma^2 = 1, l = 2, lag 1 gives 0.8") {
    auto k = KernelSpec::cauchy(1.0, 2.0);
    check_close(k.eval(1.0, 0.0), 0.8);
    check_close(k.eval(0.0, 1.0), 0.8);  // symmetric
  }

  SUBCASE("constant kernel ignores the lag") {
    auto k = KernelSpec::constant(0.4);
    check_close(k.eval(0.0, 0.0), 0.4);
    check_close(k.eval(0.0, 77.0), 0.4);
  }

  SUBCASE("cauchy strictly decreases with lag") {
    auto k = KernelSpec::cauchy(1.3, 4.0);
    double prev = k.eval(0.0, 0.0);
    for (int lag = 1; lag < 30; ++lag) {
      double v = k.eval(static_cast<double>(lag), 0.0);
      CHECK(v < prev);
      prev = v;
    }
  }

  SUBCASE("invalid specs are rejected at construction") {
    CHECK_THROWS(KernelSpec::cauchy(0.0, 1.0));
    CHECK_THROWS(KernelSpec::rbf(1.0, -2.0));
    CHECK_THROWS(KernelSpec::sum({}));
  }

  SUBCASE("json round trip") {
    auto k = KernelSpec::sum({KernelSpec::scaled(0.9, KernelSpec::rbf(1.0, 5.0)),
                              KernelSpec::scaled(0.1, KernelSpec::constant(1.0))});
    auto back = KernelSpec::from_json(k.to_json());
    for (double lag : {0.0, 1.0, 3.0, 10.0}) check_close(back.eval(lag, 0.0), k.eval(lag, 0.0));
  }
}

TEST_CASE("gram construction") {
  SUBCASE("T = 1 gives the variance plus jitter") {
    auto g = gram(KernelSpec::cauchy(1.5, 2.0), 1, 1e-8);
    check_close(g.k(0, 0), 1.5 + g.jitter);
    CHECK(g.jitter >= 1e-8);
  }

  SUBCASE("cauchy T = 3, sigma^2 = 1, l = 2 matches the hand Gram") {
    // lags 0, 1, 2 -> 1, 1/(1+1/4) = 0.8, 1/(1+4/4) = 0.5
    auto g = gram(KernelSpec::cauchy(1.0, 2.0), 3);
    double expected[3][3] = {{1.0, 0.8, 0.5}, {0.8, 1.0, 0.8}, {0.5, 0.8, 1.0}};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double jit = i == j ? g.jitter : 0.0;
        check_close(g.k(i, j), expected[i][j] + jit);
      }
    }
  }

  SUBCASE("sum kernel gram is the elementwise sum of member grams") {
    auto a = KernelSpec::cauchy(0.7, 2.0);
    auto b = KernelSpec::constant(0.3);
    auto g_sum = gram(KernelSpec::sum({a, b}), 4, 1e-8);
    auto g_a = gram(a, 4, 1e-8);
    auto g_b = gram(b, 4, 1e-8);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        if (i == j) continue;  // jitter differs on the diagonal
        check_close(g_sum.k(i, j), g_a.k(i, j) + g_b.k(i, j));
      }
    }
  }

  SUBCASE("cholesky factor reproduces the gram to 1e-10") {
    auto g = gram(KernelSpec::cauchy(1.0, 20.0), 50);
    Eigen::MatrixXd recon = g.chol_l * g.chol_l.transpose();
    CHECK((recon - g.k).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("near-singular kernels escalate jitter but stay factorizable") {
    // Constant kernel is rank one, so jitter has to do the work.
    auto g = gram(KernelSpec::constant(1.0), 6, 1e-8);
    Eigen::LLT<Eigen::MatrixXd> llt(g.k);
    CHECK(llt.info() == Eigen::Success);
  }

  SUBCASE("gram is deterministic") {
    auto a = gram(KernelSpec::cauchy(1.0, 5.0), 10);
    auto b = gram(KernelSpec::cauchy(1.0, 5.0), 10);
    CHECK((a.k - b.k).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("gp sampling") {
  SUBCASE("zero noise gives the zero sample") {
    auto g = gram(KernelSpec::cauchy(1.0, 2.0), 5);
    auto s = sample_gp_with(g, std::vector<double>(5, 0.0));
    for (double v : s) CHECK(v == 0.0);
  }

  SUBCASE("constant kernel samples are flat lines up to jitter") {
    auto g = gram(KernelSpec::constant(1.0), 6, 1e-8);
    Rng rng(3);
    for (int rep = 0; rep < 10; ++rep) {
      auto s = sample_gp(g, rng);
      for (std::size_t i = 1; i < s.size(); ++i) CHECK(std::fabs(s[i] - s[0]) < 1e-2);
    }
  }

  SUBCASE("empirical covariance of 50k draws matches the gram within 0.05") {
    auto g = gram(KernelSpec::cauchy(1.0, 2.0), 4);
    Rng rng(17);
    const int n = 50000;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(4, 4);
    for (int i = 0; i < n; ++i) {
      auto s = sample_gp(g, rng);
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) cov(a, b) += s[a] * s[b];
      }
    }
    cov /= static_cast<double>(n);
    CHECK((cov - g.k).cwiseAbs().maxCoeff() < 0.05);
  }
}
