#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "dgpvae/rng.hpp"
#include "dgpvae/tensor.hpp"

namespace test_util {

inline void check_close(double actual, double expected, double rel = 1e-9, double abs = 1e-12) {
  double tol = abs + rel * std::max({1.0, std::fabs(actual), std::fabs(expected)});
  CHECK_MESSAGE(std::fabs(actual - expected) <= tol,
                "actual=" << actual << " expected=" << expected << " tol=" << tol);
}

inline std::vector<double> random_values(std::size_t n, dgpvae::Rng& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Central finite differences of a scalar function, one column per coordinate.
inline std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& f,
                                       const std::vector<double>& x, double h = 1e-5) {
  std::vector<double> g(x.size());
  std::vector<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    double up = f(probe);
    probe[i] = x[i] - h;
    double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline void check_grad_close(const std::vector<double>& ad, const std::vector<double>& fd,
                             double rel = 1e-5) {
  REQUIRE(ad.size() == fd.size());
  for (std::size_t i = 0; i < ad.size(); ++i) {
    double tol = rel * std::max({1.0, std::fabs(ad[i]), std::fabs(fd[i])});
    CHECK_MESSAGE(std::fabs(ad[i] - fd[i]) <= tol,
                  "coordinate " << i << ": ad=" << ad[i] << " fd=" << fd[i]);
  }
}

}  // namespace test_util
