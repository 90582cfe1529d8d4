#pragma once

#include <vector>

#include <Eigen/Dense>

#include "dgpvae/autodiff.hpp"
#include "dgpvae/kernels.hpp"
#include "dgpvae/rng.hpp"

namespace dgpvae {

// Upper bidiagonal factor B of the per-channel precision Lambda = B^T B.
// Entries exist only at (t, t) and (t, t+1); the diagonal is strictly
// positive so the log-determinant is defined. Producers map raw network
// outputs through softplus plus a 1e-4 floor before constructing one.
struct BandedCholesky {
  std::vector<double> diag;   // length T, all > 0
  std::vector<double> super;  // length T-1

  BandedCholesky(std::vector<double> d, std::vector<double> s);
  std::size_t size() const { return diag.size(); }
};

inline constexpr double kBandDiagFloor = 1e-4;

// Per-channel Gauss-Markov posterior q = N(mean, (B^T B)^-1).
struct StructuredGaussian {
  std::vector<double> mean;  // length T
  BandedCholesky band;

  StructuredGaussian(std::vector<double> m, BandedCholesky b);
  std::size_t size() const { return mean.size(); }
};

// Dense tridiagonal Lambda = B^T B.
Eigen::MatrixXd precision(const BandedCholesky& band);

// log det Lambda = 2 sum_t log b_tt.
double log_det_precision(const BandedCholesky& band);

// mean + B^-1 eps by back-substitution; covariance of draws converges to
// Lambda^-1.
std::vector<double> sample(const StructuredGaussian& q, Rng& rng);
std::vector<double> sample_with(const StructuredGaussian& q, const std::vector<double>& eps);

// Exact KL(q || N(0, K)) computed from the prior Cholesky and the band:
//   0.5 [ tr(K^-1 Sigma_q) + m^T K^-1 m - T + log det K - log det Sigma_q ].
double kl_to_gp_prior(const StructuredGaussian& q, const GramMatrix& prior);

// Sum of per-channel KL terms against per-channel priors.
double total_kl(const std::vector<StructuredGaussian>& qs, const std::vector<GramMatrix>& priors);

// Prior-side constants reused across a batch: the inverse Cholesky factor of
// K as tape constants plus log det K.
struct GpPriorOperator {
  std::size_t t_len = 0;
  double log_det_k = 0.0;
  Tensor l_inv;    // T x T lower triangular, L^-1
  Tensor l_inv_t;  // its transpose

  static GpPriorOperator from_gram(const GramMatrix& gram);
};

// Differentiable counterparts used inside the ELBO. `diag` must already be
// positive (softplus-floored upstream).
Var kl_to_gp_prior_op(Tape& tape, Var mean, Var diag, Var super, const GpPriorOperator& prior);
Var sample_op(Tape& tape, Var mean, Var diag, Var super, const Tensor& eps);

}  // namespace dgpvae
