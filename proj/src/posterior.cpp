#include "dgpvae/posterior.hpp"

#include <cmath>
#include <stdexcept>

namespace dgpvae {

namespace {

void solve_upper_inplace(const BandedCholesky& b, std::vector<double>& x) {
  std::size_t t_len = b.size();
  x[t_len - 1] /= b.diag[t_len - 1];
  for (std::size_t t = t_len - 1; t-- > 0;) {
    x[t] = (x[t] - b.super[t] * x[t + 1]) / b.diag[t];
  }
}

}  // namespace

BandedCholesky::BandedCholesky(std::vector<double> d, std::vector<double> s)
    : diag(std::move(d)), super(std::move(s)) {
  if (diag.empty()) throw std::invalid_argument("BandedCholesky: empty diagonal");
  if (super.size() != diag.size() - 1) {
    throw std::invalid_argument("BandedCholesky: superdiagonal length " +
                                std::to_string(super.size()) + " does not match T = " +
                                std::to_string(diag.size()));
  }
  for (double v : diag) {
    if (!(v > 0.0)) {
      throw std::invalid_argument("BandedCholesky: diagonal entries must be positive, got " +
                                  std::to_string(v));
    }
  }
}

StructuredGaussian::StructuredGaussian(std::vector<double> m, BandedCholesky b)
    : mean(std::move(m)), band(std::move(b)) {
  if (mean.size() != band.size()) {
    throw std::invalid_argument("StructuredGaussian: mean length " + std::to_string(mean.size()) +
                                " does not match band T = " + std::to_string(band.size()));
  }
}

Eigen::MatrixXd precision(const BandedCholesky& band) {
  Eigen::Index n = static_cast<Eigen::Index>(band.size());
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(n, n);
  // (B^T B)_tt = d_t^2 + s_{t-1}^2, (B^T B)_{t,t+1} = d_t s_t.
  for (Eigen::Index t = 0; t < n; ++t) {
    double v = band.diag[t] * band.diag[t];
    if (t > 0) v += band.super[t - 1] * band.super[t - 1];
    lambda(t, t) = v;
    if (t + 1 < n) {
      double off = band.diag[t] * band.super[t];
      lambda(t, t + 1) = off;
      lambda(t + 1, t) = off;
    }
  }
  return lambda;
}

double log_det_precision(const BandedCholesky& band) {
  double acc = 0.0;
  for (double v : band.diag) acc += std::log(v);
  return 2.0 * acc;
}

std::vector<double> sample(const StructuredGaussian& q, Rng& rng) {
  std::vector<double> eps(q.size());
  for (double& e : eps) e = rng.normal();
  return sample_with(q, eps);
}

std::vector<double> sample_with(const StructuredGaussian& q, const std::vector<double>& eps) {
  if (eps.size() != q.size()) {
    throw std::invalid_argument("sample: noise length does not match T");
  }
  std::vector<double> x = eps;
  solve_upper_inplace(q.band, x);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] += q.mean[t];
  return x;
}

double kl_to_gp_prior(const StructuredGaussian& q, const GramMatrix& prior) {
  std::size_t t_len = q.size();
  if (prior.size() != t_len) {
    throw std::invalid_argument("kl_to_gp_prior: prior dimension " + std::to_string(prior.size()) +
                                " does not match q dimension " + std::to_string(t_len));
  }
  Eigen::Index n = static_cast<Eigen::Index>(t_len);

  // tr(K^-1 Sigma_q) = || B^-T L^-T ||_F^2, column solves against the band.
  Eigen::MatrixXd l_inv_t = prior.chol_l_inverse().transpose();
  double trace = 0.0;
  std::vector<double> col(t_len);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) col[i] = l_inv_t(i, j);
    // forward substitution for B^T y = col
    col[0] /= q.band.diag[0];
    for (std::size_t t = 1; t < t_len; ++t) {
      col[t] = (col[t] - q.band.super[t - 1] * col[t - 1]) / q.band.diag[t];
    }
    for (double v : col) trace += v * v;
  }

  Eigen::VectorXd m(n);
  for (Eigen::Index i = 0; i < n; ++i) m(i) = q.mean[i];
  Eigen::VectorXd alpha = prior.chol_l.triangularView<Eigen::Lower>().solve(m);
  double quad = alpha.squaredNorm();

  double log_det_sigma_q = -log_det_precision(q.band);
  return 0.5 * (trace + quad - static_cast<double>(t_len) + prior.log_det() - log_det_sigma_q);
}

double total_kl(const std::vector<StructuredGaussian>& qs, const std::vector<GramMatrix>& priors) {
  if (qs.size() != priors.size()) {
    throw std::invalid_argument("total_kl: " + std::to_string(qs.size()) + " channels vs " +
                                std::to_string(priors.size()) + " priors");
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < qs.size(); ++j) acc += kl_to_gp_prior(qs[j], priors[j]);
  return acc;
}

GpPriorOperator GpPriorOperator::from_gram(const GramMatrix& gram) {
  GpPriorOperator op;
  op.t_len = gram.size();
  op.log_det_k = gram.log_det();
  Eigen::MatrixXd l_inv = gram.chol_l_inverse();
  Eigen::Index n = l_inv.rows();
  op.l_inv = Tensor::zeros({op.t_len, op.t_len});
  op.l_inv_t = Tensor::zeros({op.t_len, op.t_len});
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      op.l_inv(i, j) = l_inv(i, j);
      op.l_inv_t(j, i) = l_inv(i, j);
    }
  }
  return op;
}

Var kl_to_gp_prior_op(Tape& tape, Var mean, Var diag, Var super, const GpPriorOperator& prior) {
  std::size_t t_len = prior.t_len;
  if (tape.value(mean).numel() != t_len || tape.value(diag).numel() != t_len) {
    throw std::invalid_argument("kl_to_gp_prior_op: mean/diag length does not match prior T = " +
                                std::to_string(t_len));
  }
  // trace term: || B^-T L^-T ||_F^2
  Var l_inv_t = tape.constant(prior.l_inv_t);
  Var w = tape.bidiag_solve(diag, super, l_inv_t, /*transposed=*/true);
  Var trace = tape.sum(tape.mul(w, w));
  // quadratic term: || L^-1 m ||^2
  Var l_inv = tape.constant(prior.l_inv);
  Var m_col = tape.reshape(mean, {t_len, 1});
  Var alpha = tape.matmul(l_inv, m_col);
  Var quad = tape.sum(tape.mul(alpha, alpha));
  // 0.5 (trace + quad - T + log det K) + sum_t log b_tt
  Var half = tape.scale(
      tape.add_scalar(tape.add(trace, quad), prior.log_det_k - static_cast<double>(t_len)), 0.5);
  Var log_diag_sum = tape.sum(tape.log(diag));
  return tape.add(half, log_diag_sum);
}

Var sample_op(Tape& tape, Var mean, Var diag, Var super, const Tensor& eps) {
  Var eps_v = tape.constant(eps);
  Var z = tape.bidiag_solve(diag, super, eps_v, /*transposed=*/false);
  return tape.add(mean, z);
}

}  // namespace dgpvae
