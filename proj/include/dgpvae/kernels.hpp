#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "dgpvae/rng.hpp"

namespace dgpvae {

// Stationary kernel description. The Cauchy kernel
//   k(tau, tau') = sigma^2 (1 + (tau - tau')^2 / l^2)^-1
// is the latent prior; factor synthesis uses RBF + constant mixtures.
class KernelSpec {
 public:
  enum class Kind { Cauchy, Rbf, Constant, Sum, Scaled };

  static KernelSpec cauchy(double variance, double length_scale);
  static KernelSpec rbf(double variance, double length_scale);
  static KernelSpec constant(double variance);
  static KernelSpec sum(std::vector<KernelSpec> members);
  static KernelSpec scaled(double weight, KernelSpec inner);

  Kind kind() const { return kind_; }
  double variance() const { return variance_; }
  double length_scale() const { return length_scale_; }
  double weight() const { return weight_; }
  const std::vector<KernelSpec>& members() const { return members_; }

  // Kernel value; symmetric in (tau, tau').
  double eval(double tau, double tau_prime) const;

  std::string to_json() const;
  static KernelSpec from_json(const std::string& text);

 private:
  KernelSpec() = default;
  Kind kind_ = Kind::Constant;
  double variance_ = 1.0;
  double length_scale_ = 1.0;
  double weight_ = 1.0;          // Scaled only
  std::vector<KernelSpec> members_;  // Sum: >= 1 member; Scaled: exactly 1
};

// T x T kernel matrix on the integer grid 0..T-1, with enough jitter on the
// diagonal for the Cholesky factorization to succeed. The stored matrix
// includes the jitter.
struct GramMatrix {
  Eigen::MatrixXd k;       // jittered kernel matrix
  Eigen::MatrixXd chol_l;  // lower Cholesky factor of k
  double jitter = 0.0;     // jitter actually applied

  std::size_t size() const { return static_cast<std::size_t>(k.rows()); }
  double log_det() const;
  // Solves k x = rhs via the Cholesky factor.
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  // Explicit inverse of the lower Cholesky factor (dense, for KL constants).
  Eigen::MatrixXd chol_l_inverse() const;

  // Wraps an explicit SPD matrix (no jitter escalation); used where a prior
  // covariance is known directly rather than through a kernel.
  static GramMatrix from_matrix(const Eigen::MatrixXd& k);
};

// Builds the Gram matrix, escalating jitter geometrically (x10) from
// jitter_start until the factorization succeeds. Throws once the required
// jitter exceeds 1e-2 times the kernel variance at zero lag.
GramMatrix gram(const KernelSpec& spec, std::size_t t_len, double jitter_start = 1e-8);

// Draws L * eps with eps ~ N(0, I).
std::vector<double> sample_gp(const GramMatrix& gram, Rng& rng);
// Deterministic variant for a caller-supplied noise vector.
std::vector<double> sample_gp_with(const GramMatrix& gram, const std::vector<double>& eps);

}  // namespace dgpvae
