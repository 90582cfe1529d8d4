#include "dgpvae/kernels.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

using nlohmann::json;

namespace dgpvae {

namespace {

void require_positive(double v, const char* what) {
  if (!(v > 0.0)) {
    throw std::invalid_argument(std::string("KernelSpec: ") + what + " must be positive, got " +
                                std::to_string(v));
  }
}

json spec_to_json(const KernelSpec& spec) {
  json j;
  switch (spec.kind()) {
    case KernelSpec::Kind::Cauchy:
      j = {{"kind", "cauchy"}, {"variance", spec.variance()}, {"length_scale", spec.length_scale()}};
      break;
    case KernelSpec::Kind::Rbf:
      j = {{"kind", "rbf"}, {"variance", spec.variance()}, {"length_scale", spec.length_scale()}};
      break;
    case KernelSpec::Kind::Constant:
      j = {{"kind", "constant"}, {"variance", spec.variance()}};
      break;
    case KernelSpec::Kind::Sum: {
      json members = json::array();
      for (const auto& m : spec.members()) members.push_back(spec_to_json(m));
      j = {{"kind", "sum"}, {"members", members}};
      break;
    }
    case KernelSpec::Kind::Scaled:
      j = {{"kind", "scaled"}, {"weight", spec.weight()}, {"inner", spec_to_json(spec.members()[0])}};
      break;
  }
  return j;
}

KernelSpec spec_from_json(const json& j) {
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "cauchy") return KernelSpec::cauchy(j.at("variance"), j.at("length_scale"));
  if (kind == "rbf") return KernelSpec::rbf(j.at("variance"), j.at("length_scale"));
  if (kind == "constant") return KernelSpec::constant(j.at("variance"));
  if (kind == "sum") {
    std::vector<KernelSpec> members;
    for (const auto& m : j.at("members")) members.push_back(spec_from_json(m));
    return KernelSpec::sum(std::move(members));
  }
  if (kind == "scaled") return KernelSpec::scaled(j.at("weight"), spec_from_json(j.at("inner")));
  throw std::invalid_argument("KernelSpec: unknown kind '" + kind + "'");
}

}  // namespace

KernelSpec KernelSpec::cauchy(double variance, double length_scale) {
  require_positive(variance, "variance");
  require_positive(length_scale, "length scale");
  KernelSpec s;
  s.kind_ = Kind::Cauchy;
  s.variance_ = variance;
  s.length_scale_ = length_scale;
  return s;
}

KernelSpec KernelSpec::rbf(double variance, double length_scale) {
  require_positive(variance, "variance");
  require_positive(length_scale, "length scale");
  KernelSpec s;
  s.kind_ = Kind::Rbf;
  s.variance_ = variance;
  s.length_scale_ = length_scale;
  return s;
}

KernelSpec KernelSpec::constant(double variance) {
  require_positive(variance, "variance");
  KernelSpec s;
  s.kind_ = Kind::Constant;
  s.variance_ = variance;
  return s;
}

KernelSpec KernelSpec::sum(std::vector<KernelSpec> members) {
  if (members.empty()) throw std::invalid_argument("KernelSpec: sum needs at least one member");
  KernelSpec s;
  s.kind_ = Kind::Sum;
  s.members_ = std::move(members);
  return s;
}

KernelSpec KernelSpec::scaled(double weight, KernelSpec inner) {
  require_positive(weight, "weight");
  KernelSpec s;
  s.kind_ = Kind::Scaled;
  s.weight_ = weight;
  s.members_.push_back(std::move(inner));
  return s;
}

double KernelSpec::eval(double tau, double tau_prime) const {
  double d = tau - tau_prime;
  switch (kind_) {
    case Kind::Cauchy:
      return variance_ / (1.0 + d * d / (length_scale_ * length_scale_));
    case Kind::Rbf:
      return variance_ * std::exp(-0.5 * d * d / (length_scale_ * length_scale_));
    case Kind::Constant:
      return variance_;
    case Kind::Sum: {
      double acc = 0.0;
      for (const auto& m : members_) acc += m.eval(tau, tau_prime);
      return acc;
    }
    case Kind::Scaled:
      return weight_ * members_[0].eval(tau, tau_prime);
  }
  return 0.0;
}

std::string KernelSpec::to_json() const { return spec_to_json(*this).dump(); }

KernelSpec KernelSpec::from_json(const std::string& text) {
  return spec_from_json(json::parse(text));
}

double GramMatrix::log_det() const {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < chol_l.rows(); ++i) acc += std::log(chol_l(i, i));
  return 2.0 * acc;
}

Eigen::VectorXd GramMatrix::solve(const Eigen::VectorXd& rhs) const {
  Eigen::VectorXd y = chol_l.triangularView<Eigen::Lower>().solve(rhs);
  return chol_l.transpose().triangularView<Eigen::Upper>().solve(y);
}

Eigen::MatrixXd GramMatrix::chol_l_inverse() const {
  Eigen::Index n = chol_l.rows();
  return chol_l.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
}

GramMatrix GramMatrix::from_matrix(const Eigen::MatrixXd& k) {
  if (k.rows() != k.cols()) throw std::invalid_argument("GramMatrix: matrix is not square");
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("GramMatrix: explicit matrix is not positive definite");
  }
  GramMatrix g;
  g.k = k;
  g.chol_l = llt.matrixL();
  g.jitter = 0.0;
  return g;
}

GramMatrix gram(const KernelSpec& spec, std::size_t t_len, double jitter_start) {
  if (t_len < 1) throw std::invalid_argument("gram: T must be >= 1");
  Eigen::Index n = static_cast<Eigen::Index>(t_len);
  Eigen::MatrixXd base(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      double v = spec.eval(static_cast<double>(i), static_cast<double>(j));
      base(i, j) = v;
      base(j, i) = v;
    }
  }
  double zero_lag = spec.eval(0.0, 0.0);
  double jitter = jitter_start;
  while (true) {
    if (jitter > 1e-2 * zero_lag) {
      throw std::runtime_error("gram: kernel badly conditioned, jitter exceeded 1e-2 * variance (" +
                               std::to_string(jitter) + ")");
    }
    Eigen::MatrixXd k = base + jitter * Eigen::MatrixXd::Identity(n, n);
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() == Eigen::Success) {
      GramMatrix g;
      g.k = std::move(k);
      g.chol_l = llt.matrixL();
      g.jitter = jitter;
      return g;
    }
    jitter *= 10.0;
  }
}

std::vector<double> sample_gp(const GramMatrix& gram, Rng& rng) {
  std::vector<double> eps(gram.size());
  for (double& e : eps) e = rng.normal();
  return sample_gp_with(gram, eps);
}

std::vector<double> sample_gp_with(const GramMatrix& gram, const std::vector<double>& eps) {
  std::size_t n = gram.size();
  if (eps.size() != n) {
    throw std::invalid_argument("sample_gp: noise length " + std::to_string(eps.size()) +
                                " does not match T = " + std::to_string(n));
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      acc += gram.chol_l(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * eps[j];
    }
    out[i] = acc;
  }
  return out;
}

}  // namespace dgpvae
