#include "dgpvae/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dgpvae {

void AdamOptimizer::step(ParameterStore& store) {
  ++step_;
  double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store.at(i);
    if (!p.grad.all_finite()) {
      throw std::runtime_error("adam: non-finite gradient for parameter '" + p.name + "'");
    }
    auto it = moments_.find(p.name);
    if (it == moments_.end()) {
      it = moments_.emplace(p.name, Moments{Tensor::zeros(p.value.shape), Tensor::zeros(p.value.shape)})
               .first;
    }
    Tensor& m = it->second.m;
    Tensor& v = it->second.v;
    for (std::size_t j = 0; j < p.value.values.size(); ++j) {
      double g = p.grad.values[j];
      m.values[j] = config_.beta1 * m.values[j] + (1.0 - config_.beta1) * g;
      v.values[j] = config_.beta2 * v.values[j] + (1.0 - config_.beta2) * g * g;
      double m_hat = m.values[j] / bc1;
      double v_hat = v.values[j] / bc2;
      p.value.values[j] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

}  // namespace dgpvae
