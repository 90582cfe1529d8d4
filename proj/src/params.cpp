#include "dgpvae/params.hpp"

#include <cmath>
#include <stdexcept>

namespace dgpvae {

Parameter& ParameterStore::create(const std::string& name, Tensor init) {
  if (params_.count(name)) {
    throw std::invalid_argument("ParameterStore: duplicate parameter '" + name + "'");
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor::zeros(init.shape);
  p->value = std::move(init);
  Parameter* raw = p.get();
  params_.emplace(name, std::move(p));
  order_.push_back(raw);
  return *raw;
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw std::out_of_range("ParameterStore: unknown parameter '" + name + "'");
  }
  return *it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw std::out_of_range("ParameterStore: unknown parameter '" + name + "'");
  }
  return *it->second;
}

bool ParameterStore::has(const std::string& name) const { return params_.count(name) > 0; }

void ParameterStore::zero_grads() {
  for (Parameter* p : order_) {
    std::fill(p->grad.values.begin(), p->grad.values.end(), 0.0);
  }
}

Tensor glorot_uniform(const std::vector<std::size_t>& shape, std::size_t fan_in,
                      std::size_t fan_out, Rng& rng) {
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.values) v = rng.uniform(-a, a);
  return t;
}

}  // namespace dgpvae
