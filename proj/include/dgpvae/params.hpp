#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dgpvae/rng.hpp"
#include "dgpvae/tensor.hpp"

namespace dgpvae {

// Trainable tensor with its accumulated gradient and a stable name.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // always same shape as value
};

// Owns parameters in a stable creation order; names are unique.
class ParameterStore {
 public:
  Parameter& create(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool has(const std::string& name) const;

  void zero_grads();
  std::size_t size() const { return order_.size(); }
  Parameter& at(std::size_t i) { return *order_[i]; }
  const Parameter& at(std::size_t i) const { return *order_[i]; }

 private:
  std::unordered_map<std::string, std::unique_ptr<Parameter>> params_;
  std::vector<Parameter*> order_;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases start at zero.
Tensor glorot_uniform(const std::vector<std::size_t>& shape, std::size_t fan_in,
                      std::size_t fan_out, Rng& rng);

// Checkpoint I/O: a directory holding manifest.json plus one little-endian
// float64 binary file per parameter.
void save_checkpoint(const ParameterStore& store, const std::string& dir);
void load_checkpoint(ParameterStore& store, const std::string& dir);

}  // namespace dgpvae
