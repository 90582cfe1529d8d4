#pragma once

#include <cstdint>
#include <unordered_map>

#include "dgpvae/params.hpp"

namespace dgpvae {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moments are keyed by parameter name and created
// on first use; the step counter is shared across parameters.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig config) : config_(config) {}

  // Applies one update from the gradients currently held in the store.
  // Throws if any gradient is non-finite, naming the parameter.
  void step(ParameterStore& store);

  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

}  // namespace dgpvae
