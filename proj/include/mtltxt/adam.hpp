#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "mtltxt/graph.hpp"

namespace mtltxt {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over the trainable tensors of a ParamStore. Frozen
// tensors are never touched; a step with non-finite gradients aborts
// before mutating anything.
class Adam {
 public:
  explicit Adam(std::shared_ptr<ParamStore> store, AdamConfig config = {});

  void step();
  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::shared_ptr<ParamStore> store_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

}  // namespace mtltxt
