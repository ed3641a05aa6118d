#pragma once

#include <cstdint>

#include "refineseg/tensor.hpp"

namespace refineseg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ModelParams& like, AdamConfig config = {});

  // One bias-corrected update. `grad` must match `params` name for name.
  void step(ModelParams& params, const ModelParams& grad);

  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  ModelParams m_;
  ModelParams v_;
  long t_ = 0;
};

// Kaiming-uniform (fan-in, ReLU gain) weights; `fan_in` from the caller since
// conv and transposed-conv layouts differ.
Tensor kaiming_uniform(const Shape& shape, int fan_in, std::uint64_t seed);

}  // namespace refineseg
