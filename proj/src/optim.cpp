#include "refineseg/optim.hpp"

#include <cmath>

#include "refineseg/random.hpp"

namespace refineseg {

Adam::Adam(const ModelParams& like, AdamConfig config)
    : config_(config), m_(like.zeros_like()), v_(like.zeros_like()) {}

void Adam::step(ModelParams& params, const ModelParams& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "adam: parameter set changed");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (size_t e = 0; e < params.size(); ++e) {
    Tensor& p = params.entries()[e].value;
    const Tensor& g = grad.entries()[e].value;
    Tensor& m = m_.entries()[e].value;
    Tensor& v = v_.entries()[e].value;
    if (p.shape() != g.shape()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "adam: gradient shape mismatch for " +
                      params.entries()[e].name);
    }
    for (size_t i = 0; i < p.numel(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

Tensor kaiming_uniform(const Shape& shape, int fan_in, std::uint64_t seed) {
  Tensor t(shape);
  const double bound = std::sqrt(6.0 / fan_in);
  Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace refineseg
