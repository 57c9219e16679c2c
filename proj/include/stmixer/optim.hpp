#pragma once

#include <cmath>
#include <string>

#include "stmixer/tensor.hpp"

namespace stmixer {

/// A learnable tensor plus its AdamW moment state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor first_moment;
  Tensor second_moment;
  int64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    value.set_requires_grad(true);
    first_moment = Tensor::zeros(value.shape());
    second_moment = Tensor::zeros(value.shape());
  }
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// One decoupled-weight-decay Adam update. The decay is applied directly to
/// the value (not through the gradient); moments are bias-corrected.
inline void adamw_step(Parameter& p, const Tensor& grad, const AdamWConfig& cfg) {
  if (grad.shape() != p.value.shape())
    throw DimensionError("adamw_step: gradient " + shape_str(grad.shape()) +
                         " does not match parameter '" + p.name + "' " +
                         shape_str(p.value.shape()));
  const double* g = grad.data();
  for (int64_t i = 0; i < grad.numel(); ++i)
    if (!std::isfinite(g[i]))
      throw NumericError("adamw_step: non-finite gradient entry in parameter '" + p.name + "'");
  p.step_count += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, double(p.step_count));
  double bc2 = 1.0 - std::pow(cfg.beta2, double(p.step_count));
  double* v = p.value.data();
  double* m1 = p.first_moment.data();
  double* m2 = p.second_moment.data();
  for (int64_t i = 0; i < p.value.numel(); ++i) {
    v[i] -= cfg.lr * cfg.weight_decay * v[i];
    m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g[i];
    m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    double mhat = m1[i] / bc1;
    double vhat = m2[i] / bc2;
    v[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace stmixer
