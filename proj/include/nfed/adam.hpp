// Adam with bias correction; shared by the decomposition solver and the toy
// network trainer.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "nfed/fields.hpp"

namespace nfed {

struct adam_state {
  std::vector<double> m, v;
  int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  adam_state() = default;
  explicit adam_state(size_t n) : m(n, 0.0), v(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad, double lr) {
    if (params.size() != m.size() || grad.size() != m.size())
      throw validation_error("adam_state: size mismatch");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
};

}  // namespace nfed
