#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fewsel/errors.hpp"
#include "fewsel/matrix.hpp"
#include "fewsel/model.hpp"

namespace fewsel {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of every parameter in `params`.
/// `grads` follows ModelParams::named() order.
inline void adam_step(ModelParams& params, const std::vector<Matrix>& grads, AdamState& state, const AdamConfig& cfg) {
  auto refs = params.named();
  if (grads.size() != refs.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(refs.size()) + " parameters");
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!grads[i].same_shape(*refs[i].value)) {
      throw std::invalid_argument("adam_step: gradient shape " + grads[i].shape() + " does not match " + refs[i].name +
                                  " " + refs[i].value->shape());
    }
    if (!grads[i].all_finite()) throw numeric_error("non-finite gradient in parameter group '" + refs[i].name + "'");
  }
  if (state.m.empty()) {
    for (const auto& r : refs) {
      state.m.emplace_back(r.value->rows(), r.value->cols());
      state.v.emplace_back(r.value->rows(), r.value->cols());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    Matrix& w = *refs[i].value;
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    const Matrix& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      w[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.epsilon);
    }
  }
}

}  // namespace fewsel
