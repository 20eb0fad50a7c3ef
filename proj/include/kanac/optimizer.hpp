// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include "kanac/model.hpp"

namespace kanac {

/// Adam with bias correction followed by weight decay that is NOT scaled by
/// the learning rate: theta <- theta * (1 - weight_decay) on every step.
struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct OptimizerState {
  AdamSettings settings;
  std::uint64_t step = 0;
  Weights<float> m;
  Weights<float> v;
};

OptimizerState make_optimizer_state(const ModelConfig& config, const AdamSettings& settings = {});

/// One update of every tensor. Throws NumericError (leaving weights and state
/// untouched) when a gradient is NaN or infinite.
void optimizer_step(Checkpoint& ckpt, const Weights<float>& grads, OptimizerState& state, double lr);

/// Element-wise update of one tensor; `step` is the 1-based count including
/// this update.
template <class T>
void adam_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v,
                 std::uint64_t step, const AdamSettings& s, double lr) {
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(s.eps);
  const T decay = static_cast<T>(1.0 - s.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    params[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    params[i] *= decay;
  }
}

}  // namespace kanac
