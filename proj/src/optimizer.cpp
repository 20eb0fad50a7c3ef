// SPDX-License-Identifier: Apache-2.0
#include "kanac/optimizer.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "kanac/errors.hpp"

namespace kanac {

OptimizerState make_optimizer_state(const ModelConfig& config, const AdamSettings& settings) {
  return OptimizerState{settings, 0, zeros_like<float>(config), zeros_like<float>(config)};
}

void optimizer_step(Checkpoint& ckpt, const Weights<float>& grads, OptimizerState& state, double lr) {
  if (!(lr >= 0.0)) throw DomainError("learning rate must be >= 0");
  const auto& c = ckpt.config;
  check_shapes(c, grads);
  check_shapes(c, state.m);
  check_shapes(c, state.v);
  const auto grefs = tensor_refs(c, grads);
  for (const auto& r : grefs) {
    if (!std::all_of(r.data->begin(), r.data->end(), [](float x) { return std::isfinite(x); })) {
      throw NumericError(fmt::format("non-finite gradient in {}", r.name));
    }
  }
  const auto prefs = tensor_refs(c, ckpt.weights);
  const auto mrefs = tensor_refs(c, state.m);
  const auto vrefs = tensor_refs(c, state.v);
  const std::uint64_t step = state.step + 1;
  for (std::size_t i = 0; i < prefs.size(); ++i) {
    adam_update<float>(*prefs[i].data, *grefs[i].data, *mrefs[i].data, *vrefs[i].data, step, state.settings, lr);
  }
  state.step = step;
}

}  // namespace kanac
