// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "kanac/errors.hpp"
#include "kanac/optimizer.hpp"
#include "support/common.hpp"

using namespace kanac;

TEST_CASE("zero gradients shrink weights by exactly 1 - lambda at any lr") {
  const auto c = testing::tiny_config();
  for (double lr : {0.0, 1e-4, 0.5, 10.0}) {
    auto ck = init_checkpoint(c, 2, 0.5);
    const auto before = ck.weights;
    auto state = make_optimizer_state(c, AdamSettings{0.9, 0.95, 1e-8, 1e-4});
    optimizer_step(ck, zeros_like<float>(c), state, lr);
    const float decay = static_cast<float>(1.0 - 1e-4);
    const auto a = tensor_refs(c, before);
    const auto b = tensor_refs(c, ck.weights);
    for (std::size_t t = 0; t < a.size(); ++t)
      for (std::size_t i = 0; i < a[t].data->size(); ++i) CHECK((*b[t].data)[i] == (*a[t].data)[i] * decay);
  }
}

TEST_CASE("zero gradients and no decay leave weights unchanged") {
  const auto c = testing::tiny_config();
  auto ck = init_checkpoint(c, 2);
  const auto before = ck.weights;
  auto state = make_optimizer_state(c, AdamSettings{0.9, 0.95, 1e-8, 0.0});
  for (int i = 0; i < 3; ++i) optimizer_step(ck, zeros_like<float>(c), state, 1.0);
  CHECK(ck.weights == before);
  CHECK(state.step == 3);
}

TEST_CASE("scalar trajectory matches a hand-rolled Adam") {
  const AdamSettings s{0.9, 0.999, 1e-8, 0.0};
  std::vector<double> p{1.0}, m{0.0}, v{0.0};
  const std::vector<double> g{1.0};
  double rp = 1.0, rm = 0.0, rv = 0.0;
  for (int t = 1; t <= 3; ++t) {
    adam_update<double>(p, g, m, v, t, s, 0.1);
    rm = 0.9 * rm + 0.1 * 1.0;
    rv = 0.999 * rv + 0.001 * 1.0;
    const double mhat = rm / (1.0 - std::pow(0.9, t));
    const double vhat = rv / (1.0 - std::pow(0.999, t));
    rp -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(std::abs(p[0] - rp) <= 1e-9);
  }
  // A constant gradient moves by almost exactly lr per step.
  CHECK(p[0] == doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("non-finite gradients are rejected before any update") {
  const auto c = testing::tiny_config();
  auto ck = init_checkpoint(c, 2);
  const auto before = ck.weights;
  auto state = make_optimizer_state(c);
  auto g = zeros_like<float>(c);
  g.layers[0].w_up[3] = std::nanf("");
  CHECK_THROWS_AS(optimizer_step(ck, g, state, 1e-3), NumericError);
  CHECK(ck.weights == before);
  CHECK(state.step == 0);
  CHECK(state.m == zeros_like<float>(c));
}
