// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <numeric>

#include <json.hpp>

#include "kanac/errors.hpp"
#include "kanac/pruner.hpp"
#include "kanac/upscaler.hpp"
#include "support/common.hpp"

using namespace kanac;

TEST_CASE("overlap layout") {
  CHECK(dus_map(4, 4) == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(dus_map(4, 6) == std::vector<std::size_t>{0, 1, 2, 1, 2, 3});
  CHECK(dus_map(4, 8) == std::vector<std::size_t>{0, 1, 2, 3, 0, 1, 2, 3});
  CHECK(dus_map(3, 4) == std::vector<std::size_t>{0, 1, 1, 2});
  std::vector<std::size_t> expect(24);
  std::iota(expect.begin(), expect.end(), 0);
  for (std::size_t i = 8; i < 32; ++i) expect.push_back(i);
  CHECK(dus_map(32, 48) == expect);
  CHECK_THROWS_AS(dus_map(4, 3), ValidationError);
  CHECK_THROWS_AS(dus_map(4, 9), ValidationError);
  CHECK_THROWS_AS(dus_map(0, 0), ValidationError);
}

TEST_CASE("layers are copied bit-exactly") {
  auto c = testing::tiny_config();
  c.n_layers = 4;
  const auto ck = init_checkpoint(c, 8);
  const auto plan = make_dus_plan(c, dus_map(4, 6));
  const auto up = apply_dus(ck, plan);
  CHECK(up.config.n_layers == 6);
  const std::vector<std::size_t> map{0, 1, 2, 1, 2, 3};
  for (std::size_t i = 0; i < 6; ++i) CHECK(up.weights.layers[i] == ck.weights.layers[map[i]]);
  CHECK(up.weights.tok_embeddings == ck.weights.tok_embeddings);
  CHECK(up.weights.output == ck.weights.output);
  CHECK(up.weights.final_norm == ck.weights.final_norm);
  CHECK(up.metadata.at("dus_map") == "[0,1,2,1,2,3]");
  CHECK(up.metadata.at("origin") == "upscale");
  const std::size_t embed = 2 * c.vocab_size * c.hidden_dim + c.hidden_dim;
  CHECK(stored_parameter_count(up) == embed + 6 * layer_parameter_count(c));
}

TEST_CASE("identity plan and explicit maps") {
  auto c = testing::tiny_config();
  c.n_layers = 3;
  const auto ck = init_checkpoint(c, 1);
  CHECK(apply_dus(ck, make_dus_plan(c, {0, 1, 2})).weights == ck.weights);
  const auto up = apply_dus(ck, make_dus_plan(c, {2, 2, 0, 1, 1}));
  CHECK(up.weights.layers[0] == ck.weights.layers[2]);
  CHECK(up.weights.layers[4] == ck.weights.layers[1]);
  CHECK_THROWS_AS(make_dus_plan(c, {0, 3}), ValidationError);
  CHECK_THROWS_AS(make_dus_plan(c, {}), ValidationError);
  auto other = c;
  other.n_layers = 5;
  CHECK_THROWS_AS(apply_dus(init_checkpoint(other, 1), make_dus_plan(c, {0, 1, 2})), ValidationError);
}

TEST_CASE("plan JSON round trip") {
  auto c = testing::tiny_config();
  c.n_layers = 4;
  const auto p = make_dus_plan(c, dus_map(4, 6));
  const nlohmann::json j = p;
  const auto back = j.get<DusPlan>();
  CHECK(back.map == p.map);
  CHECK(back.source_digest == p.source_digest);
}
