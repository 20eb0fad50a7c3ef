// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "kanac/errors.hpp"
#include "kanac/model.hpp"
#include "support/common.hpp"
#include "support/gradcheck.hpp"
#include "support/reference_model.hpp"

using namespace kanac;
using kanac::testing::max_abs_diff;

TEST_CASE("init is seeded and norm gains start at one") {
  const auto c = testing::tiny_config();
  const auto a = init_checkpoint(c, 5), b = init_checkpoint(c, 5), other = init_checkpoint(c, 6);
  CHECK(a.weights == b.weights);
  CHECK_FALSE(a.weights == other.weights);
  CHECK(a.weights.final_norm == std::vector<float>(c.hidden_dim, 1.0f));
  CHECK(a.weights.layers[0].ffn_norm == std::vector<float>(c.hidden_dim, 1.0f));
  check_shapes(c, a.weights);
}

TEST_CASE("zero projections give exactly zero logits") {
  auto c = testing::tiny_config();
  auto ck = init_checkpoint(c, 1);
  for (auto& t : tensor_refs(c, ck.weights)) {
    if (t.name.find("norm") == std::string::npos) std::fill(t.data->begin(), t.data->end(), 0.0f);
  }
  const auto logits = forward(ck, testing::random_batch(c, 2, 5, 2));
  CHECK(std::all_of(logits.begin(), logits.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("permuting output rows permutes logits") {
  const auto c = testing::tiny_config();
  auto ck = init_checkpoint(c, 1, 0.3);
  const auto batch = testing::random_batch(c, 2, 6, 3);
  const auto base = forward(ck, batch);
  std::vector<std::size_t> perm(c.vocab_size);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(4);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto permuted = ck;
  for (std::size_t v = 0; v < c.vocab_size; ++v) {
    std::copy_n(ck.weights.output.begin() + perm[v] * c.hidden_dim, c.hidden_dim,
                permuted.weights.output.begin() + v * c.hidden_dim);
  }
  const auto out = forward(permuted, batch);
  for (std::size_t r = 0; r < batch.batch * batch.seq; ++r)
    for (std::size_t v = 0; v < c.vocab_size; ++v)
      CHECK(out[r * c.vocab_size + v] == base[r * c.vocab_size + perm[v]]);
}

TEST_CASE("forward matches the straight-line reference") {
  SUBCASE("fixed 1-layer config") {
    const auto c = testing::tiny_config();
    auto ck = init_checkpoint(c, 11);
    testing::scramble(ck, 11);
    const auto batch = testing::random_batch(c, 2, 9, 12);
    CHECK(max_abs_diff(forward(ck, batch), testing::reference_logits(ck, batch)) <= 1e-5);
  }
  SUBCASE("random configs") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 10; ++trial) {
      const auto c = testing::random_config(rng);
      auto ck = init_checkpoint(c, trial);
      testing::scramble(ck, trial + 100);
      const auto batch = testing::random_batch(c, 2, 7, trial);
      CHECK(max_abs_diff(forward(ck, batch), testing::reference_logits(ck, batch)) <= 1e-5);
    }
  }
}

TEST_CASE("attention is causal and sequences are independent") {
  ModelConfig c = testing::tiny_config();
  c.n_layers = 2;
  auto ck = init_checkpoint(c, 2);
  testing::scramble(ck, 2);
  auto batch = testing::random_batch(c, 2, 8, 3);
  const auto base = forward(ck, batch);
  batch.tokens[5] = (batch.tokens[5] + 1) % c.vocab_size;  // sequence 0, position 5
  const auto changed = forward(ck, batch);
  const std::size_t V = c.vocab_size;
  for (std::size_t t = 0; t < 8; ++t) {
    const bool same = std::equal(base.begin() + t * V, base.begin() + (t + 1) * V, changed.begin() + t * V);
    CHECK(same == (t < 5));
  }
  CHECK(std::equal(base.begin() + 8 * V, base.end(), changed.begin() + 8 * V));
}

TEST_CASE("batch validation") {
  const auto c = testing::tiny_config();
  const auto ck = init_checkpoint(c, 1);
  CHECK_THROWS_AS(forward(ck, TokenBatch{1, 3, {1, 2, 11}}), DomainError);
  CHECK_THROWS_AS(forward(ck, TokenBatch{1, 17, std::vector<TokenId>(17, 0)}), DomainError);
  CHECK_THROWS_AS(forward(ck, TokenBatch{2, 3, {1, 2, 3}}), DomainError);
  CHECK_THROWS_AS(forward(ck, TokenBatch{0, 0, {}}), DomainError);
}

TEST_CASE("non-finite weights raise a numeric error") {
  const auto c = testing::tiny_config();
  auto ck = init_checkpoint(c, 1);
  ck.weights.layers[0].wv[0] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(forward(ck, testing::random_batch(c, 1, 4, 1)), NumericError);
}

TEST_CASE("next-token loss values") {
  const std::vector<float> uniform(4, 0.0f);
  const std::vector<TokenId> t0{0};
  CHECK(ntp_loss(uniform, t0, 4) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  const std::vector<float> peaked{10, 0, 0, 0};
  CHECK(ntp_loss(peaked, t0, 4) == doctest::Approx(std::log1p(3 * std::exp(-10.0))).epsilon(1e-6));
  CHECK(ntp_loss(peaked, t0, 4) == doctest::Approx(1.3625e-4).epsilon(1e-3));
  const std::vector<float> two{10, 0, 0, 0, 0, 0, 0, 0};
  const std::vector<TokenId> t2{0, 2};
  CHECK(ntp_loss(two, t2, 4) == doctest::Approx(0.5 * (std::log1p(3 * std::exp(-10.0)) + std::log(4.0))));
}

TEST_CASE("z-loss values") {
  const std::vector<float> zeros(4, 0.0f);
  CHECK(z_loss(zeros, 4, 5e-6) == doctest::Approx(5e-6 * std::log(4.0) * std::log(4.0)).epsilon(1e-12));
  CHECK(z_loss(zeros, 4, 5e-6) == doctest::Approx(9.609e-6).epsilon(1e-3));
  const std::vector<float> any{3, -1, 7, 2};
  CHECK(z_loss(any, 4, 0.0) == 0.0);
  // Log-partition exactly zero: a single-entry vocabulary with logit 0.
  const std::vector<float> one{0.0f};
  CHECK(z_loss(one, 1, 1.0) == 0.0);
  const float shift = -std::log(4.0f);
  const std::vector<float> shifted(4, shift);
  CHECK(z_loss(shifted, 4, 1.0) < 1e-12);
  CHECK_THROWS_AS(z_loss(any, 4, -1.0), DomainError);
}

TEST_CASE("zero loss weights give zero gradients") {
  const auto c = testing::tiny_config();
  auto ck = init_checkpoint(c, 1, 0.3);
  const auto batch = testing::random_batch(c, 2, 5, 1);
  LossBreakdown lb;
  const auto g = backward(ck, {batch, testing::random_targets(c, 10, 2)}, LossSpec{0.0, 0.0}, &lb);
  CHECK(lb.total == 0.0);
  for (const auto& t : tensor_refs(c, g))
    CHECK(std::all_of(t.data->begin(), t.data->end(), [](float v) { return v == 0.0f; }));
}

namespace {

ModelConfig gradcheck_config(bool tied) {
  ModelConfig c;
  c.vocab_size = 7;
  c.n_layers = 2;
  c.hidden_dim = 8;
  c.n_query_heads = 2;
  c.n_kv_heads = 1;
  c.head_dim = 4;
  c.intermediate_dim = 8;
  c.max_seq_len = 8;
  c.tied_embeddings = tied;
  return c;
}

}  // namespace

TEST_CASE("analytic gradients match central differences") {
  for (bool tied : {false, true}) {
    const auto c = gradcheck_config(tied);
    CHECK(parameter_count(c) <= 1000);
    auto ck = init_checkpoint(c, 7);
    testing::scramble(ck, 7, 0.5);
    const auto w = cast_weights<double>(ck.weights);
    const auto batch = testing::random_batch(c, 2, 5, 7);
    const auto targets = testing::random_targets(c, 10, 8);

    auto teacher = init_checkpoint(c, 9);
    testing::scramble(teacher, 9, 0.5);
    const auto tlogits = forward_activations<double>(c, cast_weights<double>(teacher.weights), batch).logits;

    const std::vector<std::pair<const char*, testing::LogitObjective>> objectives = {
        {"ntp", testing::lm_objective(targets, c.vocab_size, LossSpec{1.0, 0.0})},
        {"z", testing::lm_objective(targets, c.vocab_size, LossSpec{0.0, 1.0})},
        {"ntp+z", testing::lm_objective(targets, c.vocab_size, LossSpec{1.0, 5e-6})},
        {"kl", testing::kl_objective(tlogits, c.vocab_size, 1.0)},
        {"kl T=2", testing::kl_objective(tlogits, c.vocab_size, 2.0)},
    };
    for (const auto& [label, obj] : objectives) {
      for (const auto& e : testing::gradient_errors(c, w, batch, obj)) {
        INFO(label, " tied=", tied, " ", e.name);
        CHECK(e.rel_err <= 1e-3);
      }
    }
  }
}

TEST_CASE("tied gradient is the sum of both roles on the untied twin") {
  const auto tied_cfg = gradcheck_config(true);
  auto tied = init_checkpoint(tied_cfg, 3);
  testing::scramble(tied, 3, 0.5);
  auto twin = tied;
  twin.config.tied_embeddings = false;
  twin.weights.output = tied.weights.tok_embeddings;

  const auto batch = testing::random_batch(tied_cfg, 2, 6, 4);
  const TrainBatch tb{batch, testing::random_targets(tied_cfg, 12, 5)};
  CHECK(forward(tied, batch) == forward(twin, batch));
  const auto gt = backward(tied, tb, {});
  const auto gu = backward(twin, tb, {});
  CHECK(gt.output.empty());
  for (std::size_t i = 0; i < gt.tok_embeddings.size(); ++i)
    CHECK(gt.tok_embeddings[i] == doctest::Approx(gu.tok_embeddings[i] + gu.output[i]).epsilon(1e-5));
}
