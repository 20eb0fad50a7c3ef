// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "kanac/kernels.hpp"
#include "kanac/model.hpp"
#include "support/common.hpp"

using namespace kanac;

namespace {

template <class T>
std::vector<T> randn(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(nd(rng));
  return v;
}

struct ThreadGuard {
  explicit ThreadGuard(int n) { kernels::set_threads(n); }
  ~ThreadGuard() { kernels::set_threads(1); }
};

}  // namespace

TEST_CASE("linear matches a naive double product") {
  const std::size_t m = 7, in = 37, out = 13;
  const auto x = randn<float>(m * in, 1), w = randn<float>(out * in, 2);
  std::vector<float> y(m * out);
  kernels::serial::linear(x.data(), w.data(), y.data(), m, in, out);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      double ref = 0.0;
      for (std::size_t i = 0; i < in; ++i) ref += double(x[r * in + i]) * double(w[o * in + i]);
      CHECK(std::abs(y[r * out + o] - ref) < 1e-4);
    }
  }
}

TEST_CASE("linear gradients match their definitions") {
  const std::size_t m = 5, in = 19, out = 11;
  const auto dy = randn<double>(m * out, 3), w = randn<double>(out * in, 4), x = randn<double>(m * in, 5);
  std::vector<double> dx(m * in, 1.0), dw(out * in, 2.0);
  kernels::serial::linear_grad_input(dy.data(), w.data(), dx.data(), m, in, out);
  kernels::serial::linear_grad_weight(dy.data(), x.data(), dw.data(), m, in, out);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t i = 0; i < in; ++i) {
      double ref = 1.0;
      for (std::size_t o = 0; o < out; ++o) ref += dy[r * out + o] * w[o * in + i];
      CHECK(dx[r * in + i] == doctest::Approx(ref).epsilon(1e-12));
    }
  }
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < in; ++i) {
      double ref = 2.0;
      for (std::size_t r = 0; r < m; ++r) ref += dy[r * out + o] * x[r * in + i];
      CHECK(dw[o * in + i] == doctest::Approx(ref).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention probabilities are causal and normalized") {
  const kernels::AttentionShape s{2, 6, 4, 2, 4};
  const std::size_t BT = s.batch * s.seq;
  const auto q = randn<float>(BT * 16, 6), k = randn<float>(BT * 8, 7), v = randn<float>(BT * 8, 8);
  std::vector<float> probs(s.batch * 4 * s.seq * s.seq), out(BT * 16);
  kernels::serial::attention(q.data(), k.data(), v.data(), probs.data(), out.data(), s);
  for (std::size_t bh = 0; bh < s.batch * 4; ++bh) {
    for (std::size_t t = 0; t < s.seq; ++t) {
      double sum = 0.0;
      for (std::size_t u = 0; u < s.seq; ++u) {
        const float p = probs[(bh * s.seq + t) * s.seq + u];
        if (u > t) CHECK(p == 0.0f);
        sum += p;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("serial and OpenMP kernels are bit-identical") {
  ThreadGuard guard(4);
  const std::size_t m = 33, in = 70, out = 45;
  const auto x = randn<float>(m * in, 10), w = randn<float>(out * in, 11), dy = randn<float>(m * out, 12);
  std::vector<float> y1(m * out), y2(m * out);
  kernels::serial::linear(x.data(), w.data(), y1.data(), m, in, out);
  kernels::omp::linear(x.data(), w.data(), y2.data(), m, in, out);
  CHECK(y1 == y2);
  std::vector<float> dx1(m * in), dx2(m * in), dw1(out * in), dw2(out * in);
  kernels::serial::linear_grad_input(dy.data(), w.data(), dx1.data(), m, in, out);
  kernels::omp::linear_grad_input(dy.data(), w.data(), dx2.data(), m, in, out);
  CHECK(dx1 == dx2);
  kernels::serial::linear_grad_weight(dy.data(), x.data(), dw1.data(), m, in, out);
  kernels::omp::linear_grad_weight(dy.data(), x.data(), dw2.data(), m, in, out);
  CHECK(dw1 == dw2);

  const kernels::AttentionShape s{3, 9, 6, 2, 8};
  const std::size_t BT = s.batch * s.seq, qd = 48, kvd = 16;
  const auto q = randn<float>(BT * qd, 13), k = randn<float>(BT * kvd, 14), v = randn<float>(BT * kvd, 15);
  const auto dout = randn<float>(BT * qd, 16);
  std::vector<float> p1(s.batch * 6 * s.seq * s.seq), p2(p1.size()), o1(BT * qd), o2(BT * qd);
  kernels::serial::attention(q.data(), k.data(), v.data(), p1.data(), o1.data(), s);
  kernels::omp::attention(q.data(), k.data(), v.data(), p2.data(), o2.data(), s);
  CHECK(p1 == p2);
  CHECK(o1 == o2);
  std::vector<float> dq1(BT * qd), dq2(BT * qd), dk1(BT * kvd), dk2(BT * kvd), dv1(BT * kvd), dv2(BT * kvd);
  kernels::serial::attention_grad(q.data(), k.data(), v.data(), p1.data(), dout.data(), dq1.data(), dk1.data(),
                                  dv1.data(), s);
  kernels::omp::attention_grad(q.data(), k.data(), v.data(), p1.data(), dout.data(), dq2.data(), dk2.data(),
                               dv2.data(), s);
  CHECK(dq1 == dq2);
  CHECK(dk1 == dk2);
  CHECK(dv1 == dv2);
}

TEST_CASE("model forward and backward do not depend on the thread count") {
  ModelConfig c;
  c.vocab_size = 50;
  auto ck = init_checkpoint(c, 3, 0.1);
  const auto batch = testing::random_batch(c, 3, 20, 4);
  TrainBatch tb{batch, testing::random_targets(c, 60, 5)};
  kernels::set_threads(1);
  const auto l1 = forward(ck, batch);
  const auto g1 = backward(ck, tb, {});
  ThreadGuard guard(3);
  CHECK(forward(ck, batch) == l1);
  CHECK(backward(ck, tb, {}) == g1);
}
