// SPDX-License-Identifier: Apache-2.0
// Serial reference kernels against their OpenMP counterparts.
//
//   bench_kernels --benchmark_filter=linear
//
// The OpenMP cases use omp_get_max_threads() workers (set OMP_NUM_THREADS).

#include <random>
#include <vector>

#include <benchmark/benchmark.h>
#include <omp.h>

#include "kanac/kernels.hpp"
#include "kanac/model.hpp"

using namespace kanac;

namespace {

std::vector<float> randn(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd;
  std::vector<float> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

// Rows = batch * seq of a typical training step; in/out = hidden -> intermediate.
template <bool Omp>
void BM_linear(benchmark::State& state) {
  const std::size_t m = state.range(0), in = state.range(1), out = state.range(2);
  const auto x = randn(m * in, 1), w = randn(out * in, 2);
  std::vector<float> y(m * out);
  for (auto _ : state) {
    if constexpr (Omp) {
      kernels::omp::linear(x.data(), w.data(), y.data(), m, in, out);
    } else {
      kernels::serial::linear(x.data(), w.data(), y.data(), m, in, out);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * m * in * out);
}

template <bool Omp>
void BM_linear_grad_weight(benchmark::State& state) {
  const std::size_t m = state.range(0), in = state.range(1), out = state.range(2);
  const auto dy = randn(m * out, 1), x = randn(m * in, 2);
  std::vector<float> dw(out * in);
  for (auto _ : state) {
    if constexpr (Omp) {
      kernels::omp::linear_grad_weight(dy.data(), x.data(), dw.data(), m, in, out);
    } else {
      kernels::serial::linear_grad_weight(dy.data(), x.data(), dw.data(), m, in, out);
    }
    benchmark::DoNotOptimize(dw.data());
  }
  state.SetItemsProcessed(state.iterations() * m * in * out);
}

template <bool Omp>
void BM_attention(benchmark::State& state) {
  const kernels::AttentionShape s{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)), 4, 2, 16};
  const std::size_t BT = s.batch * s.seq;
  const auto q = randn(BT * 64, 1), k = randn(BT * 32, 2), v = randn(BT * 32, 3), dout = randn(BT * 64, 4);
  std::vector<float> probs(s.batch * 4 * s.seq * s.seq), out(BT * 64), dq(BT * 64), dk(BT * 32), dv(BT * 32);
  for (auto _ : state) {
    if constexpr (Omp) {
      kernels::omp::attention(q.data(), k.data(), v.data(), probs.data(), out.data(), s);
      kernels::omp::attention_grad(q.data(), k.data(), v.data(), probs.data(), dout.data(), dq.data(), dk.data(), dv.data(), s);
    } else {
      kernels::serial::attention(q.data(), k.data(), v.data(), probs.data(), out.data(), s);
      kernels::serial::attention_grad(q.data(), k.data(), v.data(), probs.data(), dout.data(), dq.data(), dk.data(), dv.data(), s);
    }
    benchmark::DoNotOptimize(dq.data());
  }
}

// Whole training step through the dispatching kernels.
void BM_train_step(benchmark::State& state) {
  kernels::set_threads(static_cast<int>(state.range(0)));
  ModelConfig c;
  c.vocab_size = 256;
  const auto ck = init_checkpoint(c, 1);
  std::mt19937_64 rng(2);
  TrainBatch b{{8, 64, {}}, {}};
  for (int i = 0; i < 8 * 64; ++i) {
    b.inputs.tokens.push_back(rng() % 256);
    b.targets.push_back(rng() % 256);
  }
  for (auto _ : state) benchmark::DoNotOptimize(backward(ck, b, {}));
  kernels::set_threads(1);
}

}  // namespace

BENCHMARK(BM_linear<false>)->Args({512, 64, 128})->Args({512, 64, 256})->Args({2048, 128, 512});
BENCHMARK(BM_linear<true>)->Args({512, 64, 128})->Args({512, 64, 256})->Args({2048, 128, 512});
BENCHMARK(BM_linear_grad_weight<false>)->Args({512, 64, 128})->Args({2048, 128, 512});
BENCHMARK(BM_linear_grad_weight<true>)->Args({512, 64, 128})->Args({2048, 128, 512});
BENCHMARK(BM_attention<false>)->Args({8, 64})->Args({4, 128});
BENCHMARK(BM_attention<true>)->Args({8, 64})->Args({4, 128});
BENCHMARK(BM_train_step)->Arg(1)->Arg(omp_get_max_threads())->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
