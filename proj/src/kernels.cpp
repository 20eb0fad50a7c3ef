// SPDX-License-Identifier: Apache-2.0
#include "kanac/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace kanac::kernels {

namespace {

std::atomic<int> g_threads{1};

// Fixed-shape reduction: 16 lanes, then a pairwise tree. The order never
// depends on how callers split work.
template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) acc[j] += a[i + j] * b[i + j];
  }
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  for (std::size_t w = kLanes / 2; w > 0; w /= 2) {
    for (std::size_t j = 0; j < w; ++j) acc[j] += acc[j + w];
  }
  return acc[0] + tail;
}

template <class T>
inline void axpy(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}


template <class T>
inline void linear_row(const T* x, const T* w, T* y, std::size_t in, std::size_t out) {
  for (std::size_t o = 0; o < out; ++o) y[o] = dot(x, w + o * in, in);
}

template <class T>
inline void linear_grad_input_row(const T* dy, const T* w, T* dx, std::size_t in, std::size_t out) {
  for (std::size_t o = 0; o < out; ++o) {
    const T g = dy[o];
    if (g != T(0)) axpy(g, w + o * in, dx, in);
  }
}

template <class T>
inline void linear_grad_weight_row(const T* dy, const T* x, T* dw_row, std::size_t m, std::size_t in,
                                   std::size_t out, std::size_t o) {
  for (std::size_t r = 0; r < m; ++r) {
    const T g = dy[r * out + o];
    if (g != T(0)) axpy(g, x + r * in, dw_row, in);
  }
}

// One (batch, kv-head) unit: every query head of the group, all positions.
template <class T>
void attention_unit(const T* q, const T* k, const T* v, T* probs, T* out, const AttentionShape& s,
                    std::size_t b, std::size_t kvh) {
  const std::size_t hd = s.head_dim;
  const std::size_t qs = s.n_query_heads * hd;
  const std::size_t ks = s.n_kv_heads * hd;
  const std::size_t g = s.n_query_heads / s.n_kv_heads;
  const T scale = T(1) / std::sqrt(T(hd));
  for (std::size_t h = kvh * g; h < (kvh + 1) * g; ++h) {
    for (std::size_t t = 0; t < s.seq; ++t) {
      const T* qt = q + (b * s.seq + t) * qs + h * hd;
      T* p = probs + ((b * s.n_query_heads + h) * s.seq + t) * s.seq;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j <= t; ++j) {
        p[j] = dot(qt, k + (b * s.seq + j) * ks + kvh * hd, hd) * scale;
        mx = std::max(mx, p[j]);
      }
      T sum = 0;
      for (std::size_t j = 0; j <= t; ++j) {
        p[j] = std::exp(p[j] - mx);
        sum += p[j];
      }
      const T inv = T(1) / sum;
      for (std::size_t j = 0; j <= t; ++j) p[j] *= inv;
      for (std::size_t j = t + 1; j < s.seq; ++j) p[j] = 0;
      T* ot = out + (b * s.seq + t) * qs + h * hd;
      std::fill(ot, ot + hd, T(0));
      for (std::size_t j = 0; j <= t; ++j) axpy(p[j], v + (b * s.seq + j) * ks + kvh * hd, ot, hd);
    }
  }
}

template <class T>
void attention_grad_unit(const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq,
                         T* dk, T* dv, const AttentionShape& s, std::size_t b, std::size_t kvh) {
  const std::size_t hd = s.head_dim;
  const std::size_t qs = s.n_query_heads * hd;
  const std::size_t ks = s.n_kv_heads * hd;
  const std::size_t g = s.n_query_heads / s.n_kv_heads;
  const T scale = T(1) / std::sqrt(T(hd));
  std::vector<T> dp(s.seq);
  for (std::size_t h = kvh * g; h < (kvh + 1) * g; ++h) {
    for (std::size_t t = 0; t < s.seq; ++t) {
      const std::size_t qrow = (b * s.seq + t) * qs + h * hd;
      const T* p = probs + ((b * s.n_query_heads + h) * s.seq + t) * s.seq;
      const T* dot_t = dout + qrow;
      T weighted = 0;
      for (std::size_t j = 0; j <= t; ++j) {
        const std::size_t krow = (b * s.seq + j) * ks + kvh * hd;
        dp[j] = dot(dot_t, v + krow, hd);
        axpy(p[j], dot_t, dv + krow, hd);
        weighted += p[j] * dp[j];
      }
      for (std::size_t j = 0; j <= t; ++j) {
        const std::size_t krow = (b * s.seq + j) * ks + kvh * hd;
        const T ds = p[j] * (dp[j] - weighted) * scale;
        axpy(ds, k + krow, dq + qrow, hd);
        axpy(ds, q + qrow, dk + krow, hd);
      }
    }
  }
}

inline std::ptrdiff_t sz(std::size_t n) { return static_cast<std::ptrdiff_t>(n); }

}  // namespace

void set_threads(int n) {
  g_threads = std::max(1, n);
  omp_set_num_threads(g_threads);
}

int threads() { return g_threads; }

namespace serial {

template <class T>
void linear(const T* x, const T* w, T* y, std::size_t m, std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < m; ++r) linear_row(x + r * in, w, y + r * out, in, out);
}

template <class T>
void linear_grad_input(const T* dy, const T* w, T* dx, std::size_t m, std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < m; ++r) linear_grad_input_row(dy + r * out, w, dx + r * in, in, out);
}

template <class T>
void linear_grad_weight(const T* dy, const T* x, T* dw, std::size_t m, std::size_t in, std::size_t out) {
  for (std::size_t o = 0; o < out; ++o) linear_grad_weight_row(dy, x, dw + o * in, m, in, out, o);
}

template <class T>
void attention(const T* q, const T* k, const T* v, T* probs, T* out, const AttentionShape& s) {
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t kvh = 0; kvh < s.n_kv_heads; ++kvh) attention_unit(q, k, v, probs, out, s, b, kvh);
  }
}

template <class T>
void attention_grad(const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq, T* dk,
                    T* dv, const AttentionShape& s) {
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t kvh = 0; kvh < s.n_kv_heads; ++kvh) {
      attention_grad_unit(q, k, v, probs, dout, dq, dk, dv, s, b, kvh);
    }
  }
}

}  // namespace serial

namespace omp {

template <class T>
void linear(const T* x, const T* w, T* y, std::size_t m, std::size_t in, std::size_t out) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < sz(m); ++r) linear_row(x + r * in, w, y + r * out, in, out);
}

template <class T>
void linear_grad_input(const T* dy, const T* w, T* dx, std::size_t m, std::size_t in, std::size_t out) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < sz(m); ++r) linear_grad_input_row(dy + r * out, w, dx + r * in, in, out);
}

template <class T>
void linear_grad_weight(const T* dy, const T* x, T* dw, std::size_t m, std::size_t in, std::size_t out) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t o = 0; o < sz(out); ++o) linear_grad_weight_row(dy, x, dw + o * in, m, in, out, o);
}

template <class T>
void attention(const T* q, const T* k, const T* v, T* probs, T* out, const AttentionShape& s) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t u = 0; u < sz(s.batch * s.n_kv_heads); ++u) {
    attention_unit(q, k, v, probs, out, s, u / s.n_kv_heads, u % s.n_kv_heads);
  }
}

template <class T>
void attention_grad(const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq, T* dk,
                    T* dv, const AttentionShape& s) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t u = 0; u < sz(s.batch * s.n_kv_heads); ++u) {
    attention_grad_unit(q, k, v, probs, dout, dq, dk, dv, s, u / s.n_kv_heads, u % s.n_kv_heads);
  }
}

}  // namespace omp

#define KANAC_INSTANTIATE(NS, T)                                                                    \
  template void NS::linear<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t);       \
  template void NS::linear_grad_input<T>(const T*, const T*, T*, std::size_t, std::size_t,          \
                                         std::size_t);                                              \
  template void NS::linear_grad_weight<T>(const T*, const T*, T*, std::size_t, std::size_t,         \
                                          std::size_t);                                             \
  template void NS::attention<T>(const T*, const T*, const T*, T*, T*, const AttentionShape&);      \
  template void NS::attention_grad<T>(const T*, const T*, const T*, const T*, const T*, T*, T*, T*, \
                                      const AttentionShape&);

KANAC_INSTANTIATE(serial, float)
KANAC_INSTANTIATE(serial, double)
KANAC_INSTANTIATE(omp, float)
KANAC_INSTANTIATE(omp, double)

}  // namespace kanac::kernels
