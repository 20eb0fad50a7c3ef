// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense kernels behind the model. Each kernel exists twice: a serial
// reference and an OpenMP version. Both compute every output element with
// the same instruction sequence, so results are bit-identical for any thread
// count; the OpenMP version only splits independent outputs across threads.

#include <cstddef>

namespace kanac::kernels {

/// Number of worker threads used by the dispatching kernels. 1 selects the
/// serial path.
void set_threads(int n);
int threads();

/// Shape of one causal GQA attention call over a [batch, seq] token grid.
struct AttentionShape {
  std::size_t batch;
  std::size_t seq;
  std::size_t n_query_heads;
  std::size_t n_kv_heads;
  std::size_t head_dim;
};

#define KANAC_KERNEL_DECLS                                                                         \
  /* y[m, out] = x[m, in] * w[out, in]^T */                                                        \
  template <class T>                                                                               \
  void linear(const T* x, const T* w, T* y, std::size_t m, std::size_t in, std::size_t out);       \
  /* dx[m, in] += dy[m, out] * w[out, in] */                                                       \
  template <class T>                                                                               \
  void linear_grad_input(const T* dy, const T* w, T* dx, std::size_t m, std::size_t in,            \
                         std::size_t out);                                                         \
  /* dw[out, in] += dy[m, out]^T * x[m, in] */                                                     \
  template <class T>                                                                               \
  void linear_grad_weight(const T* dy, const T* x, T* dw, std::size_t m, std::size_t in,           \
                          std::size_t out);                                                        \
  /* q: [B*T, Hq*hd], k/v: [B*T, Hkv*hd], probs: [B, Hq, T, T], out: [B*T, Hq*hd] */               \
  template <class T>                                                                               \
  void attention(const T* q, const T* k, const T* v, T* probs, T* out, const AttentionShape& s);   \
  /* Accumulates into dq, dk, dv (all zero-initialized by the caller). */                          \
  template <class T>                                                                               \
  void attention_grad(const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq,    \
                      T* dk, T* dv, const AttentionShape& s);

namespace serial {
KANAC_KERNEL_DECLS
}
namespace omp {
KANAC_KERNEL_DECLS
}

#undef KANAC_KERNEL_DECLS

template <class T>
void linear(const T* x, const T* w, T* y, std::size_t m, std::size_t in, std::size_t out) {
  if (threads() > 1) {
    omp::linear(x, w, y, m, in, out);
  } else {
    serial::linear(x, w, y, m, in, out);
  }
}

template <class T>
void linear_grad_input(const T* dy, const T* w, T* dx, std::size_t m, std::size_t in, std::size_t out) {
  if (threads() > 1) {
    omp::linear_grad_input(dy, w, dx, m, in, out);
  } else {
    serial::linear_grad_input(dy, w, dx, m, in, out);
  }
}

template <class T>
void linear_grad_weight(const T* dy, const T* x, T* dw, std::size_t m, std::size_t in, std::size_t out) {
  if (threads() > 1) {
    omp::linear_grad_weight(dy, x, dw, m, in, out);
  } else {
    serial::linear_grad_weight(dy, x, dw, m, in, out);
  }
}

template <class T>
void attention(const T* q, const T* k, const T* v, T* probs, T* out, const AttentionShape& s) {
  if (threads() > 1) {
    omp::attention(q, k, v, probs, out, s);
  } else {
    serial::attention(q, k, v, probs, out, s);
  }
}

template <class T>
void attention_grad(const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq, T* dk,
                    T* dv, const AttentionShape& s) {
  if (threads() > 1) {
    omp::attention_grad(q, k, v, probs, dout, dq, dk, dv, s);
  } else {
    serial::attention_grad(q, k, v, probs, dout, dq, dk, dv, s);
  }
}

}  // namespace kanac::kernels
