// SPDX-License-Identifier: Apache-2.0
#include "kanac/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "kanac/errors.hpp"
#include "kanac/kernels.hpp"

namespace kanac {

namespace {

template <class T>
void rmsnorm_forward(const T* x, const T* w, T* y, T* rinv, std::size_t rows, std::size_t d, double eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T ss = 0;
    for (std::size_t i = 0; i < d; ++i) ss += xr[i] * xr[i];
    const T inv = T(1) / std::sqrt(ss / T(d) + T(eps));
    rinv[r] = inv;
    for (std::size_t i = 0; i < d; ++i) y[r * d + i] = xr[i] * inv * w[i];
  }
}

// Adds the input gradient into dx and the weight gradient into dw.
template <class T>
void rmsnorm_backward(const T* x, const T* w, const T* rinv, const T* dy, T* dx, T* dw, std::size_t rows,
                      std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    const T* dyr = dy + r * d;
    const T inv = rinv[r];
    T proj = 0;
    for (std::size_t i = 0; i < d; ++i) {
      proj += w[i] * dyr[i] * xr[i];
      dw[i] += dyr[i] * xr[i] * inv;
    }
    const T c = inv * inv * inv * proj / T(d);
    for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += inv * w[i] * dyr[i] - c * xr[i];
  }
}

// cos/sin tables [seq, head_dim/2] for rotations of interleaved pairs.
template <class T>
struct RopeTable {
  std::vector<T> cos;
  std::vector<T> sin;
};

template <class T>
RopeTable<T> rope_table(std::size_t seq, std::size_t head_dim, double base) {
  const std::size_t half = head_dim / 2;
  RopeTable<T> t{std::vector<T>(seq * half), std::vector<T>(seq * half)};
  for (std::size_t p = 0; p < seq; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(p) * freq;
      t.cos[p * half + i] = static_cast<T>(std::cos(angle));
      t.sin[p * half + i] = static_cast<T>(std::sin(angle));
    }
  }
  return t;
}

// x: [batch*seq, n_heads*head_dim]; inverse=true applies the transpose.
template <class T>
void rope_apply(T* x, const RopeTable<T>& tab, std::size_t batch, std::size_t seq, std::size_t n_heads,
                std::size_t head_dim, bool inverse) {
  const std::size_t half = head_dim / 2;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < seq; ++t) {
      T* row = x + (b * seq + t) * n_heads * head_dim;
      for (std::size_t h = 0; h < n_heads; ++h) {
        T* hv = row + h * head_dim;
        for (std::size_t i = 0; i < half; ++i) {
          const T c = tab.cos[t * half + i];
          const T s = inverse ? -tab.sin[t * half + i] : tab.sin[t * half + i];
          const T a = hv[2 * i];
          const T bb = hv[2 * i + 1];
          hv[2 * i] = a * c - bb * s;
          hv[2 * i + 1] = a * s + bb * c;
        }
      }
    }
  }
}

template <class T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <class T>
bool all_finite(const std::vector<T>& v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

template <class T>
void add_into(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

void validate_batch(const ModelConfig& config, const TokenBatch& batch) {
  if (batch.batch < 1 || batch.seq < 1) throw DomainError("token batch must be at least 1 x 1");
  if (batch.tokens.size() != batch.batch * batch.seq) {
    throw DomainError(fmt::format("token batch holds {} ids, expected {} x {}", batch.tokens.size(), batch.batch,
                                  batch.seq));
  }
  if (batch.seq > config.max_seq_len) {
    throw DomainError(fmt::format("sequence length {} exceeds max_seq_len {}", batch.seq, config.max_seq_len));
  }
  for (std::size_t i = 0; i < batch.tokens.size(); ++i) {
    if (batch.tokens[i] >= config.vocab_size) {
      throw DomainError(
          fmt::format("token id {} at position {} is outside vocab_size {}", batch.tokens[i], i, config.vocab_size));
    }
  }
}

Checkpoint init_checkpoint(const ModelConfig& config, std::uint64_t seed, double init_std) {
  config.validate();
  Checkpoint ckpt{config, zeros_like<float>(config), {}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init_std);
  for (auto& r : tensor_refs(config, ckpt.weights)) {
    if (r.shape.size() == 1) {
      std::fill(r.data->begin(), r.data->end(), 1.0f);
    } else {
      for (auto& v : *r.data) v = static_cast<float>(normal(rng));
    }
  }
  ckpt.metadata["init_seed"] = std::to_string(seed);
  return ckpt;
}

template <class T>
Activations<T> forward_activations(const ModelConfig& c, const Weights<T>& w, const TokenBatch& batch) {
  validate_batch(c, batch);
  const std::size_t B = batch.batch, S = batch.seq, BT = B * S;
  const std::size_t d = c.hidden_dim, I = c.intermediate_dim, V = c.vocab_size;
  const std::size_t qd = c.q_dim(), kvd = c.kv_dim();
  const auto rope = rope_table<T>(S, c.head_dim, c.rope_base);
  const kernels::AttentionShape shape{B, S, c.n_query_heads, c.n_kv_heads, c.head_dim};

  Activations<T> a;
  a.batch = B;
  a.seq = S;
  a.tokens = batch.tokens;
  a.layers.resize(c.n_layers);

  std::vector<T> x(BT * d);
  for (std::size_t r = 0; r < BT; ++r) {
    std::copy_n(w.tok_embeddings.begin() + batch.tokens[r] * d, d, x.begin() + r * d);
  }

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lw = w.layers[l];
    auto& la = a.layers[l];
    la.x_in = x;
    la.rms_attn.resize(BT);
    la.xn_attn.resize(BT * d);
    rmsnorm_forward(x.data(), lw.attn_norm.data(), la.xn_attn.data(), la.rms_attn.data(), BT, d, c.norm_eps);

    la.q.resize(BT * qd);
    la.k.resize(BT * kvd);
    la.v.resize(BT * kvd);
    kernels::linear(la.xn_attn.data(), lw.wq.data(), la.q.data(), BT, d, qd);
    kernels::linear(la.xn_attn.data(), lw.wk.data(), la.k.data(), BT, d, kvd);
    kernels::linear(la.xn_attn.data(), lw.wv.data(), la.v.data(), BT, d, kvd);
    rope_apply(la.q.data(), rope, B, S, c.n_query_heads, c.head_dim, false);
    rope_apply(la.k.data(), rope, B, S, c.n_kv_heads, c.head_dim, false);

    la.probs.resize(B * c.n_query_heads * S * S);
    la.attn_out.resize(BT * qd);
    kernels::attention(la.q.data(), la.k.data(), la.v.data(), la.probs.data(), la.attn_out.data(), shape);

    std::vector<T> o(BT * d);
    kernels::linear(la.attn_out.data(), lw.wo.data(), o.data(), BT, qd, d);
    add_into(x, o);
    la.x_mid = x;

    la.rms_ffn.resize(BT);
    la.xn_ffn.resize(BT * d);
    rmsnorm_forward(x.data(), lw.ffn_norm.data(), la.xn_ffn.data(), la.rms_ffn.data(), BT, d, c.norm_eps);
    la.gate.resize(BT * I);
    la.up.resize(BT * I);
    la.inter.resize(BT * I);
    kernels::linear(la.xn_ffn.data(), lw.w_gate.data(), la.gate.data(), BT, d, I);
    kernels::linear(la.xn_ffn.data(), lw.w_up.data(), la.up.data(), BT, d, I);
    for (std::size_t i = 0; i < BT * I; ++i) la.inter[i] = la.gate[i] * sigmoid(la.gate[i]) * la.up[i];
    std::vector<T> f(BT * d);
    kernels::linear(la.inter.data(), lw.w_down.data(), f.data(), BT, I, d);
    add_into(x, f);
    if (!all_finite(x)) throw NumericError(fmt::format("non-finite activations in layer {}", l));
  }

  a.x_final = x;
  a.rms_final.resize(BT);
  a.xn_final.resize(BT * d);
  rmsnorm_forward(x.data(), w.final_norm.data(), a.xn_final.data(), a.rms_final.data(), BT, d, c.norm_eps);
  a.logits.resize(BT * V);
  kernels::linear(a.xn_final.data(), w.output_matrix().data(), a.logits.data(), BT, d, V);
  if (!all_finite(a.logits)) throw NumericError("non-finite logits after the output projection");
  return a;
}

template <class T>
Weights<T> backward_from_logits(const ModelConfig& c, const Weights<T>& w, const Activations<T>& a,
                                std::span<const T> dlogits) {
  const std::size_t B = a.batch, S = a.seq, BT = B * S;
  const std::size_t d = c.hidden_dim, I = c.intermediate_dim, V = c.vocab_size;
  const std::size_t qd = c.q_dim(), kvd = c.kv_dim();
  if (dlogits.size() != BT * V) throw DomainError("dlogits shape does not match the activations");
  const auto rope = rope_table<T>(S, c.head_dim, c.rope_base);
  const kernels::AttentionShape shape{B, S, c.n_query_heads, c.n_kv_heads, c.head_dim};

  Weights<T> g = zeros_like<T>(c);
  auto& d_out_matrix = c.tied_embeddings ? g.tok_embeddings : g.output;

  std::vector<T> dxn(BT * d, T(0));
  kernels::linear_grad_input(dlogits.data(), w.output_matrix().data(), dxn.data(), BT, d, V);
  kernels::linear_grad_weight(dlogits.data(), a.xn_final.data(), d_out_matrix.data(), BT, d, V);
  std::vector<T> dres(BT * d, T(0));
  rmsnorm_backward(a.x_final.data(), w.final_norm.data(), a.rms_final.data(), dxn.data(), dres.data(),
                   g.final_norm.data(), BT, d);

  for (std::size_t li = c.n_layers; li-- > 0;) {
    const auto& lw = w.layers[li];
    const auto& la = a.layers[li];
    auto& lg = g.layers[li];

    // feed-forward block
    std::vector<T> dinter(BT * I, T(0));
    kernels::linear_grad_input(dres.data(), lw.w_down.data(), dinter.data(), BT, I, d);
    kernels::linear_grad_weight(dres.data(), la.inter.data(), lg.w_down.data(), BT, I, d);
    std::vector<T> dgate(BT * I), dup(BT * I);
    for (std::size_t i = 0; i < BT * I; ++i) {
      const T gv = la.gate[i];
      const T sg = sigmoid(gv);
      const T silu = gv * sg;
      dup[i] = dinter[i] * silu;
      dgate[i] = dinter[i] * la.up[i] * sg * (T(1) + gv * (T(1) - sg));
    }
    kernels::linear_grad_weight(dgate.data(), la.xn_ffn.data(), lg.w_gate.data(), BT, d, I);
    kernels::linear_grad_weight(dup.data(), la.xn_ffn.data(), lg.w_up.data(), BT, d, I);
    std::fill(dxn.begin(), dxn.end(), T(0));
    kernels::linear_grad_input(dgate.data(), lw.w_gate.data(), dxn.data(), BT, d, I);
    kernels::linear_grad_input(dup.data(), lw.w_up.data(), dxn.data(), BT, d, I);
    rmsnorm_backward(la.x_mid.data(), lw.ffn_norm.data(), la.rms_ffn.data(), dxn.data(), dres.data(),
                     lg.ffn_norm.data(), BT, d);

    // attention block
    std::vector<T> datt(BT * qd, T(0));
    kernels::linear_grad_input(dres.data(), lw.wo.data(), datt.data(), BT, qd, d);
    kernels::linear_grad_weight(dres.data(), la.attn_out.data(), lg.wo.data(), BT, qd, d);
    std::vector<T> dq(BT * qd, T(0)), dk(BT * kvd, T(0)), dv(BT * kvd, T(0));
    kernels::attention_grad(la.q.data(), la.k.data(), la.v.data(), la.probs.data(), datt.data(), dq.data(),
                            dk.data(), dv.data(), shape);
    rope_apply(dq.data(), rope, B, S, c.n_query_heads, c.head_dim, true);
    rope_apply(dk.data(), rope, B, S, c.n_kv_heads, c.head_dim, true);
    kernels::linear_grad_weight(dq.data(), la.xn_attn.data(), lg.wq.data(), BT, d, qd);
    kernels::linear_grad_weight(dk.data(), la.xn_attn.data(), lg.wk.data(), BT, d, kvd);
    kernels::linear_grad_weight(dv.data(), la.xn_attn.data(), lg.wv.data(), BT, d, kvd);
    std::fill(dxn.begin(), dxn.end(), T(0));
    kernels::linear_grad_input(dq.data(), lw.wq.data(), dxn.data(), BT, d, qd);
    kernels::linear_grad_input(dk.data(), lw.wk.data(), dxn.data(), BT, d, kvd);
    kernels::linear_grad_input(dv.data(), lw.wv.data(), dxn.data(), BT, d, kvd);
    rmsnorm_backward(la.x_in.data(), lw.attn_norm.data(), la.rms_attn.data(), dxn.data(), dres.data(),
                     lg.attn_norm.data(), BT, d);
  }

  for (std::size_t r = 0; r < BT; ++r) {
    T* row = g.tok_embeddings.data() + a.tokens[r] * d;
    for (std::size_t i = 0; i < d; ++i) row[i] += dres[r * d + i];
  }
  return g;
}

template <class T>
LossBreakdown lm_loss(std::span<const T> logits, std::span<const TokenId> targets, std::size_t vocab,
                      const LossSpec& spec, std::vector<T>* dlogits) {
  const std::size_t n = targets.size();
  if (vocab == 0 || n == 0 || logits.size() != n * vocab) {
    throw DomainError(fmt::format("logits hold {} values, expected {} positions x {} classes", logits.size(), n, vocab));
  }
  if (dlogits) dlogits->assign(logits.size(), T(0));
  double ntp_sum = 0.0, z_sum = 0.0;
  std::vector<T> p(vocab);
  for (std::size_t r = 0; r < n; ++r) {
    const T* lr = logits.data() + r * vocab;
    if (targets[r] >= vocab) {
      throw DomainError(fmt::format("target id {} at position {} is outside vocab {}", targets[r], r, vocab));
    }
    const T mx = *std::max_element(lr, lr + vocab);
    double sum = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) sum += std::exp(static_cast<double>(lr[v] - mx));
    const double lse = static_cast<double>(mx) + std::log(sum);
    ntp_sum += lse - static_cast<double>(lr[targets[r]]);
    z_sum += lse * lse;
    if (dlogits) {
      T* dr = dlogits->data() + r * vocab;
      const double scale = 1.0 / static_cast<double>(n);
      for (std::size_t v = 0; v < vocab; ++v) {
        const double pv = std::exp(static_cast<double>(lr[v]) - lse);
        const double onehot = v == targets[r] ? 1.0 : 0.0;
        dr[v] = static_cast<T>(scale * (spec.ntp_weight * (pv - onehot) + spec.z_coefficient * 2.0 * lse * pv));
      }
    }
  }
  LossBreakdown out;
  out.ntp = ntp_sum / static_cast<double>(n);
  out.z = spec.z_coefficient * z_sum / static_cast<double>(n);
  out.total = spec.ntp_weight * out.ntp + out.z;
  return out;
}

double ntp_loss(std::span<const float> logits, std::span<const TokenId> targets, std::size_t vocab) {
  return lm_loss<float>(logits, targets, vocab, LossSpec{1.0, 0.0}).ntp;
}

double z_loss(std::span<const float> logits, std::size_t vocab, double coefficient) {
  if (coefficient < 0.0) throw DomainError("z-loss coefficient must be >= 0");
  if (vocab == 0 || logits.size() % vocab != 0 || logits.empty()) {
    throw DomainError(fmt::format("logits hold {} values, not a multiple of vocab {}", logits.size(), vocab));
  }
  const std::vector<TokenId> dummy(logits.size() / vocab, 0);
  return lm_loss<float>(logits, dummy, vocab, LossSpec{0.0, coefficient}).z;
}

std::vector<float> forward(const Checkpoint& ckpt, const TokenBatch& batch) {
  return forward_activations(ckpt.config, ckpt.weights, batch).logits;
}

Weights<float> backward(const Checkpoint& ckpt, const TrainBatch& batch, const LossSpec& spec, LossBreakdown* loss) {
  if (!std::isfinite(spec.ntp_weight) || !std::isfinite(spec.z_coefficient)) {
    throw DomainError("loss weights must be finite");
  }
  if (batch.targets.size() != batch.inputs.tokens.size()) throw DomainError("targets and inputs differ in shape");
  const auto acts = forward_activations(ckpt.config, ckpt.weights, batch.inputs);
  std::vector<float> dlogits;
  const auto l = lm_loss<float>(acts.logits, batch.targets, ckpt.config.vocab_size, spec, &dlogits);
  if (!std::isfinite(l.total)) throw NumericError("non-finite loss");
  if (loss) *loss = l;
  return backward_from_logits<float>(ckpt.config, ckpt.weights, acts, dlogits);
}

#define KANAC_INSTANTIATE(T)                                                                              \
  template Activations<T> forward_activations<T>(const ModelConfig&, const Weights<T>&, const TokenBatch&); \
  template Weights<T> backward_from_logits<T>(const ModelConfig&, const Weights<T>&, const Activations<T>&, \
                                              std::span<const T>);                                       \
  template LossBreakdown lm_loss<T>(std::span<const T>, std::span<const TokenId>, std::size_t,            \
                                    const LossSpec&, std::vector<T>*);

KANAC_INSTANTIATE(float)
KANAC_INSTANTIATE(double)

}  // namespace kanac
