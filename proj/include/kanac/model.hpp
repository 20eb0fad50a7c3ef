// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kanac/config.hpp"
#include "kanac/weights.hpp"

namespace kanac {

using TokenId = std::uint32_t;

/// Row-major [batch, seq] grid of token ids.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> tokens;
};

/// Inputs plus next-token targets of the same shape.
struct TrainBatch {
  TokenBatch inputs;
  std::vector<TokenId> targets;
};

/// Config, 32-bit weights and free-form string metadata.
struct Checkpoint {
  ModelConfig config;
  Weights<float> weights;
  std::map<std::string, std::string> metadata;
};

/// Normal(0, init_std) for matrices, ones for norm weights.
Checkpoint init_checkpoint(const ModelConfig& config, std::uint64_t seed, double init_std = 0.02);

/// Throws DomainError for an empty or ragged grid, a sequence longer than
/// max_seq_len, or a token id outside the vocabulary.
void validate_batch(const ModelConfig& config, const TokenBatch& batch);

/// Everything the backward pass and the importance probes read.
template <class T>
struct LayerActivations {
  std::vector<T> x_in;       // [BT, hidden] residual stream entering the block
  std::vector<T> rms_attn;   // [BT] inverse RMS
  std::vector<T> xn_attn;    // [BT, hidden]
  std::vector<T> q;          // [BT, q_dim] after rotary embedding
  std::vector<T> k;          // [BT, kv_dim] after rotary embedding
  std::vector<T> v;          // [BT, kv_dim]
  std::vector<T> probs;      // [B, Hq, T, T]
  std::vector<T> attn_out;   // [BT, q_dim] per-head outputs before the o-projection
  std::vector<T> x_mid;      // [BT, hidden]
  std::vector<T> rms_ffn;    // [BT]
  std::vector<T> xn_ffn;     // [BT, hidden]
  std::vector<T> gate;       // [BT, intermediate]
  std::vector<T> up;         // [BT, intermediate]
  std::vector<T> inter;      // [BT, intermediate] SiLU(gate) * up
};

template <class T>
struct Activations {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> tokens;
  std::vector<LayerActivations<T>> layers;
  std::vector<T> x_final;    // [BT, hidden] input of the final norm
  std::vector<T> rms_final;  // [BT]
  std::vector<T> xn_final;   // [BT, hidden]
  std::vector<T> logits;     // [BT, vocab]
};

/// Full forward pass keeping every intermediate. Throws NumericError naming
/// the layer whose output is non-finite.
template <class T>
Activations<T> forward_activations(const ModelConfig& config, const Weights<T>& weights,
                                   const TokenBatch& batch);

/// Gradients of a scalar loss given its gradient w.r.t. the logits.
template <class T>
Weights<T> backward_from_logits(const ModelConfig& config, const Weights<T>& weights,
                                const Activations<T>& acts, std::span<const T> dlogits);

/// Logits [batch, seq, vocab], pre-softmax.
std::vector<float> forward(const Checkpoint& ckpt, const TokenBatch& batch);

/// Weights of the composite objective ntp_weight * NTP + z-loss.
struct LossSpec {
  double ntp_weight = 1.0;
  double z_coefficient = 5e-6;
};

struct LossBreakdown {
  double total = 0.0;
  double ntp = 0.0;     // unweighted mean cross-entropy
  double z = 0.0;       // coefficient * mean squared log-partition
};

/// Loss over every position; writes d(total)/d(logits) when `dlogits` is set.
template <class T>
LossBreakdown lm_loss(std::span<const T> logits, std::span<const TokenId> targets, std::size_t vocab,
                      const LossSpec& spec, std::vector<T>* dlogits = nullptr);

/// Mean next-token cross-entropy.
double ntp_loss(std::span<const float> logits, std::span<const TokenId> targets, std::size_t vocab);

/// coefficient * mean over positions of (log sum_v exp(logit_v))^2.
double z_loss(std::span<const float> logits, std::size_t vocab, double coefficient);

/// Forward + backward of the composite loss. Throws NumericError when the
/// loss is not finite.
Weights<float> backward(const Checkpoint& ckpt, const TrainBatch& batch, const LossSpec& spec,
                        LossBreakdown* loss = nullptr);

}  // namespace kanac
