// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

namespace kanac {

/// Architecture of a decoder-only transformer with grouped-query attention,
/// SwiGLU feed-forward blocks, RMSNorm and rotary position embeddings.
struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t n_layers = 2;
  std::size_t hidden_dim = 64;
  std::size_t n_query_heads = 4;
  std::size_t n_kv_heads = 2;
  std::size_t head_dim = 16;
  std::size_t intermediate_dim = 128;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;
  std::size_t max_seq_len = 128;
  bool tied_embeddings = false;

  std::size_t group_size() const { return n_query_heads / n_kv_heads; }
  std::size_t q_dim() const { return n_query_heads * head_dim; }
  std::size_t kv_dim() const { return n_kv_heads * head_dim; }

  /// Throws ValidationError naming the first violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing optional fields (rope_base, norm_eps, tied_embeddings) take their
/// defaults. The result is validated.
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Hex SHA-256 of the canonical JSON form.
std::string config_digest(const ModelConfig& c);

/// Parameters per transformer block.
std::size_t layer_parameter_count(const ModelConfig& c);
std::size_t parameter_count(const ModelConfig& c);

}  // namespace kanac
