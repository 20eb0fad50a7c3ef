// SPDX-License-Identifier: Apache-2.0
#include "kanac/config.hpp"

#include <cmath>
#include <cstdint>

#include <fmt/format.h>

#include "kanac/digest.hpp"
#include "kanac/errors.hpp"

namespace kanac {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ValidationError(fmt::format("config: {} must be >= 1", name));
  };
  positive(vocab_size, "vocab_size");
  positive(n_layers, "n_layers");
  positive(hidden_dim, "hidden_dim");
  positive(n_query_heads, "n_query_heads");
  positive(n_kv_heads, "n_kv_heads");
  positive(head_dim, "head_dim");
  positive(intermediate_dim, "intermediate_dim");
  positive(max_seq_len, "max_seq_len");
  if (n_query_heads % n_kv_heads != 0) {
    throw ValidationError(fmt::format("config: n_query_heads ({}) is not a multiple of n_kv_heads ({})",
                                      n_query_heads, n_kv_heads));
  }
  if (head_dim % 2 != 0) {
    throw ValidationError(fmt::format("config: head_dim ({}) must be even for rotary embeddings", head_dim));
  }
  if (!(std::isfinite(rope_base) && rope_base > 1.0)) throw ValidationError("config: rope_base must be > 1");
  if (!(std::isfinite(norm_eps) && norm_eps > 0.0)) throw ValidationError("config: norm_eps must be > 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"n_layers", c.n_layers},
                     {"hidden_dim", c.hidden_dim},
                     {"n_query_heads", c.n_query_heads},
                     {"n_kv_heads", c.n_kv_heads},
                     {"head_dim", c.head_dim},
                     {"intermediate_dim", c.intermediate_dim},
                     {"rope_base", c.rope_base},
                     {"norm_eps", c.norm_eps},
                     {"max_seq_len", c.max_seq_len},
                     {"tied_embeddings", c.tied_embeddings}};
}

namespace {

std::size_t count_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(fmt::format("config: missing field '{}'", key));
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw ValidationError(fmt::format("config: '{}' must be an integer", key));
  const auto n = v.get<std::int64_t>();
  if (n < 1) throw ValidationError(fmt::format("config: {} must be >= 1", key));
  return static_cast<std::size_t>(n);
}

}  // namespace

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  c.vocab_size = count_field(j, "vocab_size");
  c.n_layers = count_field(j, "n_layers");
  c.hidden_dim = count_field(j, "hidden_dim");
  c.n_query_heads = count_field(j, "n_query_heads");
  c.n_kv_heads = count_field(j, "n_kv_heads");
  c.head_dim = count_field(j, "head_dim");
  c.intermediate_dim = count_field(j, "intermediate_dim");
  c.max_seq_len = count_field(j, "max_seq_len");
  c.rope_base = j.value("rope_base", 10000.0);
  c.norm_eps = j.value("norm_eps", 1e-5);
  c.tied_embeddings = j.value("tied_embeddings", false);
  c.validate();
}

std::string config_digest(const ModelConfig& c) { return sha256_hex(nlohmann::json(c).dump()); }

std::size_t layer_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.hidden_dim;
  return 2 * d + 2 * d * c.q_dim() + 2 * d * c.kv_dim() + 3 * d * c.intermediate_dim;
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t emb = c.vocab_size * c.hidden_dim;
  return emb * (c.tied_embeddings ? 1 : 2) + c.n_layers * layer_parameter_count(c) + c.hidden_dim;
}

}  // namespace kanac
