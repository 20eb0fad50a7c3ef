// SPDX-License-Identifier: Apache-2.0
#include "kanac/upscaler.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "kanac/checkpoint.hpp"
#include "kanac/errors.hpp"

namespace kanac {

std::vector<std::size_t> dus_map(std::size_t n_source, std::size_t n_target) {
  if (n_source < 1 || n_target < n_source || n_target > 2 * n_source) {
    throw ValidationError(
        fmt::format("dus_map: target depth {} must lie in [{}, {}]", n_target, n_source, 2 * n_source));
  }
  const std::size_t head = (n_target + 1) / 2;
  const std::size_t tail = n_target / 2;
  std::vector<std::size_t> map;
  for (std::size_t i = 0; i < head; ++i) map.push_back(i);
  for (std::size_t i = n_source - tail; i < n_source; ++i) map.push_back(i);
  return map;
}

void DusPlan::validate(std::size_t n_source) const {
  if (map.size() < n_source) {
    throw ValidationError(fmt::format("dus plan: {} layers would shrink a {}-layer model", map.size(), n_source));
  }
  for (std::size_t i : map) {
    if (i >= n_source) throw ValidationError(fmt::format("dus plan: source layer {} does not exist", i));
  }
}

DusPlan make_dus_plan(const ModelConfig& source, std::vector<std::size_t> map) {
  DusPlan p{std::move(map), config_digest(source)};
  p.validate(source.n_layers);
  return p;
}

Checkpoint apply_dus(const Checkpoint& ckpt, const DusPlan& plan) {
  if (plan.source_digest != config_digest(ckpt.config)) {
    throw ValidationError("apply_dus: plan was made for a different model config");
  }
  plan.validate(ckpt.config.n_layers);
  Checkpoint out;
  out.config = ckpt.config;
  out.config.n_layers = plan.map.size();
  out.metadata = ckpt.metadata;
  out.metadata.erase(std::string(kPayloadDigestKey));
  out.metadata["parent_sha256"] = checkpoint_digest(ckpt);
  out.metadata["origin"] = "upscale";
  out.metadata["dus_map"] = fmt::format("[{}]", fmt::join(plan.map, ","));
  out.weights.tok_embeddings = ckpt.weights.tok_embeddings;
  out.weights.output = ckpt.weights.output;
  out.weights.final_norm = ckpt.weights.final_norm;
  for (std::size_t src : plan.map) out.weights.layers.push_back(ckpt.weights.layers[src]);
  return out;
}

void to_json(nlohmann::json& j, const DusPlan& p) {
  j = nlohmann::json{{"map", p.map}, {"source_config_digest", p.source_digest}};
}

void from_json(const nlohmann::json& j, DusPlan& p) {
  try {
    p.map = j.at("map").get<std::vector<std::size_t>>();
    p.source_digest = j.at("source_config_digest").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("dus plan: {}", e.what()));
  }
}

}  // namespace kanac
