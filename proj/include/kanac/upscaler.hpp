// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "kanac/model.hpp"

namespace kanac {

/// Output layer i is a copy of source layer `map[i]`.
struct DusPlan {
  std::vector<std::size_t> map;
  std::string source_digest;  // config digest of the source model

  void validate(std::size_t n_source) const;
};

/// Overlapping two-copy layout: the first ceil(n_target/2) source layers
/// followed by the last floor(n_target/2). Requires
/// n_source <= n_target <= 2 * n_source.
std::vector<std::size_t> dus_map(std::size_t n_source, std::size_t n_target);

DusPlan make_dus_plan(const ModelConfig& source, std::vector<std::size_t> map);

/// Copies layers per the plan; embeddings and the final norm are unchanged.
/// The map is recorded in metadata under "dus_map".
Checkpoint apply_dus(const Checkpoint& ckpt, const DusPlan& plan);

void to_json(nlohmann::json& j, const DusPlan& p);
void from_json(const nlohmann::json& j, DusPlan& p);

}  // namespace kanac
