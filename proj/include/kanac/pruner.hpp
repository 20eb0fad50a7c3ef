// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kanac/importance.hpp"
#include "kanac/model.hpp"

namespace kanac {

/// Target widths for one pruning step. Depth and head_dim are never changed.
struct PruneTargets {
  std::size_t hidden_dim = 0;
  std::size_t intermediate_dim = 0;
  std::size_t n_kv_heads = 0;
  std::size_t queries_per_group = 0;

  /// Targets that keep every structure of `config`.
  static PruneTargets keep_all(const ModelConfig& config);
};

/// What survives in one block. Query heads are local indices within each
/// kept KV group, and every group keeps the same number of them.
struct LayerKeep {
  std::vector<std::size_t> neurons;
  std::vector<std::size_t> kv_groups;
  std::vector<std::vector<std::size_t>> query_heads;
};

struct PruneSpec {
  ModelConfig source;
  ModelConfig target;
  std::vector<std::size_t> channels;
  std::vector<LayerKeep> layers;
  std::string source_digest;  // config digest of `source`
  std::string report_digest;  // calibration digest of the scores used, empty if none

  /// Throws ValidationError on any broken invariant: unsorted or
  /// out-of-range indices, empty lists, unequal query-head counts per group,
  /// non-uniform budgets across layers, or a target that does not follow.
  void validate() const;
};

/// Throws ValidationError when a target exceeds the current size or is zero.
void validate_targets(const ModelConfig& config, const PruneTargets& targets);

/// Indices of the k largest scores, returned ascending; ties keep the lower
/// index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

/// Top-k per structure: channels globally, neurons per layer, KV groups by
/// group score, then query heads by score inside each kept group.
PruneSpec plan(const ModelConfig& config, const ImportanceReport& report, const PruneTargets& targets);

/// Uniformly random selection with the same budgets and GQA alignment.
PruneSpec random_plan(const ModelConfig& config, const PruneTargets& targets, std::mt19937_64& rng);

PruneSpec identity_spec(const ModelConfig& config);

/// Assembles a spec from explicit keep lists and derives the target config.
PruneSpec make_spec(const ModelConfig& source, std::vector<std::size_t> channels, std::vector<LayerKeep> layers);

/// Slices every tensor per `spec`. Throws ValidationError when the spec was
/// planned for a different config.
Checkpoint apply_prune(const Checkpoint& ckpt, const PruneSpec& spec);

/// Replaces input and output embeddings by their element-wise average.
/// Throws ValidationError when already tied.
Checkpoint tie_embeddings(const Checkpoint& ckpt);

/// Total number of weights stored by `ckpt`.
std::size_t stored_parameter_count(const Checkpoint& ckpt);

void to_json(nlohmann::json& j, const PruneTargets& t);
void from_json(const nlohmann::json& j, PruneTargets& t);
void to_json(nlohmann::json& j, const PruneSpec& s);
void from_json(const nlohmann::json& j, PruneSpec& s);

}  // namespace kanac
