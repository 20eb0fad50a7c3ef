// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include <json.hpp>

#include "kanac/corpus.hpp"
#include "kanac/importance.hpp"
#include "kanac/pruner.hpp"
#include "kanac/trainer.hpp"

namespace kanac {

/// One compression step: score the current model, prune to `targets`,
/// optionally tie embeddings, then distill.
struct ChainStep {
  PruneTargets targets;
  DistillConfig distill;
  bool tie = false;
};

/// Iterative compression where each model is pruned from the previous one.
struct ChainPlan {
  std::vector<ChainStep> steps;
  AggregationSpec agg;
  NeuronMode mode = NeuronMode::intermediate_states;
  std::size_t calibration_batches = 8;
  std::size_t calibration_batch_size = 8;
  /// Distill every step from the original model (true) or from the model the
  /// step started with (false).
  bool teacher_is_original = true;
};

struct ChainResult {
  Checkpoint model;
  std::vector<std::vector<LogRecord>> logs;  // one per step
};

/// Throws NumericError when a distillation run aborts.
ChainResult run_chain(const Checkpoint& original, const Corpus& calibration, const Corpus& distill_corpus,
                      const ChainPlan& plan, std::ostream* progress = nullptr);

void to_json(nlohmann::json& j, const ChainPlan& p);
void from_json(const nlohmann::json& j, ChainPlan& p);

}  // namespace kanac
