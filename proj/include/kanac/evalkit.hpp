// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "kanac/corpus.hpp"
#include "kanac/importance.hpp"
#include "kanac/model.hpp"
#include "kanac/pruner.hpp"

namespace kanac {

/// exp of the mean next-token loss over every corpus window.
double perplexity(const Checkpoint& ckpt, const Corpus& corpus, std::size_t batch_size = 16);

/// Mean per-position KL(teacher || student) over every corpus window.
double logit_kl(const Checkpoint& teacher, const Checkpoint& student, const Corpus& corpus,
                std::size_t batch_size = 16);

struct AblationReport {
  double kl_importance = 0.0;
  double kl_random_mean = 0.0;
  double kl_random_min = 0.0;
  std::vector<double> kl_random;  // one per trial, in trial order
};

/// Prunes once by the importance plan and `n_random_trials` times by seeded
/// random GQA-aligned plans with the same budgets; reports teacher KL of each
/// pruned model before any distillation.
AblationReport prune_ablation(const Checkpoint& ckpt, const Corpus& corpus, const ImportanceReport& report,
                              const PruneTargets& targets, std::size_t n_random_trials, std::uint64_t seed);

void to_json(nlohmann::json& j, const AblationReport& r);

}  // namespace kanac
