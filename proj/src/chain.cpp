// SPDX-License-Identifier: Apache-2.0
#include "kanac/chain.hpp"

#include <ostream>

#include <fmt/format.h>

#include "kanac/errors.hpp"

namespace kanac {

ChainResult run_chain(const Checkpoint& original, const Corpus& calibration, const Corpus& distill_corpus,
                      const ChainPlan& plan, std::ostream* progress) {
  if (plan.steps.empty()) throw ValidationError("chain: plan has no steps");
  ChainResult result{original, {}};
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const auto& step = plan.steps[i];
    const Checkpoint start = result.model;
    const auto trace = capture(start, calibration, plan.agg, plan.calibration_batches, plan.calibration_batch_size);
    const auto spec = kanac::plan(start.config, build_report(trace, plan.mode), step.targets);
    Checkpoint pruned = apply_prune(start, spec);
    if (step.tie) pruned = tie_embeddings(pruned);
    const Checkpoint& teacher = plan.teacher_is_original ? original : start;
    auto run = distill(std::move(pruned), teacher, distill_corpus, step.distill);
    if (run.aborted) throw NumericError(fmt::format("chain step {}: {}", i, run.message));
    if (progress) {
      *progress << fmt::format("chain step {}: hidden={} intermediate={} kv_heads={} query_heads={} final_kl={:.6g}\n", i,
                               run.checkpoint.config.hidden_dim, run.checkpoint.config.intermediate_dim,
                               run.checkpoint.config.n_kv_heads, run.checkpoint.config.n_query_heads,
                               run.log.empty() ? 0.0 : run.log.back().loss);
    }
    result.model = std::move(run.checkpoint);
    result.logs.push_back(std::move(run.log));
  }
  return result;
}

void to_json(nlohmann::json& j, const ChainPlan& p) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : p.steps) steps.push_back({{"targets", s.targets}, {"distill", s.distill}, {"tie", s.tie}});
  j = nlohmann::json{{"steps", steps},
                     {"aggregation", p.agg},
                     {"neuron_mode", p.mode},
                     {"calibration_batches", p.calibration_batches},
                     {"calibration_batch_size", p.calibration_batch_size},
                     {"teacher", p.teacher_is_original ? "original" : "previous"}};
}

void from_json(const nlohmann::json& j, ChainPlan& p) {
  try {
    p = ChainPlan{};
    for (const auto& s : j.at("steps")) {
      ChainStep step;
      step.targets = s.at("targets").get<PruneTargets>();
      step.distill = s.at("distill").get<DistillConfig>();
      step.tie = s.value("tie", false);
      p.steps.push_back(std::move(step));
    }
    if (j.contains("aggregation")) p.agg = j.at("aggregation").get<AggregationSpec>();
    if (j.contains("neuron_mode")) p.mode = j.at("neuron_mode").get<NeuronMode>();
    p.calibration_batches = j.value("calibration_batches", p.calibration_batches);
    p.calibration_batch_size = j.value("calibration_batch_size", p.calibration_batch_size);
    const auto teacher = j.value("teacher", std::string("original"));
    if (teacher != "original" && teacher != "previous") {
      throw ValidationError(fmt::format("chain: teacher must be 'original' or 'previous', got '{}'", teacher));
    }
    p.teacher_is_original = teacher == "original";
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("chain plan: {}", e.what()));
  }
}

}  // namespace kanac
