// SPDX-License-Identifier: Apache-2.0
#include "kanac/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "kanac/errors.hpp"
#include "kanac/trainer.hpp"

namespace kanac {

namespace {

void check_corpus(const ModelConfig& c, const Corpus& corpus) {
  if (corpus.window_count() == 0) throw ValidationError("evaluation corpus has no windows");
  if (corpus.vocab_size() > c.vocab_size) {
    throw ValidationError(fmt::format("corpus vocab {} exceeds model vocab {}", corpus.vocab_size(), c.vocab_size));
  }
}

// Calls fn(batch) over consecutive windows; returns the window count.
template <class F>
std::size_t for_each_batch(const Corpus& corpus, std::size_t batch_size, F&& fn) {
  const std::size_t n = corpus.window_count();
  for (std::size_t first = 0; first < n; first += batch_size) {
    std::vector<std::size_t> ids(std::min(batch_size, n - first));
    std::iota(ids.begin(), ids.end(), first);
    fn(corpus.batch(ids));
  }
  return n;
}

}  // namespace

double perplexity(const Checkpoint& ckpt, const Corpus& corpus, std::size_t batch_size) {
  check_corpus(ckpt.config, corpus);
  double total = 0.0;
  std::size_t positions = 0;
  for_each_batch(corpus, batch_size, [&](const TrainBatch& b) {
    const auto logits = forward(ckpt, b.inputs);
    total += ntp_loss(logits, b.targets, ckpt.config.vocab_size) * static_cast<double>(b.targets.size());
    positions += b.targets.size();
  });
  return std::exp(total / static_cast<double>(positions));
}

double logit_kl(const Checkpoint& teacher, const Checkpoint& student, const Corpus& corpus, std::size_t batch_size) {
  if (teacher.config.vocab_size != student.config.vocab_size) {
    throw ValidationError(fmt::format("logit_kl: teacher vocab {} differs from student vocab {}",
                                      teacher.config.vocab_size, student.config.vocab_size));
  }
  check_corpus(teacher.config, corpus);
  double total = 0.0;
  std::size_t positions = 0;
  for_each_batch(corpus, batch_size, [&](const TrainBatch& b) {
    const auto t = forward(teacher, b.inputs);
    const auto s = forward(student, b.inputs);
    total += kl_loss(t, s, teacher.config.vocab_size) * static_cast<double>(b.targets.size());
    positions += b.targets.size();
  });
  return total / static_cast<double>(positions);
}

AblationReport prune_ablation(const Checkpoint& ckpt, const Corpus& corpus, const ImportanceReport& report,
                              const PruneTargets& targets, std::size_t n_random_trials, std::uint64_t seed) {
  if (n_random_trials < 1) throw ValidationError("prune_ablation: n_random_trials must be >= 1");
  AblationReport r;
  r.kl_importance = logit_kl(ckpt, apply_prune(ckpt, plan(ckpt.config, report, targets)), corpus);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n_random_trials; ++i) {
    const auto spec = random_plan(ckpt.config, targets, rng);
    r.kl_random.push_back(logit_kl(ckpt, apply_prune(ckpt, spec), corpus));
  }
  r.kl_random_mean = std::accumulate(r.kl_random.begin(), r.kl_random.end(), 0.0) / static_cast<double>(n_random_trials);
  r.kl_random_min = *std::min_element(r.kl_random.begin(), r.kl_random.end());
  return r;
}

void to_json(nlohmann::json& j, const AblationReport& r) {
  j = nlohmann::json{{"kl_importance", r.kl_importance},
                     {"kl_random_mean", r.kl_random_mean},
                     {"kl_random_min", r.kl_random_min},
                     {"kl_random", r.kl_random}};
}

}  // namespace kanac
