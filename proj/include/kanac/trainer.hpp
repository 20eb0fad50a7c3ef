// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kanac/corpus.hpp"
#include "kanac/model.hpp"
#include "kanac/optimizer.hpp"

namespace kanac {

enum class ScheduleKind { cosine, multistep };

/// Linear warmup from 0 to peak_lr, then cosine decay to
/// min_lr_fraction * peak_lr or a piecewise-constant multistep decay.
struct Schedule {
  ScheduleKind kind = ScheduleKind::cosine;
  double peak_lr = 1.2e-4;
  std::size_t warmup_steps = 100;
  std::size_t total_steps = 1000;
  double min_lr_fraction = 0.0;
  std::vector<std::size_t> milestones;  // multistep: steps at which a factor applies
  std::vector<double> factors;

  void validate() const;

  static Schedule cosine(double peak_lr, std::size_t warmup, std::size_t total, double min_lr_fraction = 0.0);
  /// Empty milestones default to 80% and 90% of total with factor sqrt(0.1).
  static Schedule multistep(double peak_lr, std::size_t warmup, std::size_t total,
                            std::vector<std::size_t> milestones = {}, std::vector<double> factors = {});
};

/// Learning rate at `step` in [0, total_steps]; ValidationError otherwise.
double lr_at(const Schedule& schedule, std::size_t step);

/// Mean over positions of KL(softmax(teacher/T) || softmax(student/T)).
/// Writes the gradient w.r.t. the student logits when `dstudent` is set.
template <class T>
double kl_divergence(std::span<const T> teacher, std::span<const T> student, std::size_t vocab, double temperature,
                     std::vector<T>* dstudent = nullptr);

double kl_loss(std::span<const float> teacher, std::span<const float> student, std::size_t vocab,
               double temperature = 1.0);

enum class RepeatPolicy { repeat, no_repeat };

struct StageSource {
  std::string name;
  std::shared_ptr<const Corpus> corpus;
  double weight = 1.0;
};

struct Stage {
  std::vector<StageSource> sources;
  std::size_t steps = 0;
  Schedule schedule;
  std::uint64_t seed = 0;
};

/// Stages run in order; within a stage every batch comes from one source
/// drawn by mixing weight.
struct StagePlan {
  std::vector<Stage> stages;
  void validate() const;
};

struct PretrainSettings {
  AdamSettings adam;
  LossSpec loss;
  std::size_t batch_size = 16;
  RepeatPolicy repeat = RepeatPolicy::repeat;
};

struct LogRecord {
  std::size_t step = 0;  // 1-based, global across stages
  std::size_t stage = 0;
  std::size_t source = 0;
  double lr = 0.0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogRecord> log;
  bool aborted = false;  // a non-finite loss stopped the run; checkpoint is the last good one
  std::string message;
};

/// Loss = NTP + z-loss; one optimizer step per batch.
TrainResult pretrain(Checkpoint ckpt, const StagePlan& plan, const PretrainSettings& settings);

struct DistillConfig {
  double temperature = 1.0;
  Schedule schedule;
  std::size_t batch_size = 16;
  std::size_t seq_len = 128;
  std::uint64_t seed = 0;
  std::size_t max_steps = 1000;
  AdamSettings adam{0.9, 0.95, 1e-8, 0.0};

  void validate() const;
};

/// Trains the student on KL to the frozen teacher's logits only.
TrainResult distill(Checkpoint student, const Checkpoint& teacher, const Corpus& corpus, const DistillConfig& config);

/// Tab-separated records after a header line:
///   step stage source lr loss wall_ms
void write_log(std::ostream& os, std::span<const LogRecord> log);

void to_json(nlohmann::json& j, const Schedule& s);
void from_json(const nlohmann::json& j, Schedule& s);
void to_json(nlohmann::json& j, const DistillConfig& c);
void from_json(const nlohmann::json& j, DistillConfig& c);
void to_json(nlohmann::json& j, const AdamSettings& a);
void from_json(const nlohmann::json& j, AdamSettings& a);

}  // namespace kanac
