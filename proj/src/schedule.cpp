// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "kanac/errors.hpp"
#include "kanac/trainer.hpp"

namespace kanac {

void Schedule::validate() const {
  if (!(std::isfinite(peak_lr) && peak_lr >= 0.0)) throw ValidationError("schedule: peak_lr must be >= 0");
  if (total_steps < 1) throw ValidationError("schedule: total_steps must be >= 1");
  if (warmup_steps >= total_steps) {
    throw ValidationError(fmt::format("schedule: warmup_steps ({}) must be < total_steps ({})", warmup_steps, total_steps));
  }
  if (!(min_lr_fraction >= 0.0 && min_lr_fraction <= 1.0)) {
    throw ValidationError("schedule: min_lr_fraction must lie in [0, 1]");
  }
  if (kind == ScheduleKind::multistep) {
    if (milestones.size() != factors.size()) throw ValidationError("schedule: one factor per milestone");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (milestones[i] >= total_steps) throw ValidationError("schedule: milestones must be < total_steps");
      if (i > 0 && milestones[i] <= milestones[i - 1]) {
        throw ValidationError("schedule: milestones must be strictly increasing");
      }
      if (!(factors[i] >= 0.0)) throw ValidationError("schedule: factors must be >= 0");
    }
  }
}

Schedule Schedule::cosine(double peak_lr, std::size_t warmup, std::size_t total, double min_lr_fraction) {
  Schedule s;
  s.kind = ScheduleKind::cosine;
  s.peak_lr = peak_lr;
  s.warmup_steps = warmup;
  s.total_steps = total;
  s.min_lr_fraction = min_lr_fraction;
  s.validate();
  return s;
}

Schedule Schedule::multistep(double peak_lr, std::size_t warmup, std::size_t total, std::vector<std::size_t> milestones,
                             std::vector<double> factors) {
  Schedule s;
  s.kind = ScheduleKind::multistep;
  s.peak_lr = peak_lr;
  s.warmup_steps = warmup;
  s.total_steps = total;
  if (milestones.empty()) {
    milestones = {total * 8 / 10, total * 9 / 10};
    factors = {std::sqrt(0.1), std::sqrt(0.1)};
    // Short schedules put both drops on the same step.
    if (milestones[0] == milestones[1]) {
      milestones = {milestones[0]};
      factors = {0.1};
    }
  }
  s.milestones = std::move(milestones);
  s.factors = std::move(factors);
  s.validate();
  return s;
}

double lr_at(const Schedule& s, std::size_t step) {
  if (step > s.total_steps) {
    throw ValidationError(fmt::format("lr_at: step {} outside [0, {}]", step, s.total_steps));
  }
  if (step < s.warmup_steps) {
    return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  if (s.kind == ScheduleKind::cosine) {
    const double progress =
        static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
    const double f = s.min_lr_fraction;
    return s.peak_lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
  }
  double lr = s.peak_lr;
  for (std::size_t i = 0; i < s.milestones.size(); ++i) {
    if (step >= s.milestones[i]) lr *= s.factors[i];
  }
  return lr;
}

}  // namespace kanac
