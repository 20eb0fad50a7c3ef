// SPDX-License-Identifier: Apache-2.0
#include "kanac/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include <fmt/format.h>

#include "kanac/errors.hpp"

namespace kanac {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Uniform real in [0, 1) from the top 53 bits of one draw.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Hands out window indices in seeded shuffled epochs.
class WindowSampler {
 public:
  WindowSampler(std::size_t n_windows, RepeatPolicy policy) : n_(n_windows), policy_(policy) {}

  std::vector<std::size_t> next(std::size_t count, std::mt19937_64& rng, const std::string& source) {
    std::vector<std::size_t> out;
    while (out.size() < count) {
      if (cursor_ == order_.size()) {
        if (!order_.empty() && policy_ == RepeatPolicy::no_repeat) {
          throw ValidationError(fmt::format("corpus '{}' exhausted under the no-repeat policy", source));
        }
        reshuffle(rng);
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle(std::mt19937_64& rng) {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0);
    for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng() % i]);
    cursor_ = 0;
  }

  std::size_t n_;
  RepeatPolicy policy_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace

template <class T>
double kl_divergence(std::span<const T> teacher, std::span<const T> student, std::size_t vocab, double temperature,
                     std::vector<T>* dstudent) {
  if (!(temperature > 0.0)) throw DomainError("kl: temperature must be > 0");
  if (teacher.size() != student.size() || vocab == 0 || teacher.empty() || teacher.size() % vocab != 0) {
    throw DomainError(fmt::format("kl: teacher holds {} logits, student {}, vocab {}", teacher.size(), student.size(), vocab));
  }
  const std::size_t n = teacher.size() / vocab;
  if (dstudent) dstudent->assign(student.size(), T(0));
  std::vector<double> lp(vocab), lq(vocab);
  double total = 0.0;
  auto log_softmax = [&](const T* x, std::vector<double>& out) {
    double mx = -INFINITY;
    for (std::size_t v = 0; v < vocab; ++v) {
      out[v] = static_cast<double>(x[v]) / temperature;
      mx = std::max(mx, out[v]);
    }
    double sum = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) sum += std::exp(out[v] - mx);
    const double lse = mx + std::log(sum);
    for (auto& o : out) o -= lse;
  };
  for (std::size_t r = 0; r < n; ++r) {
    log_softmax(teacher.data() + r * vocab, lp);
    log_softmax(student.data() + r * vocab, lq);
    double kl = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      const double p = std::exp(lp[v]);
      kl += p * (lp[v] - lq[v]);
    }
    total += kl;
    if (dstudent) {
      T* d = dstudent->data() + r * vocab;
      const double scale = 1.0 / (temperature * static_cast<double>(n));
      for (std::size_t v = 0; v < vocab; ++v) d[v] = static_cast<T>(scale * (std::exp(lq[v]) - std::exp(lp[v])));
    }
  }
  return std::max(0.0, total / static_cast<double>(n));
}

template double kl_divergence<float>(std::span<const float>, std::span<const float>, std::size_t, double,
                                     std::vector<float>*);
template double kl_divergence<double>(std::span<const double>, std::span<const double>, std::size_t, double,
                                      std::vector<double>*);

double kl_loss(std::span<const float> teacher, std::span<const float> student, std::size_t vocab, double temperature) {
  return kl_divergence<float>(teacher, student, vocab, temperature);
}

void StagePlan::validate() const {
  if (stages.empty()) throw ValidationError("stage plan: needs at least one stage");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    if (s.steps < 1) throw ValidationError(fmt::format("stage {}: step budget must be >= 1", i));
    if (s.sources.empty()) throw ValidationError(fmt::format("stage {}: no data sources", i));
    for (const auto& src : s.sources) {
      if (!src.corpus) throw ValidationError(fmt::format("stage {}: source '{}' has no corpus", i, src.name));
      if (!(src.weight > 0.0 && std::isfinite(src.weight))) {
        throw ValidationError(fmt::format("stage {}: source '{}' weight must be > 0", i, src.name));
      }
    }
    s.schedule.validate();
    if (s.schedule.total_steps < s.steps) {
      throw ValidationError(fmt::format("stage {}: schedule covers {} steps, stage runs {}", i, s.schedule.total_steps, s.steps));
    }
  }
}

TrainResult pretrain(Checkpoint ckpt, const StagePlan& plan, const PretrainSettings& settings) {
  plan.validate();
  if (settings.batch_size < 1) throw ValidationError("pretrain: batch_size must be >= 1");
  for (const auto& stage : plan.stages) {
    for (const auto& src : stage.sources) {
      if (src.corpus->vocab_size() > ckpt.config.vocab_size) {
        throw ValidationError(fmt::format("pretrain: corpus '{}' vocab {} exceeds model vocab {}", src.name,
                                          src.corpus->vocab_size(), ckpt.config.vocab_size));
      }
      if (src.corpus->seq_len() > ckpt.config.max_seq_len) {
        throw ValidationError(fmt::format("pretrain: corpus '{}' seq_len exceeds max_seq_len", src.name));
      }
    }
  }

  TrainResult result;
  auto state = make_optimizer_state(ckpt.config, settings.adam);
  std::size_t global_step = 0;
  for (std::size_t si = 0; si < plan.stages.size(); ++si) {
    const auto& stage = plan.stages[si];
    std::mt19937_64 rng(stage.seed);
    std::vector<WindowSampler> samplers;
    double weight_sum = 0.0;
    for (const auto& src : stage.sources) {
      samplers.emplace_back(src.corpus->window_count(), settings.repeat);
      weight_sum += src.weight;
    }
    for (std::size_t s = 1; s <= stage.steps; ++s) {
      const auto start = Clock::now();
      ++global_step;
      const double u = unit(rng) * weight_sum;
      std::size_t pick = 0;
      for (double acc = stage.sources[0].weight; pick + 1 < stage.sources.size() && u >= acc;) {
        acc += stage.sources[++pick].weight;
      }
      const auto& src = stage.sources[pick];
      const auto batch = src.corpus->batch(samplers[pick].next(settings.batch_size, rng, src.name));
      const double lr = lr_at(stage.schedule, s);
      LossBreakdown loss;
      try {
        const auto grads = backward(ckpt, batch, settings.loss, &loss);
        optimizer_step(ckpt, grads, state, lr);
      } catch (const NumericError& e) {
        result.checkpoint = std::move(ckpt);
        result.aborted = true;
        result.message = fmt::format("step {}: {}", global_step, e.what());
        return result;
      }
      result.log.push_back({global_step, si, pick, lr, loss.total, elapsed_ms(start)});
    }
  }
  ckpt.metadata["train_steps"] = std::to_string(global_step);
  result.checkpoint = std::move(ckpt);
  return result;
}

void DistillConfig::validate() const {
  if (!(temperature > 0.0 && std::isfinite(temperature))) throw ValidationError("distill: temperature must be > 0");
  if (batch_size < 1 || seq_len < 1) throw ValidationError("distill: batch_size and seq_len must be >= 1");
  if (max_steps < 1) throw ValidationError("distill: max_steps must be >= 1");
  schedule.validate();
  if (schedule.total_steps < max_steps) {
    throw ValidationError(
        fmt::format("distill: schedule covers {} steps, run needs {}", schedule.total_steps, max_steps));
  }
}

TrainResult distill(Checkpoint student, const Checkpoint& teacher, const Corpus& corpus, const DistillConfig& config) {
  config.validate();
  const auto& sc = student.config;
  const auto& tc = teacher.config;
  if (sc.vocab_size != tc.vocab_size) {
    throw ValidationError(fmt::format("distill: student vocab {} differs from teacher vocab {}", sc.vocab_size, tc.vocab_size));
  }
  if (corpus.vocab_size() > sc.vocab_size) throw ValidationError("distill: corpus vocab exceeds model vocab");
  if (config.seq_len > sc.max_seq_len || config.seq_len > tc.max_seq_len) {
    throw ValidationError("distill: seq_len exceeds a model's max_seq_len");
  }
  const Corpus data = corpus.seq_len() == config.seq_len ? corpus : corpus.rewindowed(config.seq_len);

  TrainResult result;
  auto state = make_optimizer_state(sc, config.adam);
  std::mt19937_64 rng(config.seed);
  WindowSampler sampler(data.window_count(), RepeatPolicy::repeat);
  std::vector<float> dlogits;
  for (std::size_t s = 1; s <= config.max_steps; ++s) {
    const auto start = Clock::now();
    const auto batch = data.batch(sampler.next(config.batch_size, rng, data.path()));
    const double lr = lr_at(config.schedule, s);
    double kl = 0.0;
    try {
      const auto teacher_logits = forward(teacher, batch.inputs);
      const auto acts = forward_activations(sc, student.weights, batch.inputs);
      kl = kl_divergence<float>(teacher_logits, acts.logits, sc.vocab_size, config.temperature, &dlogits);
      if (!std::isfinite(kl)) throw NumericError("non-finite distillation loss");
      const auto grads = backward_from_logits<float>(sc, student.weights, acts, dlogits);
      optimizer_step(student, grads, state, lr);
    } catch (const NumericError& e) {
      result.checkpoint = std::move(student);
      result.aborted = true;
      result.message = fmt::format("step {}: {}", s, e.what());
      return result;
    }
    result.log.push_back({s, 0, 0, lr, kl, elapsed_ms(start)});
  }
  student.metadata["distill_steps"] = std::to_string(config.max_steps);
  result.checkpoint = std::move(student);
  return result;
}

void write_log(std::ostream& os, std::span<const LogRecord> log) {
  os << "step\tstage\tsource\tlr\tloss\twall_ms\n";
  for (const auto& r : log) {
    os << fmt::format("{}\t{}\t{}\t{:.9g}\t{:.9g}\t{:.3f}\n", r.step, r.stage, r.source, r.lr, r.loss, r.wall_ms);
  }
}

void to_json(nlohmann::json& j, const Schedule& s) {
  j = nlohmann::json{{"kind", s.kind == ScheduleKind::cosine ? "cosine" : "multistep"},
                     {"peak_lr", s.peak_lr},
                     {"warmup_steps", s.warmup_steps},
                     {"total_steps", s.total_steps},
                     {"min_lr_fraction", s.min_lr_fraction},
                     {"milestones", s.milestones},
                     {"factors", s.factors}};
}

void from_json(const nlohmann::json& j, Schedule& s) {
  try {
    const auto kind = j.value("kind", std::string("cosine"));
    if (kind != "cosine" && kind != "multistep") throw ValidationError(fmt::format("schedule: unknown kind '{}'", kind));
    const double peak = j.value("peak_lr", 1.2e-4);
    const auto warmup = j.value("warmup_steps", std::size_t{100});
    const auto total = j.at("total_steps").get<std::size_t>();
    if (kind == "cosine") {
      s = Schedule::cosine(peak, warmup, total, j.value("min_lr_fraction", 0.0));
    } else {
      s = Schedule::multistep(peak, warmup, total, j.value("milestones", std::vector<std::size_t>{}),
                              j.value("factors", std::vector<double>{}));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("schedule: {}", e.what()));
  }
}

void to_json(nlohmann::json& j, const AdamSettings& a) {
  j = nlohmann::json{{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay}};
}

void from_json(const nlohmann::json& j, AdamSettings& a) {
  const AdamSettings d = a;
  a.beta1 = j.value("beta1", d.beta1);
  a.beta2 = j.value("beta2", d.beta2);
  a.eps = j.value("eps", d.eps);
  a.weight_decay = j.value("weight_decay", d.weight_decay);
}

void to_json(nlohmann::json& j, const DistillConfig& c) {
  j = nlohmann::json{{"temperature", c.temperature}, {"schedule", c.schedule}, {"batch_size", c.batch_size},
                     {"seq_len", c.seq_len},         {"seed", c.seed},         {"max_steps", c.max_steps},
                     {"adam", c.adam}};
}

void from_json(const nlohmann::json& j, DistillConfig& c) {
  try {
    c = DistillConfig{};
    c.temperature = j.value("temperature", 1.0);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seq_len = j.value("seq_len", c.seq_len);
    c.seed = j.value("seed", c.seed);
    c.max_steps = j.value("max_steps", c.max_steps);
    if (j.contains("adam")) j.at("adam").get_to(c.adam);
    if (j.contains("schedule")) {
      c.schedule = j.at("schedule").get<Schedule>();
    } else {
      c.schedule = Schedule::cosine(1.2e-4, std::min<std::size_t>(100, c.max_steps - 1), c.max_steps);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("distill config: {}", e.what()));
  }
  c.validate();
}

}  // namespace kanac
