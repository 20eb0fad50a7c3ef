// SPDX-License-Identifier: Apache-2.0
#pragma once

// Central finite differences on the double-precision shadow of a model.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "kanac/model.hpp"
#include "kanac/trainer.hpp"

namespace kanac::testing {

struct TensorError {
  std::string name;
  double rel_err = 0.0;
};

// Objective on double weights; returns the loss and, when `dlogits` is set,
// its gradient w.r.t. the logits.
using LogitObjective = std::function<double(std::span<const double> logits, std::vector<double>* dlogits)>;

// ||analytic - fd|| / max(||analytic||, ||fd||) per tensor.
inline std::vector<TensorError> gradient_errors(const ModelConfig& c, const Weights<double>& w0,
                                                const TokenBatch& batch, const LogitObjective& objective,
                                                double h = 1e-3) {
  auto loss_at = [&](const Weights<double>& w) {
    const auto acts = forward_activations<double>(c, w, batch);
    return objective(acts.logits, nullptr);
  };
  const auto acts = forward_activations<double>(c, w0, batch);
  std::vector<double> dlogits;
  objective(acts.logits, &dlogits);
  auto analytic = backward_from_logits<double>(c, w0, acts, dlogits);

  Weights<double> w = w0;
  std::vector<TensorError> out;
  const auto arefs = tensor_refs(c, analytic);
  auto wrefs = tensor_refs(c, w);
  for (std::size_t t = 0; t < wrefs.size(); ++t) {
    auto& vec = *wrefs[t].data;
    const auto& ga = *arefs[t].data;
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t i = 0; i < vec.size(); ++i) {
      const double orig = vec[i];
      vec[i] = orig + h;
      const double lp = loss_at(w);
      vec[i] = orig - h;
      const double lm = loss_at(w);
      vec[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      diff += (ga[i] - fd) * (ga[i] - fd);
      na += ga[i] * ga[i];
      nf += fd * fd;
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nf), 1e-300});
    out.push_back({wrefs[t].name, std::sqrt(diff) / denom});
  }
  return out;
}

inline LogitObjective lm_objective(std::vector<TokenId> targets, std::size_t vocab, LossSpec spec) {
  return [=](std::span<const double> logits, std::vector<double>* d) {
    return lm_loss<double>(logits, targets, vocab, spec, d).total;
  };
}

inline LogitObjective kl_objective(std::vector<double> teacher, std::size_t vocab, double temperature) {
  return [=](std::span<const double> logits, std::vector<double>* d) {
    return kl_divergence<double>(teacher, logits, vocab, temperature, d);
  };
}

}  // namespace kanac::testing
