// SPDX-License-Identifier: Apache-2.0
#include "kanac/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include <fmt/format.h>

#include "kanac/digest.hpp"
#include "kanac/errors.hpp"

namespace kanac {

namespace {

// Sequence-level reduction of one statistic family, then the running
// batch-axis accumulator (sum for mean, sum of squares for l2norm).
class Accumulator {
 public:
  Accumulator(std::size_t width, std::size_t seq, const AggregationSpec& agg)
      : width_(width), seq_(seq), agg_(agg), seq_buf_(width), total_(width) {}

  // `value(t, j)` yields the per-token magnitude of element j at position t.
  template <class F>
  void add_sequence(F&& value) {
    std::fill(seq_buf_.begin(), seq_buf_.end(), 0.0);
    for (std::size_t t = 0; t < seq_; ++t) {
      for (std::size_t j = 0; j < width_; ++j) {
        const double m = value(t, j);
        seq_buf_[j] += agg_.seq == SeqAgg::mean ? m : m * m;
      }
    }
    for (std::size_t j = 0; j < width_; ++j) {
      const double s = agg_.seq == SeqAgg::mean ? seq_buf_[j] / static_cast<double>(seq_) : std::sqrt(seq_buf_[j]);
      total_[j] += agg_.batch == BatchAgg::mean ? s : s * s;
    }
  }

  std::vector<double> finalize(std::size_t sequences) const {
    std::vector<double> out(width_);
    for (std::size_t j = 0; j < width_; ++j) {
      out[j] = agg_.batch == BatchAgg::mean ? total_[j] / static_cast<double>(sequences) : std::sqrt(total_[j]);
    }
    return out;
  }

 private:
  std::size_t width_, seq_;
  AggregationSpec agg_;
  std::vector<double> seq_buf_, total_;
};

struct LayerAccumulators {
  Accumulator inter, gate, up, heads, chan_attn, chan_ffn;
};

template <class E>
void enum_from_json(const nlohmann::json& j, E& v, std::initializer_list<std::pair<E, const char*>> names,
                    const char* what) {
  if (j.is_string()) {
    for (const auto& [e, n] : names) {
      if (j.get<std::string>() == n) {
        v = e;
        return;
      }
    }
  }
  throw ValidationError(fmt::format("unknown {} value {}", what, j.dump()));
}

template <class E>
void enum_to_json(nlohmann::json& j, E v, std::initializer_list<std::pair<E, const char*>> names) {
  for (const auto& [e, n] : names) {
    if (e == v) j = n;
  }
}

}  // namespace

ActivationTrace capture(const Checkpoint& ckpt, const Corpus& corpus, const AggregationSpec& agg,
                        std::size_t max_batches, std::size_t batch_size) {
  const auto& c = ckpt.config;
  if (max_batches < 1) throw ValidationError("capture: max_batches must be >= 1");
  if (batch_size < 1) throw ValidationError("capture: batch_size must be >= 1");
  if (corpus.window_count() == 0) throw ValidationError("capture: calibration corpus has no windows");
  if (corpus.vocab_size() > c.vocab_size) {
    throw ValidationError(
        fmt::format("capture: corpus vocab {} exceeds model vocab {}", corpus.vocab_size(), c.vocab_size));
  }
  const std::size_t S = corpus.seq_len();
  const std::size_t d = c.hidden_dim, I = c.intermediate_dim, hd = c.head_dim, Hq = c.n_query_heads;

  std::vector<LayerAccumulators> acc;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    acc.push_back({Accumulator(I, S, agg), Accumulator(I, S, agg), Accumulator(I, S, agg), Accumulator(Hq, S, agg),
                   Accumulator(d, S, agg), Accumulator(d, S, agg)});
  }
  Accumulator final_acc(d, S, agg);

  const std::size_t n_windows = corpus.window_count();
  const std::size_t n_batches = std::min(max_batches, (n_windows + batch_size - 1) / batch_size);
  std::size_t sequences = 0;
  for (std::size_t bi = 0; bi < n_batches; ++bi) {
    std::vector<std::size_t> ids;
    for (std::size_t w = bi * batch_size; w < std::min(n_windows, (bi + 1) * batch_size); ++w) ids.push_back(w);
    const auto batch = corpus.batch(ids);
    const auto a = forward_activations(c, ckpt.weights, batch.inputs);
    for (std::size_t b = 0; b < ids.size(); ++b) {
      const std::size_t r0 = b * S;
      for (std::size_t l = 0; l < c.n_layers; ++l) {
        const auto& la = a.layers[l];
        auto& ac = acc[l];
        ac.inter.add_sequence([&](std::size_t t, std::size_t j) { return std::abs(double(la.inter[(r0 + t) * I + j])); });
        ac.gate.add_sequence([&](std::size_t t, std::size_t j) { return std::abs(double(la.gate[(r0 + t) * I + j])); });
        ac.up.add_sequence([&](std::size_t t, std::size_t j) { return std::abs(double(la.up[(r0 + t) * I + j])); });
        ac.heads.add_sequence([&](std::size_t t, std::size_t h) {
          const float* o = la.attn_out.data() + (r0 + t) * Hq * hd + h * hd;
          double ss = 0.0;
          for (std::size_t i = 0; i < hd; ++i) ss += double(o[i]) * double(o[i]);
          return std::sqrt(ss);
        });
        ac.chan_attn.add_sequence([&](std::size_t t, std::size_t i) { return std::abs(double(la.x_in[(r0 + t) * d + i])); });
        ac.chan_ffn.add_sequence([&](std::size_t t, std::size_t i) { return std::abs(double(la.x_mid[(r0 + t) * d + i])); });
      }
      final_acc.add_sequence([&](std::size_t t, std::size_t i) { return std::abs(double(a.x_final[(r0 + t) * d + i])); });
      ++sequences;
    }
  }

  ActivationTrace trace;
  trace.config = c;
  trace.agg = agg;
  trace.batches = n_batches;
  trace.sequences = sequences;
  for (const auto& ac : acc) {
    trace.layers.push_back({ac.inter.finalize(sequences), ac.gate.finalize(sequences), ac.up.finalize(sequences),
                            ac.heads.finalize(sequences), ac.chan_attn.finalize(sequences),
                            ac.chan_ffn.finalize(sequences)});
  }
  trace.chan_final = final_acc.finalize(sequences);
  trace.config_digest = config_digest(c);
  trace.calibration_digest =
      sha256_hex(fmt::format("{};batches={};batch_size={}", corpus.digest(), n_batches, batch_size));
  return trace;
}

std::vector<std::vector<double>> score_ffn(const ActivationTrace& trace, NeuronMode mode) {
  std::vector<std::vector<double>> out;
  for (const auto& l : trace.layers) {
    if (mode == NeuronMode::intermediate_states) {
      out.push_back(l.inter);
    } else {
      std::vector<double> s(l.gate.size());
      for (std::size_t j = 0; j < s.size(); ++j) s[j] = 0.5 * (l.gate[j] + l.up[j]);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<HeadScores> score_heads(const ActivationTrace& trace) {
  const std::size_t g = trace.config.group_size();
  std::vector<HeadScores> out;
  for (const auto& l : trace.layers) {
    HeadScores hs{l.heads, std::vector<double>(trace.config.n_kv_heads, 0.0)};
    for (std::size_t h = 0; h < hs.query.size(); ++h) hs.group[h / g] += hs.query[h];
    out.push_back(std::move(hs));
  }
  return out;
}

std::vector<double> score_channels(const ActivationTrace& trace, LayerAgg layer_agg) {
  const std::size_t d = trace.config.hidden_dim;
  const std::size_t L = trace.layers.size();
  std::vector<double> out(d, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t i = 0; i < d; ++i) {
      double v = trace.layers[l].chan_attn[i] + trace.layers[l].chan_ffn[i];
      if (l + 1 == L) v += trace.chan_final[i];
      out[i] += v;
    }
  }
  if (layer_agg == LayerAgg::none) {
    for (auto& v : out) v /= static_cast<double>(L);
  }
  return out;
}

ImportanceReport build_report(const ActivationTrace& trace, NeuronMode mode) {
  ImportanceReport r;
  r.neurons = score_ffn(trace, mode);
  for (auto& hs : score_heads(trace)) {
    r.heads.push_back(std::move(hs.query));
    r.groups.push_back(std::move(hs.group));
  }
  r.channels = score_channels(trace, trace.agg.layer);
  r.config_digest = trace.config_digest;
  r.agg = trace.agg;
  r.mode = mode;
  r.calibration_digest = trace.calibration_digest;
  return r;
}

void ImportanceReport::validate_against(const ModelConfig& c) const {
  if (config_digest != kanac::config_digest(c)) {
    throw ValidationError("importance report was computed for a different model config");
  }
  auto check = [](const std::vector<double>& v, std::size_t n, const std::string& what) {
    if (v.size() != n) throw ValidationError(fmt::format("report: {} has {} scores, expected {}", what, v.size(), n));
    for (double x : v) {
      if (!std::isfinite(x)) throw ValidationError(fmt::format("report: non-finite score in {}", what));
    }
  };
  if (neurons.size() != c.n_layers || heads.size() != c.n_layers || groups.size() != c.n_layers) {
    throw ValidationError("report: per-layer score lists do not match n_layers");
  }
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    check(neurons[l], c.intermediate_dim, fmt::format("layer {} neurons", l));
    check(heads[l], c.n_query_heads, fmt::format("layer {} heads", l));
    check(groups[l], c.n_kv_heads, fmt::format("layer {} groups", l));
  }
  check(channels, c.hidden_dim, "channels");
}

void to_json(nlohmann::json& j, SeqAgg v) { enum_to_json(j, v, {{SeqAgg::mean, "mean"}, {SeqAgg::l2norm, "l2norm"}}); }
void from_json(const nlohmann::json& j, SeqAgg& v) {
  enum_from_json(j, v, {{SeqAgg::mean, "mean"}, {SeqAgg::l2norm, "l2norm"}}, "seq_agg");
}
void to_json(nlohmann::json& j, BatchAgg v) {
  enum_to_json(j, v, {{BatchAgg::mean, "mean"}, {BatchAgg::l2norm, "l2norm"}});
}
void from_json(const nlohmann::json& j, BatchAgg& v) {
  enum_from_json(j, v, {{BatchAgg::mean, "mean"}, {BatchAgg::l2norm, "l2norm"}}, "batch_agg");
}
void to_json(nlohmann::json& j, LayerAgg v) { enum_to_json(j, v, {{LayerAgg::sum, "sum"}, {LayerAgg::none, "none"}}); }
void from_json(const nlohmann::json& j, LayerAgg& v) {
  enum_from_json(j, v, {{LayerAgg::sum, "sum"}, {LayerAgg::none, "none"}}, "layer_agg");
}
void to_json(nlohmann::json& j, NeuronMode v) {
  enum_to_json(j, v, {{NeuronMode::intermediate_states, "intermediate_states"},
                      {NeuronMode::gate_up_average, "gate_up_average"}});
}
void from_json(const nlohmann::json& j, NeuronMode& v) {
  enum_from_json(j, v,
                 {{NeuronMode::intermediate_states, "intermediate_states"},
                  {NeuronMode::gate_up_average, "gate_up_average"}},
                 "neuron_mode");
}

void to_json(nlohmann::json& j, const AggregationSpec& a) {
  j = nlohmann::json{{"seq_agg", a.seq}, {"batch_agg", a.batch}, {"layer_agg", a.layer}};
}

void from_json(const nlohmann::json& j, AggregationSpec& a) {
  a = AggregationSpec{};
  if (j.contains("seq_agg")) a.seq = j.at("seq_agg").get<SeqAgg>();
  if (j.contains("batch_agg")) a.batch = j.at("batch_agg").get<BatchAgg>();
  if (j.contains("layer_agg")) a.layer = j.at("layer_agg").get<LayerAgg>();
}

void to_json(nlohmann::json& j, const ImportanceReport& r) {
  j = nlohmann::json{{"neurons", r.neurons},
                     {"heads", r.heads},
                     {"groups", r.groups},
                     {"channels", r.channels},
                     {"provenance",
                      {{"config_digest", r.config_digest},
                       {"calibration_digest", r.calibration_digest},
                       {"aggregation", r.agg},
                       {"neuron_mode", r.mode}}}};
}

void from_json(const nlohmann::json& j, ImportanceReport& r) {
  try {
    r.neurons = j.at("neurons").get<std::vector<std::vector<double>>>();
    r.heads = j.at("heads").get<std::vector<std::vector<double>>>();
    r.groups = j.at("groups").get<std::vector<std::vector<double>>>();
    r.channels = j.at("channels").get<std::vector<double>>();
    const auto& p = j.at("provenance");
    r.config_digest = p.at("config_digest").get<std::string>();
    r.calibration_digest = p.at("calibration_digest").get<std::string>();
    r.agg = p.at("aggregation").get<AggregationSpec>();
    r.mode = p.at("neuron_mode").get<NeuronMode>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("importance report: {}", e.what()));
  }
}

}  // namespace kanac
