// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "kanac/corpus.hpp"
#include "kanac/model.hpp"

namespace kanac {

enum class SeqAgg { mean, l2norm };
enum class BatchAgg { mean, l2norm };
enum class LayerAgg { sum, none };

/// How per-token activation magnitudes are reduced: over the positions of a
/// sequence, then over calibration sequences, then (channels only) over
/// layers.
struct AggregationSpec {
  SeqAgg seq = SeqAgg::mean;
  BatchAgg batch = BatchAgg::l2norm;
  LayerAgg layer = LayerAgg::sum;

  bool operator==(const AggregationSpec&) const = default;
};

enum class NeuronMode { intermediate_states, gate_up_average };

/// Aggregated statistics of one block. Channel probes sit at the inputs of
/// the attention norm and the feed-forward norm.
struct LayerTrace {
  std::vector<double> inter;      // |SiLU(gate) * up| per neuron
  std::vector<double> gate;       // |gate| per neuron
  std::vector<double> up;         // |up| per neuron
  std::vector<double> heads;      // L2 over head_dim of each query head's output
  std::vector<double> chan_attn;  // |x| per channel at the attention-norm input
  std::vector<double> chan_ffn;   // |x| per channel at the feed-forward-norm input
};

struct ActivationTrace {
  ModelConfig config;
  AggregationSpec agg;
  std::size_t batches = 0;
  std::size_t sequences = 0;
  std::vector<LayerTrace> layers;
  std::vector<double> chan_final;  // |x| at the final-norm input
  std::string config_digest;
  std::string calibration_digest;
};

/// Runs the calibration windows (file order, `batch_size` windows per batch,
/// at most `max_batches` batches) through the model and aggregates
/// activation magnitudes. Throws ValidationError for max_batches == 0, an
/// empty corpus or a vocabulary mismatch.
ActivationTrace capture(const Checkpoint& ckpt, const Corpus& corpus, const AggregationSpec& agg,
                        std::size_t max_batches, std::size_t batch_size = 8);

/// Per-layer neuron scores.
std::vector<std::vector<double>> score_ffn(const ActivationTrace& trace, NeuronMode mode);

struct HeadScores {
  std::vector<double> query;  // per query head
  std::vector<double> group;  // per KV group: sum of member query heads
};
std::vector<HeadScores> score_heads(const ActivationTrace& trace);

/// Embedding-channel scores. The final-norm probe belongs to the last layer.
/// sum adds the per-layer statistics; none averages them.
std::vector<double> score_channels(const ActivationTrace& trace, LayerAgg layer_agg);

struct ImportanceReport {
  std::vector<std::vector<double>> neurons;  // [n_layers][intermediate_dim]
  std::vector<std::vector<double>> heads;    // [n_layers][n_query_heads]
  std::vector<std::vector<double>> groups;   // [n_layers][n_kv_heads]
  std::vector<double> channels;              // [hidden_dim]
  std::string config_digest;
  AggregationSpec agg;
  NeuronMode mode = NeuronMode::intermediate_states;
  std::string calibration_digest;

  /// Throws ValidationError when lengths disagree with `config`, the digest
  /// differs, or a score is not finite.
  void validate_against(const ModelConfig& config) const;
};

ImportanceReport build_report(const ActivationTrace& trace, NeuronMode mode = NeuronMode::intermediate_states);

void to_json(nlohmann::json& j, const AggregationSpec& a);
void from_json(const nlohmann::json& j, AggregationSpec& a);
void to_json(nlohmann::json& j, const ImportanceReport& r);
void from_json(const nlohmann::json& j, ImportanceReport& r);

// Enums serialize as their lowercase names; unknown names throw ValidationError.
void to_json(nlohmann::json& j, SeqAgg v);
void from_json(const nlohmann::json& j, SeqAgg& v);
void to_json(nlohmann::json& j, BatchAgg v);
void from_json(const nlohmann::json& j, BatchAgg& v);
void to_json(nlohmann::json& j, LayerAgg v);
void from_json(const nlohmann::json& j, LayerAgg& v);
void to_json(nlohmann::json& j, NeuronMode v);
void from_json(const nlohmann::json& j, NeuronMode& v);

}  // namespace kanac
