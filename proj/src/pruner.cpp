// SPDX-License-Identifier: Apache-2.0
#include "kanac/pruner.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "kanac/checkpoint.hpp"
#include "kanac/errors.hpp"

namespace kanac {

namespace {

void check_index_list(const std::vector<std::size_t>& idx, std::size_t bound, const std::string& what) {
  if (idx.empty()) throw ValidationError(fmt::format("prune spec: {} keeps nothing", what));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= bound) throw ValidationError(fmt::format("prune spec: {} index {} >= {}", what, idx[i], bound));
    if (i > 0 && idx[i] <= idx[i - 1]) throw ValidationError(fmt::format("prune spec: {} is not strictly increasing", what));
  }
}

// Sorted sample of k distinct indices from [0, n): partial Fisher-Yates on
// raw generator output.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(all[i], all[j]);
  }
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

std::vector<float> take_rows(const std::vector<float>& m, std::size_t cols, const std::vector<std::size_t>& rows) {
  std::vector<float> out;
  out.reserve(rows.size() * cols);
  for (std::size_t r : rows) out.insert(out.end(), m.begin() + r * cols, m.begin() + (r + 1) * cols);
  return out;
}

std::vector<float> take_cols(const std::vector<float>& m, std::size_t cols, const std::vector<std::size_t>& keep) {
  const std::size_t rows = m.size() / cols;
  std::vector<float> out;
  out.reserve(rows * keep.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c : keep) out.push_back(m[r * cols + c]);
  }
  return out;
}

std::vector<float> take(const std::vector<float>& v, const std::vector<std::size_t>& keep) {
  std::vector<float> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(v[i]);
  return out;
}

// Expands block indices to element indices: block b -> [b*width, (b+1)*width).
std::vector<std::size_t> expand_blocks(const std::vector<std::size_t>& blocks, std::size_t width) {
  std::vector<std::size_t> out;
  for (std::size_t b : blocks) {
    for (std::size_t i = 0; i < width; ++i) out.push_back(b * width + i);
  }
  return out;
}

std::vector<std::size_t> kept_query_heads(const LayerKeep& lk, std::size_t group_size) {
  std::vector<std::size_t> heads;
  for (std::size_t gi = 0; gi < lk.kv_groups.size(); ++gi) {
    for (std::size_t h : lk.query_heads[gi]) heads.push_back(lk.kv_groups[gi] * group_size + h);
  }
  return heads;
}

}  // namespace

PruneTargets PruneTargets::keep_all(const ModelConfig& c) {
  return {c.hidden_dim, c.intermediate_dim, c.n_kv_heads, c.group_size()};
}

void validate_targets(const ModelConfig& c, const PruneTargets& t) {
  auto check = [](std::size_t v, std::size_t bound, const char* name) {
    if (v < 1) throw ValidationError(fmt::format("prune target {} must be >= 1", name));
    if (v > bound) throw ValidationError(fmt::format("prune target {} = {} exceeds current size {}", name, v, bound));
  };
  check(t.hidden_dim, c.hidden_dim, "hidden_dim");
  check(t.intermediate_dim, c.intermediate_dim, "intermediate_dim");
  check(t.n_kv_heads, c.n_kv_heads, "n_kv_heads");
  check(t.queries_per_group, c.group_size(), "queries_per_group");
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

PruneSpec make_spec(const ModelConfig& source, std::vector<std::size_t> channels, std::vector<LayerKeep> layers) {
  PruneSpec s;
  s.source = source;
  s.channels = std::move(channels);
  s.layers = std::move(layers);
  s.source_digest = config_digest(source);
  s.target = source;
  s.target.hidden_dim = s.channels.size();
  if (!s.layers.empty()) {
    const auto& l0 = s.layers.front();
    s.target.intermediate_dim = l0.neurons.size();
    s.target.n_kv_heads = l0.kv_groups.size();
    s.target.n_query_heads = l0.kv_groups.size() * (l0.query_heads.empty() ? 0 : l0.query_heads.front().size());
  }
  s.validate();
  return s;
}

void PruneSpec::validate() const {
  source.validate();
  if (source_digest != config_digest(source)) throw ValidationError("prune spec: source digest does not match source");
  check_index_list(channels, source.hidden_dim, "channels");
  if (layers.size() != source.n_layers) {
    throw ValidationError(fmt::format("prune spec: {} layer entries for {} layers", layers.size(), source.n_layers));
  }
  const std::size_t g = source.group_size();
  std::size_t q_per_group = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& lk = layers[l];
    check_index_list(lk.neurons, source.intermediate_dim, fmt::format("layer {} neurons", l));
    check_index_list(lk.kv_groups, source.n_kv_heads, fmt::format("layer {} kv_groups", l));
    if (lk.query_heads.size() != lk.kv_groups.size()) {
      throw ValidationError(fmt::format("prune spec: layer {} lists query heads for {} groups, keeps {}", l,
                                        lk.query_heads.size(), lk.kv_groups.size()));
    }
    for (std::size_t gi = 0; gi < lk.query_heads.size(); ++gi) {
      check_index_list(lk.query_heads[gi], g, fmt::format("layer {} group {} query heads", l, lk.kv_groups[gi]));
      if (q_per_group == 0) q_per_group = lk.query_heads[gi].size();
      if (lk.query_heads[gi].size() != q_per_group) {
        throw ValidationError(fmt::format("prune spec: layer {} keeps unequal query heads per group", l));
      }
    }
    if (lk.neurons.size() != layers[0].neurons.size() || lk.kv_groups.size() != layers[0].kv_groups.size()) {
      throw ValidationError(fmt::format("prune spec: layer {} budget differs from layer 0", l));
    }
  }
  ModelConfig expect = source;
  expect.hidden_dim = channels.size();
  expect.intermediate_dim = layers[0].neurons.size();
  expect.n_kv_heads = layers[0].kv_groups.size();
  expect.n_query_heads = expect.n_kv_heads * q_per_group;
  if (!(target == expect)) throw ValidationError("prune spec: target config does not follow from the keep lists");
  target.validate();
}

PruneSpec plan(const ModelConfig& c, const ImportanceReport& report, const PruneTargets& t) {
  validate_targets(c, t);
  report.validate_against(c);
  std::vector<LayerKeep> layers;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    LayerKeep lk;
    lk.neurons = top_k(report.neurons[l], t.intermediate_dim);
    lk.kv_groups = top_k(report.groups[l], t.n_kv_heads);
    const std::size_t g = c.group_size();
    for (std::size_t grp : lk.kv_groups) {
      const std::span<const double> member(report.heads[l].data() + grp * g, g);
      lk.query_heads.push_back(top_k(member, t.queries_per_group));
    }
    layers.push_back(std::move(lk));
  }
  auto spec = make_spec(c, top_k(report.channels, t.hidden_dim), std::move(layers));
  spec.report_digest = report.calibration_digest;
  return spec;
}

PruneSpec random_plan(const ModelConfig& c, const PruneTargets& t, std::mt19937_64& rng) {
  validate_targets(c, t);
  auto channels = sample_indices(c.hidden_dim, t.hidden_dim, rng);
  std::vector<LayerKeep> layers;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    LayerKeep lk;
    lk.neurons = sample_indices(c.intermediate_dim, t.intermediate_dim, rng);
    lk.kv_groups = sample_indices(c.n_kv_heads, t.n_kv_heads, rng);
    for (std::size_t gi = 0; gi < lk.kv_groups.size(); ++gi) {
      lk.query_heads.push_back(sample_indices(c.group_size(), t.queries_per_group, rng));
    }
    layers.push_back(std::move(lk));
  }
  return make_spec(c, std::move(channels), std::move(layers));
}

PruneSpec identity_spec(const ModelConfig& c) {
  auto iota_n = [](std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
  };
  std::vector<LayerKeep> layers(c.n_layers);
  for (auto& lk : layers) {
    lk.neurons = iota_n(c.intermediate_dim);
    lk.kv_groups = iota_n(c.n_kv_heads);
    lk.query_heads.assign(c.n_kv_heads, iota_n(c.group_size()));
  }
  return make_spec(c, iota_n(c.hidden_dim), std::move(layers));
}

Checkpoint apply_prune(const Checkpoint& ckpt, const PruneSpec& spec) {
  spec.validate();
  if (spec.source_digest != config_digest(ckpt.config)) {
    throw ValidationError("apply_prune: spec was planned for a different model config");
  }
  const auto& c = ckpt.config;
  const auto& w = ckpt.weights;
  const std::size_t d = c.hidden_dim, hd = c.head_dim;
  const auto& ch = spec.channels;

  Checkpoint out;
  out.config = spec.target;
  out.metadata = ckpt.metadata;
  out.metadata.erase(std::string(kPayloadDigestKey));
  out.metadata["parent_sha256"] = checkpoint_digest(ckpt);
  out.metadata["origin"] = "prune";

  auto& ow = out.weights;
  ow.tok_embeddings = take_cols(w.tok_embeddings, d, ch);
  if (!c.tied_embeddings) ow.output = take_cols(w.output, d, ch);
  ow.final_norm = take(w.final_norm, ch);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lw = w.layers[l];
    const auto& lk = spec.layers[l];
    const auto q_rows = expand_blocks(kept_query_heads(lk, c.group_size()), hd);
    const auto kv_rows = expand_blocks(lk.kv_groups, hd);
    LayerWeights<float> nl;
    nl.attn_norm = take(lw.attn_norm, ch);
    nl.wq = take_cols(take_rows(lw.wq, d, q_rows), d, ch);
    nl.wk = take_cols(take_rows(lw.wk, d, kv_rows), d, ch);
    nl.wv = take_cols(take_rows(lw.wv, d, kv_rows), d, ch);
    nl.wo = take_cols(take_rows(lw.wo, c.q_dim(), ch), c.q_dim(), q_rows);
    nl.ffn_norm = take(lw.ffn_norm, ch);
    nl.w_gate = take_cols(take_rows(lw.w_gate, d, lk.neurons), d, ch);
    nl.w_up = take_cols(take_rows(lw.w_up, d, lk.neurons), d, ch);
    nl.w_down = take_cols(take_rows(lw.w_down, c.intermediate_dim, ch), c.intermediate_dim, lk.neurons);
    ow.layers.push_back(std::move(nl));
  }
  check_shapes(out.config, ow);
  return out;
}

Checkpoint tie_embeddings(const Checkpoint& ckpt) {
  if (ckpt.config.tied_embeddings) throw ValidationError("tie_embeddings: embeddings are already tied");
  check_shapes(ckpt.config, ckpt.weights);
  Checkpoint out = ckpt;
  out.metadata.erase(std::string(kPayloadDigestKey));
  out.metadata["parent_sha256"] = checkpoint_digest(ckpt);
  out.metadata["origin"] = "tie";
  auto& e = out.weights.tok_embeddings;
  const auto& o = ckpt.weights.output;
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = (e[i] + o[i]) * 0.5f;
  out.weights.output.clear();
  out.config.tied_embeddings = true;
  return out;
}

std::size_t stored_parameter_count(const Checkpoint& ckpt) {
  std::size_t n = 0;
  for (const auto& r : tensor_refs(ckpt.config, ckpt.weights)) n += r.data->size();
  return n;
}

void to_json(nlohmann::json& j, const PruneTargets& t) {
  j = nlohmann::json{{"hidden_dim", t.hidden_dim},
                     {"intermediate_dim", t.intermediate_dim},
                     {"n_kv_heads", t.n_kv_heads},
                     {"queries_per_group", t.queries_per_group}};
}

void from_json(const nlohmann::json& j, PruneTargets& t) {
  try {
    t.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    t.intermediate_dim = j.at("intermediate_dim").get<std::size_t>();
    t.n_kv_heads = j.at("n_kv_heads").get<std::size_t>();
    t.queries_per_group = j.at("queries_per_group").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("prune targets: {}", e.what()));
  }
}

void to_json(nlohmann::json& j, const PruneSpec& s) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& lk : s.layers) {
    layers.push_back({{"neurons", lk.neurons}, {"kv_groups", lk.kv_groups}, {"query_heads", lk.query_heads}});
  }
  j = nlohmann::json{{"source", s.source},
                     {"target", s.target},
                     {"channels", s.channels},
                     {"layers", layers},
                     {"provenance", {{"source_config_digest", s.source_digest}, {"report_digest", s.report_digest}}}};
}

void from_json(const nlohmann::json& j, PruneSpec& s) {
  try {
    s.source = j.at("source").get<ModelConfig>();
    s.target = j.at("target").get<ModelConfig>();
    s.channels = j.at("channels").get<std::vector<std::size_t>>();
    s.layers.clear();
    for (const auto& l : j.at("layers")) {
      s.layers.push_back({l.at("neurons").get<std::vector<std::size_t>>(), l.at("kv_groups").get<std::vector<std::size_t>>(),
                          l.at("query_heads").get<std::vector<std::vector<std::size_t>>>()});
    }
    s.source_digest = j.at("provenance").at("source_config_digest").get<std::string>();
    s.report_digest = j.at("provenance").value("report_digest", "");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("prune spec: {}", e.what()));
  }
  s.validate();
}

}  // namespace kanac
