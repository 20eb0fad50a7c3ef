// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "kanac/config.hpp"

namespace kanac {

// Linear maps are stored row-major as [out, in]; embeddings as [vocab, hidden].
template <class T>
struct LayerWeights {
  std::vector<T> attn_norm;  // [hidden]
  std::vector<T> wq;         // [q_dim, hidden]
  std::vector<T> wk;         // [kv_dim, hidden]
  std::vector<T> wv;         // [kv_dim, hidden]
  std::vector<T> wo;         // [hidden, q_dim]
  std::vector<T> ffn_norm;   // [hidden]
  std::vector<T> w_gate;     // [intermediate, hidden]
  std::vector<T> w_up;       // [intermediate, hidden]
  std::vector<T> w_down;     // [hidden, intermediate]

  bool operator==(const LayerWeights&) const = default;
};

template <class T>
struct Weights {
  std::vector<T> tok_embeddings;  // [vocab, hidden]
  std::vector<LayerWeights<T>> layers;
  std::vector<T> final_norm;  // [hidden]
  std::vector<T> output;      // [vocab, hidden]; empty when tied

  /// Matrix used for the output projection.
  const std::vector<T>& output_matrix() const { return output.empty() ? tok_embeddings : output; }

  bool operator==(const Weights&) const = default;
};

/// Name, shape and storage of one tensor. `Vec` is `std::vector<T>` or
/// `const std::vector<T>`.
template <class Vec>
struct TensorRef {
  std::string name;
  std::vector<std::size_t> shape;
  Vec* data;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

struct TensorShape {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t numel() const;
};

/// Every tensor the config implies, sorted by canonical name.
std::vector<TensorShape> tensor_manifest(const ModelConfig& c);

namespace detail {
template <class W, class Vec>
std::vector<TensorRef<Vec>> collect_refs(const ModelConfig& c, W& w);
}

/// Named views over `w`, sorted by canonical name. Layers missing from `w`
/// are skipped; callers validate with check_shapes().
template <class T>
std::vector<TensorRef<std::vector<T>>> tensor_refs(const ModelConfig& c, Weights<T>& w) {
  return detail::collect_refs<Weights<T>, std::vector<T>>(c, w);
}
template <class T>
std::vector<TensorRef<const std::vector<T>>> tensor_refs(const ModelConfig& c, const Weights<T>& w) {
  return detail::collect_refs<const Weights<T>, const std::vector<T>>(c, w);
}

/// Weights with every tensor sized per `c` and zero-filled.
template <class T>
Weights<T> zeros_like(const ModelConfig& c);

/// Throws InternalError naming the first tensor whose size or presence does
/// not match `c`.
template <class T>
void check_shapes(const ModelConfig& c, const Weights<T>& w);

template <class To, class From>
Weights<To> cast_weights(const Weights<From>& w) {
  auto conv = [](const std::vector<From>& v) { return std::vector<To>(v.begin(), v.end()); };
  Weights<To> out;
  out.tok_embeddings = conv(w.tok_embeddings);
  out.final_norm = conv(w.final_norm);
  out.output = conv(w.output);
  out.layers.reserve(w.layers.size());
  for (const auto& l : w.layers) {
    out.layers.push_back({conv(l.attn_norm), conv(l.wq), conv(l.wk), conv(l.wv), conv(l.wo),
                          conv(l.ffn_norm), conv(l.w_gate), conv(l.w_up), conv(l.w_down)});
  }
  return out;
}

// ---- template definitions ----

namespace detail {

template <class W, class Vec>
std::vector<TensorRef<Vec>> collect_refs(const ModelConfig& c, W& w) {
  const std::size_t d = c.hidden_dim;
  std::vector<TensorRef<Vec>> refs;
  refs.push_back({"tok_embeddings.weight", {c.vocab_size, d}, &w.tok_embeddings});
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    auto& l = w.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    refs.push_back({p + "attention_norm.weight", {d}, &l.attn_norm});
    refs.push_back({p + "attention.wq.weight", {c.q_dim(), d}, &l.wq});
    refs.push_back({p + "attention.wk.weight", {c.kv_dim(), d}, &l.wk});
    refs.push_back({p + "attention.wv.weight", {c.kv_dim(), d}, &l.wv});
    refs.push_back({p + "attention.wo.weight", {d, c.q_dim()}, &l.wo});
    refs.push_back({p + "ffn_norm.weight", {d}, &l.ffn_norm});
    refs.push_back({p + "feed_forward.w1.weight", {c.intermediate_dim, d}, &l.w_gate});
    refs.push_back({p + "feed_forward.w2.weight", {d, c.intermediate_dim}, &l.w_down});
    refs.push_back({p + "feed_forward.w3.weight", {c.intermediate_dim, d}, &l.w_up});
  }
  refs.push_back({"norm.weight", {d}, &w.final_norm});
  if (!c.tied_embeddings) refs.push_back({"output.weight", {c.vocab_size, d}, &w.output});
  std::sort(refs.begin(), refs.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return refs;
}

}  // namespace detail

}  // namespace kanac
