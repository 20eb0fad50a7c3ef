// SPDX-License-Identifier: Apache-2.0
#include "kanac/weights.hpp"

#include <fmt/format.h>

#include "kanac/errors.hpp"

namespace kanac {

std::size_t TensorShape::numel() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::vector<TensorShape> tensor_manifest(const ModelConfig& c) {
  Weights<float> empty;
  empty.layers.resize(c.n_layers);
  std::vector<TensorShape> out;
  for (const auto& r : tensor_refs(c, empty)) out.push_back({r.name, r.shape});
  return out;
}

template <class T>
Weights<T> zeros_like(const ModelConfig& c) {
  Weights<T> w;
  w.layers.resize(c.n_layers);
  for (auto& r : tensor_refs(c, w)) r.data->assign(r.numel(), T(0));
  return w;
}

template <class T>
void check_shapes(const ModelConfig& c, const Weights<T>& w) {
  if (w.layers.size() != c.n_layers) {
    throw InternalError(fmt::format("weights hold {} layers, config declares {}", w.layers.size(), c.n_layers));
  }
  if (c.tied_embeddings && !w.output.empty()) {
    throw InternalError("output.weight present although embeddings are tied");
  }
  for (const auto& r : tensor_refs(c, w)) {
    if (r.data->size() != r.numel()) {
      throw InternalError(fmt::format("tensor {} holds {} values, expected {}", r.name, r.data->size(), r.numel()));
    }
  }
}

template Weights<float> zeros_like<float>(const ModelConfig&);
template Weights<double> zeros_like<double>(const ModelConfig&);
template void check_shapes<float>(const ModelConfig&, const Weights<float>&);
template void check_shapes<double>(const ModelConfig&, const Weights<double>&);

}  // namespace kanac
