// SPDX-License-Identifier: Apache-2.0
#pragma once

// Straight-line double-precision decoder used as an oracle. It shares no code
// with the library: every loop is written out per position and per head.

#include <cmath>
#include <cstddef>
#include <vector>

#include "kanac/model.hpp"

namespace kanac::testing {

// Structures forced to zero during the forward pass. Empty vectors mean
// "keep everything".
struct Masks {
  std::vector<std::vector<bool>> neuron_dropped;  // [layer][intermediate]
  std::vector<std::vector<bool>> head_dropped;    // [layer][query head]
};

// Dense record of one sequence; index [layer][position][element].
struct DenseRecord {
  std::vector<std::vector<std::vector<double>>> x_in, x_mid, inter, gate, up, head_norm;
  std::vector<std::vector<double>> x_final;  // [position][hidden]
  std::vector<std::vector<double>> logits;   // [position][vocab]
};

inline DenseRecord reference_forward(const Checkpoint& ck, const std::vector<TokenId>& tokens,
                                     const Masks& masks = {}) {
  const auto& c = ck.config;
  const auto& w = ck.weights;
  const std::size_t S = tokens.size(), d = c.hidden_dim, hd = c.head_dim;
  const std::size_t Hq = c.n_query_heads, Hkv = c.n_kv_heads, I = c.intermediate_dim;
  using Vec = std::vector<double>;

  auto matvec = [](const std::vector<float>& m, const Vec& x, std::size_t rows) {
    Vec y(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < x.size(); ++i) y[r] += double(m[r * x.size() + i]) * x[i];
    return y;
  };
  auto rmsnorm = [&](const Vec& x, const std::vector<float>& g) {
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= double(x.size());
    const double inv = 1.0 / std::sqrt(ms + c.norm_eps);
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv * double(g[i]);
    return y;
  };
  auto rotate = [&](Vec& v, std::size_t heads, std::size_t pos) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < hd / 2; ++i) {
        const double th = double(pos) * std::pow(c.rope_base, -2.0 * double(i) / double(hd));
        const double a = v[h * hd + 2 * i], b = v[h * hd + 2 * i + 1];
        v[h * hd + 2 * i] = a * std::cos(th) - b * std::sin(th);
        v[h * hd + 2 * i + 1] = a * std::sin(th) + b * std::cos(th);
      }
    }
  };

  DenseRecord rec;
  std::vector<Vec> x(S, Vec(d));
  for (std::size_t t = 0; t < S; ++t)
    for (std::size_t i = 0; i < d; ++i) x[t][i] = w.tok_embeddings[tokens[t] * d + i];

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lw = w.layers[l];
    rec.x_in.push_back(x);
    std::vector<Vec> q(S), k(S), v(S);
    for (std::size_t t = 0; t < S; ++t) {
      const Vec xn = rmsnorm(x[t], lw.attn_norm);
      q[t] = matvec(lw.wq, xn, Hq * hd);
      k[t] = matvec(lw.wk, xn, Hkv * hd);
      v[t] = matvec(lw.wv, xn, Hkv * hd);
      rotate(q[t], Hq, t);
      rotate(k[t], Hkv, t);
    }
    std::vector<Vec> heads(S, Vec(Hq * hd, 0.0));
    std::vector<Vec> hnorm(S, Vec(Hq, 0.0));
    for (std::size_t h = 0; h < Hq; ++h) {
      const std::size_t kvh = h / (Hq / Hkv);
      for (std::size_t t = 0; t < S; ++t) {
        Vec sc(t + 1);
        double mx = -1e300;
        for (std::size_t u = 0; u <= t; ++u) {
          double s = 0.0;
          for (std::size_t i = 0; i < hd; ++i) s += q[t][h * hd + i] * k[u][kvh * hd + i];
          sc[u] = s / std::sqrt(double(hd));
          mx = std::max(mx, sc[u]);
        }
        double z = 0.0;
        for (auto& s : sc) z += (s = std::exp(s - mx));
        for (std::size_t i = 0; i < hd; ++i) {
          double o = 0.0;
          for (std::size_t u = 0; u <= t; ++u) o += sc[u] / z * v[u][kvh * hd + i];
          heads[t][h * hd + i] = o;
          hnorm[t][h] += o * o;
        }
        hnorm[t][h] = std::sqrt(hnorm[t][h]);
        if (!masks.head_dropped.empty() && masks.head_dropped[l][h]) {
          for (std::size_t i = 0; i < hd; ++i) heads[t][h * hd + i] = 0.0;
        }
      }
    }
    rec.head_norm.push_back(hnorm);
    for (std::size_t t = 0; t < S; ++t) {
      const Vec o = matvec(lw.wo, heads[t], d);
      for (std::size_t i = 0; i < d; ++i) x[t][i] += o[i];
    }
    rec.x_mid.push_back(x);
    std::vector<Vec> gs(S), us(S), hs(S);
    for (std::size_t t = 0; t < S; ++t) {
      const Vec xn = rmsnorm(x[t], lw.ffn_norm);
      gs[t] = matvec(lw.w_gate, xn, I);
      us[t] = matvec(lw.w_up, xn, I);
      hs[t].resize(I);
      for (std::size_t j = 0; j < I; ++j) {
        hs[t][j] = gs[t][j] / (1.0 + std::exp(-gs[t][j])) * us[t][j];
      }
      Vec masked = hs[t];
      if (!masks.neuron_dropped.empty()) {
        for (std::size_t j = 0; j < I; ++j)
          if (masks.neuron_dropped[l][j]) masked[j] = 0.0;
      }
      const Vec down = matvec(lw.w_down, masked, d);
      for (std::size_t i = 0; i < d; ++i) x[t][i] += down[i];
    }
    rec.gate.push_back(gs);
    rec.up.push_back(us);
    rec.inter.push_back(hs);
  }
  rec.x_final = x;
  const auto& out = w.output_matrix();
  for (std::size_t t = 0; t < S; ++t) {
    rec.logits.push_back(matvec(out, rmsnorm(x[t], w.final_norm), c.vocab_size));
  }
  return rec;
}

// Logits of a [batch, seq] grid, flattened like kanac::forward.
inline std::vector<double> reference_logits(const Checkpoint& ck, const TokenBatch& b, const Masks& masks = {}) {
  std::vector<double> out;
  for (std::size_t s = 0; s < b.batch; ++s) {
    std::vector<TokenId> seq(b.tokens.begin() + s * b.seq, b.tokens.begin() + (s + 1) * b.seq);
    for (const auto& row : reference_forward(ck, seq, masks).logits) out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

}  // namespace kanac::testing
